//! One function per CLI subcommand. Each writes into a run directory laid
//! out as `config.json`, `checkpoints/`, `metrics.csv`, `report.txt` and
//! `train_log.csv`.

use std::fs;
use std::path::{Path, PathBuf};

use mmdr_core::eval::EvalReport;
use mmdr_core::fusion::{rasterize_results, DetectionSet, Modality, RasterMode};
use mmdr_core::scene::{project_detections, Calibration};
use mmdr_core::NUM_CLASSES;
use serde::Serialize;

use crate::config::RunConfig;
use crate::dataset::{self, Split};
use crate::error::{Error, Result};
use crate::kitti;
use crate::pipeline::{stub_detections, LogRow, Pipeline, Sample, Stage};
use crate::report;
use crate::svg::{self, Panel, CLASS_COLORS};

/// Paths inside one run directory.
#[derive(Debug, Clone)]
pub struct RunDir(pub PathBuf);

impl RunDir {
    pub fn config(&self) -> PathBuf {
        self.0.join("config.json")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.0.join("checkpoints")
    }

    pub fn metrics(&self) -> PathBuf {
        self.0.join("metrics.csv")
    }

    pub fn report(&self) -> PathBuf {
        self.0.join("report.txt")
    }

    pub fn train_log(&self, stage: &str) -> PathBuf {
        self.0.join(format!("train_log_{stage}.csv"))
    }

    fn echo_config(&self, cfg: &RunConfig) -> Result<()> {
        write(&self.config(), &cfg.to_json())
    }
}

pub fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn with_pool<T: Send>(cfg: &RunConfig, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(f)
}

pub fn cmd_gen_data(cfg: &RunConfig, out: &Path) -> Result<usize> {
    cfg.validate()?;
    with_pool(cfg, || dataset::write_dataset(cfg, out))
}

fn write_reports(run: &RunDir, cfg: &RunConfig, reports: &[EvalReport], title: &str) -> Result<()> {
    write(&run.metrics(), &report::to_csv(reports))?;
    let title = format!("{title} ({}, {} test scenes, G={})", cfg.name, cfg.splits.test, cfg.grid);
    write(&run.report(), &report::to_table(reports, &title))
}

/// Trains one stage. The second stage needs the first-stage checkpoint
/// unless the stub detector stands in for it.
pub fn cmd_train(cfg: &RunConfig, stage: Stage, run: &RunDir, data: Option<&Path>) -> Result<Vec<LogRow>> {
    cfg.validate()?;
    run.echo_config(cfg)?;
    with_pool(cfg, || {
        let mut p = Pipeline::new(cfg, data)?;
        let (log, name) = match stage {
            Stage::First => (p.train_first()?, "first"),
            Stage::Second => {
                if !cfg.stub_first_stage {
                    p.load_checkpoints(&run.checkpoints(), Stage::First)?;
                }
                (p.train_second()?, "second")
            }
        };
        p.save_checkpoints(&run.checkpoints(), stage)?;
        write(&run.train_log(name), &report::log_to_csv(&log))?;
        Ok(log)
    })
}

/// Evaluates trained checkpoints on the test split. With `oracle` set, the
/// noise-free all-seeing stub is evaluated instead and no checkpoint is
/// read.
pub fn cmd_eval(cfg: &RunConfig, run: &RunDir, data: Option<&Path>, oracle: bool) -> Result<Vec<EvalReport>> {
    cfg.validate()?;
    run.echo_config(cfg)?;
    with_pool(cfg, || {
        let mut p = Pipeline::new(cfg, data)?;
        let reports = if oracle {
            p.oracle(Split::Test)?
        } else {
            if !cfg.stub_first_stage {
                p.load_checkpoints(&run.checkpoints(), Stage::First)?;
            }
            p.load_checkpoints(&run.checkpoints(), Stage::Second)?;
            p.evaluate(Split::Test)?
        };
        write_reports(run, cfg, &reports, "Evaluation")?;
        Ok(reports)
    })
}

/// Trains every stage and writes the fusion-scheme comparison.
pub fn cmd_ablate(cfg: &RunConfig, run: &RunDir, data: Option<&Path>) -> Result<Vec<EvalReport>> {
    cfg.validate()?;
    run.echo_config(cfg)?;
    with_pool(cfg, || {
        let mut p = Pipeline::new(cfg, data)?;
        let mut log = p.train_first()?;
        p.save_checkpoints(&run.checkpoints(), Stage::First)?;
        log.extend(p.train_second()?);
        p.save_checkpoints(&run.checkpoints(), Stage::Second)?;
        write(&run.train_log("all"), &report::log_to_csv(&log))?;
        let reports = p.evaluate(Split::Test)?;
        write_reports(run, cfg, &reports, "Comparison of fusion schemes")?;
        Ok(reports)
    })
}

fn rf_tensor(set: &DetectionSet, grid: usize, mode: RasterMode) -> Result<mmdr_core::gridnet::Tensor> {
    Ok(rasterize_results(set.iter(), grid, NUM_CLASSES, mode)?.into_tensor())
}

/// Renders a scene file: both rasters, the stub detections' result features
/// in each plane and the cross-projected ones, ground truth overlaid.
pub fn cmd_viz(cfg: &RunConfig, input: &Path, output: &Path) -> Result<()> {
    cfg.validate()?;
    let scene = dataset::read_scene(input)?;
    let s = Sample::new(scene, cfg.grid);
    let img = stub_detections(&s, Modality::Image, &cfg.noise.image, 0)?;
    let pc = stub_detections(&s, Modality::PointCloud, &cfg.noise.pc, 0)?;
    let calib = &s.scene.calibration;
    let pc_in_img = project_detections(&pc, calib)?;
    let img_in_bev = project_detections(&img, calib)?;
    let mode = cfg.raster_mode;
    let grids = [
        rf_tensor(&img, cfg.grid, mode)?,
        rf_tensor(&pc_in_img, cfg.grid, mode)?,
        rf_tensor(&pc, cfg.grid, mode)?,
        rf_tensor(&img_in_bev, cfg.grid, mode)?,
    ];
    let rgb = vec![[255, 0, 0], [0, 255, 0], [0, 0, 255]];
    let classes = CLASS_COLORS.to_vec();
    let panels = vec![
        Panel {
            title: "image raster".into(),
            grid: &s.rasters[0],
            colors: rgb,
            boxes: Some(&s.gt[0]),
        },
        Panel {
            title: "image rf".into(),
            grid: &grids[0],
            colors: classes.clone(),
            boxes: Some(&s.gt[0]),
        },
        Panel {
            title: "pc rf -> image".into(),
            grid: &grids[1],
            colors: classes.clone(),
            boxes: Some(&s.gt[0]),
        },
        Panel {
            title: "BEV raster".into(),
            grid: &s.rasters[1],
            colors: vec![[200, 200, 200], [0, 0, 0]],
            boxes: Some(&s.gt[1]),
        },
        Panel {
            title: "pc rf".into(),
            grid: &grids[2],
            colors: classes.clone(),
            boxes: Some(&s.gt[1]),
        },
        Panel {
            title: "image rf -> BEV".into(),
            grid: &grids[3],
            colors: classes,
            boxes: Some(&s.gt[1]),
        },
    ];
    write(output, &svg::render(&panels))
}

#[derive(Debug, Clone, Serialize)]
struct RfDump {
    grid: usize,
    classes: usize,
    /// Layout `(class, x, y)`, row-major.
    image: Vec<f64>,
    pc: Vec<f64>,
}

/// Summary of an offline fusion run.
#[derive(Debug, Clone, PartialEq)]
pub struct FuseOutput {
    pub fused: usize,
    pub ignored: usize,
}

/// Offline decision-level fusion of two KITTI label files already in the
/// image plane (camera detections and projected lidar detections). Writes
/// `fused.txt`, `result_features.json` and `result_features.svg` to `out`.
pub fn cmd_fuse_offline(
    image_labels: &Path,
    pc_labels: &Path,
    out: &Path,
    size: (f64, f64),
    grid: usize,
    mode: RasterMode,
    nms_iou: f64,
) -> Result<FuseOutput> {
    let read = |p: &Path| -> Result<(DetectionSet, usize)> {
        let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let recs = kitti::parse_kitti_labels(&text).map_err(|e| match e {
            Error::Parse { line, detail } => Error::Parse {
                line,
                detail: format!("{}: {detail}", p.display()),
            },
            other => other,
        })?;
        kitti::kitti_to_detections(&recs, size.0, size.1)
    };
    if grid == 0 || !(nms_iou > 0.0 && nms_iou <= 1.0) {
        return Err(Error::Config("grid must be positive and nms_iou in (0, 1]".into()));
    }
    let (img, ign_a) = read(image_labels)?;
    let (mut pc, ign_b) = read(pc_labels)?;
    // Already in the image plane: the identity calibration leaves boxes as
    // they are while the fusion treats them as the other sensor's.
    pc.modality = Modality::PointCloud;
    let calib = Calibration::affine_identity();
    let fused = mmdr_core::eval::decision_level_baseline(&img, &pc, &calib, nms_iou, Modality::Image)?;
    write(
        &out.join("fused.txt"),
        &kitti::write_kitti_labels(&kitti::detections_to_kitti(&fused, size.0, size.1)),
    )?;
    let rf_img = rf_tensor(&img, grid, mode)?;
    let rf_pc = rf_tensor(&pc, grid, mode)?;
    let dump = RfDump {
        grid,
        classes: NUM_CLASSES,
        image: rf_img.data().to_vec(),
        pc: rf_pc.data().to_vec(),
    };
    write(
        &out.join("result_features.json"),
        &serde_json::to_string(&dump).expect("tensor dump serializes"),
    )?;
    let panels = [
        Panel {
            title: "image rf".into(),
            grid: &rf_img,
            colors: CLASS_COLORS.to_vec(),
            boxes: Some(&img),
        },
        Panel {
            title: "pc rf".into(),
            grid: &rf_pc,
            colors: CLASS_COLORS.to_vec(),
            boxes: Some(&pc),
        },
    ];
    write(&out.join("result_features.svg"), &svg::render(&panels))?;
    Ok(FuseOutput {
        fused: fused.len(),
        ignored: ign_a + ign_b,
    })
}
