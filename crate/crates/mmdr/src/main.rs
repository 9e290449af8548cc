use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mmdr::commands::{self, RunDir};
use mmdr::config::RunConfig;
use mmdr::pipeline::Stage;
use mmdr_core::fusion::RasterMode;

/// Result-feature-level camera/lidar fusion detection on synthetic scenes.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults apply to omitted fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides all three seeds (data, model init, training order).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory. Defaults to `runs/<name>` (`runs/<name>/dataset`
    /// for gen-data).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Use the noise-model detector instead of trained first stages.
    #[arg(long)]
    stub_first_stage: bool,
    /// Read scenes from a gen-data directory instead of regenerating them.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    First,
    Second,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Overwrite,
    Max,
}

#[derive(Subcommand)]
enum Command {
    /// Write the train/val/test scene files.
    GenData(Common),
    /// Train the first stages or, with them frozen, the second stages and
    /// the feature-level baselines.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum)]
        stage: StageArg,
    },
    /// Evaluate saved checkpoints on the test split.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Evaluate the noise-free stub that sees every object instead.
        #[arg(long)]
        oracle: bool,
    },
    /// Train everything and compare the fusion schemes.
    Ablate(RunArgs),
    /// Render a scene file's rasters and result features as SVG.
    Viz {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse two KITTI label files given in image pixels.
    FuseOffline {
        #[arg(long)]
        image: PathBuf,
        /// Lidar detections already projected into the image.
        #[arg(long)]
        pc: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1242.0)]
        width: f64,
        #[arg(long, default_value_t = 375.0)]
        height: f64,
        #[arg(long, default_value_t = 32)]
        grid: usize,
        #[arg(long, value_enum, default_value_t = ModeArg::Overwrite)]
        mode: ModeArg,
        #[arg(long, default_value_t = 0.5)]
        nms_iou: f64,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    Ok(cfg)
}

fn run_setup(args: &RunArgs) -> Result<(RunConfig, RunDir)> {
    let mut cfg = load_config(args.common.config.as_deref(), args.common.seed)?;
    cfg.stub_first_stage |= args.stub_first_stage;
    cfg.validate()?;
    let dir = args.common.out.clone().unwrap_or_else(|| Path::new("runs").join(&cfg.name));
    Ok((cfg, RunDir(dir)))
}

fn print_reports(reports: &[mmdr_core::eval::EvalReport]) {
    print!("{}", mmdr::report::to_table(reports, "Results"));
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::GenData(c) => {
            let cfg = load_config(c.config.as_deref(), c.seed)?;
            let out = c.out.unwrap_or_else(|| Path::new("runs").join(&cfg.name).join("dataset"));
            let n = commands::cmd_gen_data(&cfg, &out).context("gen-data failed")?;
            println!("wrote {n} scenes to {}", out.display());
        }
        Command::Train { run, stage } => {
            let (cfg, dir) = run_setup(&run)?;
            let stage = match stage {
                StageArg::First => Stage::First,
                StageArg::Second => Stage::Second,
            };
            let log = commands::cmd_train(&cfg, stage, &dir, run.data.as_deref()).context("train failed")?;
            if let Some(last) = log.last() {
                println!("final loss {:.5}, val mAP {:?}", last.loss, last.val_map);
            }
            println!("checkpoints in {}", dir.checkpoints().display());
        }
        Command::Eval { run, oracle } => {
            let (cfg, dir) = run_setup(&run)?;
            let reports = commands::cmd_eval(&cfg, &dir, run.data.as_deref(), oracle).context("eval failed")?;
            print_reports(&reports);
        }
        Command::Ablate(run) => {
            let (cfg, dir) = run_setup(&run)?;
            let reports = commands::cmd_ablate(&cfg, &dir, run.data.as_deref()).context("ablate failed")?;
            print_reports(&reports);
        }
        Command::Viz { config, input, out } => {
            let cfg = load_config(config.as_deref(), None)?;
            commands::cmd_viz(&cfg, &input, &out).context("viz failed")?;
            println!("wrote {}", out.display());
        }
        Command::FuseOffline {
            image,
            pc,
            out,
            width,
            height,
            grid,
            mode,
            nms_iou,
        } => {
            let mode = match mode {
                ModeArg::Overwrite => RasterMode::Overwrite,
                ModeArg::Max => RasterMode::Max,
            };
            let r = commands::cmd_fuse_offline(&image, &pc, &out, (width, height), grid, mode, nms_iou)
                .context("fuse-offline failed")?;
            println!("{} fused detections ({} records ignored) in {}", r.fused, r.ignored, out.display());
        }
    }
    Ok(())
}
