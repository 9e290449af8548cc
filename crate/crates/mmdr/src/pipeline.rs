//! Staged training and evaluation of the fused detector and its baselines.
//!
//! Stage one produces per-modality detections (trained networks or the
//! noise-model stub). Stage two trains, per modality, a fusion branch on
//! `[own rf | projected other rf | global feature]`, where the global
//! feature is learned on top of the frozen first-stage backbone maps. The
//! feature-level baseline is a two-stem first-stage network trained on both
//! rasters directly.

use std::path::Path;

use mmdr_core::detectors::{
    assign_targets, decode, detection_loss, nms, BackboneWidths, DensePredictions, FirstStage, FusionBranch,
    HeadVars, Targets,
};
use mmdr_core::eval::{block_counts, decision_level_baseline, match_detections, ClassTally, EvalReport, View};
use mmdr_core::fusion::{rasterize_results, DetectionSet, Modality};
use mmdr_core::gridnet::{Adam, Bound, Graph, Optimizer, ParamStore, Tensor, Var};
use mmdr_core::scene::{
    ground_truth_detections, ground_truth_full, project_detections, render_inputs, resample_bev_to_image,
    resample_image_to_bev, simulate_first_stage, NoiseModel, Scene, BEV_CHANNELS, IMAGE_CHANNELS,
};
use mmdr_core::NUM_CLASSES;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::dataset::{load_split, mix, Split};
use crate::error::Result;

pub const MODALITIES: [Modality; 2] = [Modality::Image, Modality::PointCloud];

/// Row labels of the comparison table.
pub const IMAGE_ONLY: &str = "image-only";
pub const PC_ONLY: &str = "pc-only";
pub const DECISION_LEVEL: &str = "decision-level";
pub const FEATURE_LEVEL: &str = "feature-level";
pub const MMDR: &str = "MMDR";
pub const ORACLE: &str = "oracle";

fn idx(m: Modality) -> usize {
    match m {
        Modality::Image => 0,
        Modality::PointCloud => 1,
    }
}

fn tag(m: Modality) -> &'static str {
    match m {
        Modality::Image => "image",
        Modality::PointCloud => "pc",
    }
}

pub fn view(m: Modality) -> View {
    match m {
        Modality::Image => View::Image,
        Modality::PointCloud => View::Bev,
    }
}

/// A scene with its rendered rasters and full ground truth per plane.
#[derive(Debug, Clone)]
pub struct Sample {
    pub scene: Scene,
    /// Image raster `(1, 3, G, G)` and BEV raster `(1, 2, G, G)`.
    pub rasters: [Tensor; 2],
    /// Every object, with occlusion as `block`, in image and BEV planes.
    pub gt: [DetectionSet; 2],
}

impl Sample {
    pub fn new(scene: Scene, grid: usize) -> Self {
        let (image, bev) = render_inputs(&scene, grid);
        let gt = MODALITIES.map(|m| ground_truth_full(&scene, m));
        Sample {
            scene,
            rasters: [image, bev],
            gt,
        }
    }
}

/// Training allocates and drops many tensors of a few megabytes per step.
/// glibc maps each of those fresh from the kernel and the page faults cost
/// about as much as the arithmetic, so keep them on the heap instead.
fn keep_heap_mapped() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    {
        static ONCE: std::sync::Once = std::sync::Once::new();
        ONCE.call_once(|| unsafe {
            libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 30);
            libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
        });
    }
}

/// Network inputs for one scene plus its supervision.
#[derive(Debug, Clone)]
pub struct Example {
    pub inputs: Vec<Tensor>,
    pub targets: Targets,
    pub gt: DetectionSet,
}

/// Every network of the run in one parameter store. Each network draws its
/// initialization from its own seeded stream, so adding or skipping one
/// never changes another.
#[derive(Debug, Clone)]
pub struct Models {
    pub store: ParamStore,
    pub first: [FirstStage; 2],
    pub second: [FusionBranch; 2],
    pub feature: [FirstStage; 2],
}

fn two<T>(v: Vec<T>) -> [T; 2] {
    <[T; 2]>::try_from(v).ok().expect("one entry per modality")
}

const IN_CHANNELS: [usize; 2] = [IMAGE_CHANNELS, BEV_CHANNELS];

impl Models {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let mut store = ParamStore::new();
        let widths = BackboneWidths(cfg.model.backbone);
        let rng = |k: u64| ChaCha8Rng::seed_from_u64(mix(cfg.seeds.model_init, k));
        let mut first = Vec::new();
        let mut second = Vec::new();
        let mut feature = Vec::new();
        for m in MODALITIES {
            let i = idx(m);
            let own = IN_CHANNELS[i];
            let other = IN_CHANNELS[1 - i];
            let f = FirstStage::new(&mut store, &format!("first.{}", tag(m)), &[own], widths, &mut rng(10 + i as u64))?;
            let s = FusionBranch::new(
                &mut store,
                &format!("second.{}", tag(m)),
                cfg.grid,
                &f,
                cfg.model.second_width,
                m == Modality::Image,
                &mut rng(20 + i as u64),
            )?;
            let b = FirstStage::new(
                &mut store,
                &format!("feature.{}", tag(m)),
                &[own, other],
                widths,
                &mut rng(30 + i as u64),
            )?;
            first.push(f);
            second.push(s);
            feature.push(b);
        }
        Ok(Models {
            store,
            first: two(first),
            second: two(second),
            feature: two(feature),
        })
    }
}

#[derive(Clone, Copy)]
pub enum Net<'a> {
    First(&'a FirstStage),
    Branch(&'a FusionBranch),
}

impl Net<'_> {
    fn prefix(&self) -> &str {
        match self {
            Net::First(f) => &f.prefix,
            Net::Branch(b) => &b.prefix,
        }
    }

    /// `xs` are the example inputs in order: rasters for a first-stage
    /// network, `[own_rf, other_rf, ms0, ms1, ms2]` for a fusion branch.
    fn forward(&self, g: &mut Graph, p: &Bound, xs: &[Var]) -> Result<HeadVars> {
        Ok(match self {
            Net::First(f) => f.forward(g, p, xs)?.head,
            Net::Branch(b) => b.forward(g, p, xs[0], xs[1], &xs[2..])?,
        })
    }
}

fn stacked_inputs(g: &mut Graph, examples: &[&Example]) -> Result<Vec<Var>> {
    let n = examples[0].inputs.len();
    (0..n)
        .map(|k| {
            let parts: Vec<&Tensor> = examples.iter().map(|e| &e.inputs[k]).collect();
            Ok(g.input(Tensor::stack_batch(&parts)?))
        })
        .collect()
}

/// Dense predictions for every example, without gradient tracking.
pub fn infer(net: Net<'_>, store: &ParamStore, examples: &[Example], batch: usize) -> Result<Vec<DensePredictions>> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(batch.max(1)) {
        let refs: Vec<&Example> = chunk.iter().collect();
        let mut g = Graph::new();
        let p = store.bind_prefix(&mut g, net.prefix(), false);
        let xs = stacked_inputs(&mut g, &refs)?;
        let preds = net.forward(&mut g, &p, &xs)?.values(&g);
        out.extend((0..chunk.len()).map(|b| preds.item(b)));
    }
    Ok(out)
}

/// Thresholded, NMS-filtered detections for every example.
pub fn predict(
    net: Net<'_>,
    store: &ParamStore,
    examples: &[Example],
    modality: Modality,
    cfg: &RunConfig,
) -> Result<Vec<DetectionSet>> {
    let use_block = matches!(net, Net::Branch(b) if b.detector.with_block());
    let preds = infer(net, store, examples, cfg.optim.batch_size)?;
    Ok(preds
        .par_iter()
        .map(|p| nms(&decode(p, cfg.eval.score_threshold, use_block, modality), cfg.eval.nms_iou))
        .collect())
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub stage: String,
    pub epoch: usize,
    pub loss: f64,
    pub val_map: Option<f64>,
}

/// Replaces the noisy inputs of the training examples before an epoch.
pub type Redraw<'a> = dyn Fn(usize, &mut [Example]) -> Result<()> + Sync + 'a;

/// Adam on the parameters under the network's prefix. After every epoch the
/// validation set, when present, is scored and the best epoch's parameters
/// are kept. `redraw`, when given, refreshes the training inputs at the
/// start of every epoch.
#[allow(clippy::too_many_arguments)]
pub fn train(
    net: Net<'_>,
    store: &mut ParamStore,
    train_set: &mut [Example],
    redraw: Option<&Redraw<'_>>,
    val_set: &[Example],
    modality: Modality,
    epochs: usize,
    cfg: &RunConfig,
) -> Result<Vec<LogRow>> {
    let prefix = net.prefix().to_string();
    let ids = store.ids_with_prefix(&prefix);
    let mut opt = Adam::new(cfg.optim.adam());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let stream = prefix.bytes().fold(cfg.seeds.training_order, |h, b| mix(h, b as u64));
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let mut log = Vec::with_capacity(epochs);
    let mut best: Option<(f64, Vec<Tensor>)> = None;
    for epoch in 1..=epochs {
        if let Some(redraw) = redraw {
            redraw(epoch, train_set)?;
        }
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.optim.batch_size) {
            let refs: Vec<&Example> = batch.iter().map(|&i| &train_set[i]).collect();
            let targets = Targets::stack(&refs.iter().map(|e| &e.targets).collect::<Vec<_>>());
            let mut g = Graph::new();
            let p = store.bind(&mut g, &[prefix.as_str()]);
            let xs = stacked_inputs(&mut g, &refs)?;
            let head = net.forward(&mut g, &p, &xs)?;
            let (loss, _) = detection_loss(&mut g, &head, &targets, &cfg.loss)?;
            total += g.value(loss).item() * batch.len() as f64;
            g.backward(loss)?;
            store.zero_grad();
            store.accumulate_grads(&g, &p);
            opt.step(store, &ids);
        }
        let loss = total / train_set.len().max(1) as f64;
        let val_map = if val_set.is_empty() {
            None
        } else {
            let preds = predict(net, store, val_set, modality, cfg)?;
            let gts: Vec<DetectionSet> = val_set.iter().map(|e| e.gt.clone()).collect();
            let m = evaluate("val", view(modality), &preds, &gts, cfg.eval.iou_threshold, false).map();
            Some(m.unwrap_or(0.0))
        };
        log::info!("{prefix} epoch {epoch}: loss {loss:.5} val mAP {val_map:?}");
        if let Some(v) = val_map {
            if best.as_ref().is_none_or(|(b, _)| v > *b) {
                best = Some((v, ids.iter().map(|&id| store.value(id).clone()).collect()));
            }
        }
        log.push(LogRow {
            stage: prefix.clone(),
            epoch,
            loss,
            val_map,
        });
    }
    if let Some((v, values)) = best {
        log::info!("{prefix}: keeping parameters with val mAP {v:.4}");
        for (&id, t) in ids.iter().zip(values) {
            store.set_value(id, t)?;
        }
    }
    Ok(log)
}

/// Dataset-level metrics of one model in one view. Matching runs per scene
/// in parallel; the reduction runs in scene order.
pub fn evaluate(
    model: &str,
    view: View,
    preds: &[DetectionSet],
    gts: &[DetectionSet],
    iou_threshold: f64,
    with_block: bool,
) -> EvalReport {
    let per_scene: Vec<_> = preds
        .par_iter()
        .zip(gts)
        .map(|(p, g)| {
            let m = match_detections(p, g, iou_threshold);
            (ClassTally::from_match(&m, g), block_counts(p, g, &m))
        })
        .collect();
    let mut tallies: [ClassTally; NUM_CLASSES] = Default::default();
    let (mut hits, mut total) = (0, 0);
    for (t, (h, n)) in &per_scene {
        for (acc, x) in tallies.iter_mut().zip(t) {
            acc.merge(x);
        }
        hits += h;
        total += n;
    }
    EvalReport::from_tallies(model, view, &tallies, with_block.then_some((hits, total)))
}

fn noise(cfg: &RunConfig, m: Modality) -> &NoiseModel {
    match m {
        Modality::Image => &cfg.noise.image,
        Modality::PointCloud => &cfg.noise.pc,
    }
}

/// Noise-model first stage: what the sensor can see, perturbed. Draw 0 is
/// the one every evaluation sees; training redraws use the epoch number.
pub fn stub_detections(sample: &Sample, m: Modality, noise: &NoiseModel, draw: u64) -> Result<DetectionSet> {
    let mut seed = mix(sample.scene.seed, 100 + idx(m) as u64);
    if draw > 0 {
        seed = mix(seed, draw);
    }
    Ok(simulate_first_stage(&ground_truth_detections(&sample.scene, m), noise, seed)?)
}

/// Own and projected-other result features of branch `i`.
fn result_features(sample: &Sample, dets: &[DetectionSet; 2], i: usize, cfg: &RunConfig) -> Result<[Tensor; 2]> {
    let other = project_detections(&dets[1 - i], &sample.scene.calibration)?;
    let rf = |set: &DetectionSet| -> Result<Tensor> {
        Ok(rasterize_results(set.iter(), cfg.grid, NUM_CLASSES, cfg.raster_mode)?.into_tensor())
    };
    Ok([rf(&dets[i])?, rf(&other)?])
}

/// Datasets and networks of one run.
pub struct Pipeline {
    pub cfg: RunConfig,
    pub models: Models,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Stage-one outputs for every sample of a split: `[image, pc]`.
pub type FirstDetections = Vec<[DetectionSet; 2]>;

impl Pipeline {
    pub fn new(cfg: &RunConfig, data_root: Option<&Path>) -> Result<Self> {
        cfg.validate()?;
        keep_heap_mapped();
        let samples = |split| -> Result<Vec<Sample>> {
            let scenes = load_split(cfg, split, data_root)?;
            Ok(scenes.into_par_iter().map(|s| Sample::new(s, cfg.grid)).collect())
        };
        Ok(Pipeline {
            cfg: cfg.clone(),
            models: Models::new(cfg)?,
            train: samples(Split::Train)?,
            val: samples(Split::Val)?,
            test: samples(Split::Test)?,
        })
    }

    pub fn samples(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn first_examples(&self, split: Split, m: Modality) -> Vec<Example> {
        let head = FirstStage::head_grid(self.cfg.grid);
        self.samples(split)
            .par_iter()
            .map(|s| {
                let visible = ground_truth_detections(&s.scene, m);
                Example {
                    inputs: vec![s.rasters[idx(m)].clone()],
                    targets: assign_targets(&visible, head),
                    gt: visible,
                }
            })
            .collect()
    }

    /// Trains both single-modality first stages on what each sensor can
    /// see. A no-op under the stub.
    pub fn train_first(&mut self) -> Result<Vec<LogRow>> {
        if self.cfg.stub_first_stage {
            log::info!("stub first stage: nothing to train");
            return Ok(Vec::new());
        }
        let mut log = Vec::new();
        for m in MODALITIES {
            let mut tr = self.first_examples(Split::Train, m);
            let va = self.first_examples(Split::Val, m);
            let net = Net::First(&self.models.first[idx(m)]);
            let epochs = self.cfg.optim.first_epochs;
            log.extend(train(net, &mut self.models.store, &mut tr, None, &va, m, epochs, &self.cfg)?);
        }
        Ok(log)
    }

    pub fn first_detections(&self, split: Split) -> Result<FirstDetections> {
        let samples = self.samples(split);
        if self.cfg.stub_first_stage {
            return samples
                .par_iter()
                .map(|s| {
                    let [a, b] = MODALITIES.map(|m| stub_detections(s, m, noise(&self.cfg, m), 0));
                    Ok([a?, b?])
                })
                .collect();
        }
        let mut per_modality = Vec::new();
        for m in MODALITIES {
            let ex = self.first_examples(split, m);
            per_modality.push(predict(Net::First(&self.models.first[idx(m)]), &self.models.store, &ex, m, &self.cfg)?);
        }
        let pc = per_modality.pop().expect("pc");
        let image = per_modality.pop().expect("image");
        Ok(image.into_iter().zip(pc).map(|(a, b)| [a, b]).collect())
    }

    /// Fusion-branch examples: result features of both sensors in the
    /// branch's plane plus the frozen backbone's multi-scale maps.
    pub fn second_examples(&self, split: Split, dets: &FirstDetections, m: Modality) -> Result<Vec<Example>> {
        let i = idx(m);
        let grid = self.cfg.grid;
        let backbone = &self.models.first[i];
        self.samples(split)
            .par_iter()
            .zip(dets)
            .map(|(s, d)| {
                let [own, other] = result_features(s, d, i, &self.cfg)?;
                let (_, ms) = backbone.infer(&self.models.store, &[&s.rasters[i]])?;
                let [m0, m1, m2] = ms;
                Ok(Example {
                    inputs: vec![own, other, m0, m1, m2],
                    targets: assign_targets(&s.gt[i], grid),
                    gt: s.gt[i].clone(),
                })
            })
            .collect()
    }

    /// Feature-level baseline examples: the branch's own raster and the
    /// other raster resampled into its plane.
    pub fn feature_examples(&self, split: Split, m: Modality) -> Result<Vec<Example>> {
        let i = idx(m);
        let head = FirstStage::head_grid(self.cfg.grid);
        self.samples(split)
            .par_iter()
            .map(|s| {
                let calib = &s.scene.calibration;
                let other = match m {
                    Modality::Image => resample_bev_to_image(&s.rasters[1], calib)?,
                    Modality::PointCloud => resample_image_to_bev(&s.rasters[0], calib)?,
                };
                Ok(Example {
                    inputs: vec![s.rasters[i].clone(), other],
                    targets: assign_targets(&s.gt[i], head),
                    gt: s.gt[i].clone(),
                })
            })
            .collect()
    }

    /// Trains the fusion branch of one modality on the given stage-one
    /// outputs.
    pub fn train_branch(&mut self, m: Modality, dets_tr: &FirstDetections, dets_va: &FirstDetections) -> Result<Vec<LogRow>> {
        let i = idx(m);
        let mut tr = self.second_examples(Split::Train, dets_tr, m)?;
        let va = self.second_examples(Split::Val, dets_va, m)?;
        let net = Net::Branch(&self.models.second[i]);
        let (cfg, samples) = (&self.cfg, &self.train);
        // The stub is a noise model, so every epoch can see a fresh draw
        // of it. Trained first stages are deterministic.
        let redraw = move |epoch: usize, ex: &mut [Example]| -> Result<()> {
            ex.par_iter_mut().zip(samples).try_for_each(|(e, s)| {
                let [a, b] = MODALITIES.map(|m| stub_detections(s, m, noise(cfg, m), epoch as u64));
                let [own, other] = result_features(s, &[a?, b?], i, cfg)?;
                e.inputs[0] = own;
                e.inputs[1] = other;
                Ok(())
            })
        };
        let redraw: Option<&Redraw<'_>> = if cfg.stub_first_stage { Some(&redraw) } else { None };
        train(net, &mut self.models.store, &mut tr, redraw, &va, m, cfg.optim.second_epochs, cfg)
    }

    /// Trains the fusion branches and the feature-level baselines with the
    /// first stages frozen.
    pub fn train_second(&mut self) -> Result<Vec<LogRow>> {
        let dets_tr = self.first_detections(Split::Train)?;
        let dets_va = self.first_detections(Split::Val)?;
        let mut log = Vec::new();
        for m in MODALITIES {
            log.extend(self.train_branch(m, &dets_tr, &dets_va)?);
        }
        for m in MODALITIES {
            let i = idx(m);
            let mut tr = self.feature_examples(Split::Train, m)?;
            let va = self.feature_examples(Split::Val, m)?;
            let net = Net::First(&self.models.feature[i]);
            let epochs = self.cfg.optim.feature_epochs;
            log.extend(train(net, &mut self.models.store, &mut tr, None, &va, m, epochs, &self.cfg)?);
        }
        Ok(log)
    }

    /// The comparison table on a split: single-modality first stages, the
    /// decision-level and feature-level baselines and the fused model, each
    /// in the planes it produces.
    pub fn evaluate(&self, split: Split) -> Result<Vec<EvalReport>> {
        let cfg = &self.cfg;
        let samples = self.samples(split);
        let dets = self.first_detections(split)?;
        let thr = cfg.eval.iou_threshold;
        let gts = |m: Modality| samples.iter().map(|s| s.gt[idx(m)].clone()).collect::<Vec<_>>();
        let mut reports = Vec::new();
        for (name, m) in [(IMAGE_ONLY, Modality::Image), (PC_ONLY, Modality::PointCloud)] {
            let preds: Vec<DetectionSet> = dets.iter().map(|d| d[idx(m)].clone()).collect();
            reports.push(evaluate(name, view(m), &preds, &gts(m), thr, false));
        }
        for m in MODALITIES {
            let preds = samples
                .par_iter()
                .zip(&dets)
                .map(|(s, d)| Ok(decision_level_baseline(&d[0], &d[1], &s.scene.calibration, cfg.eval.nms_iou, m)?))
                .collect::<Result<Vec<_>>>()?;
            reports.push(evaluate(DECISION_LEVEL, view(m), &preds, &gts(m), thr, false));
        }
        for m in MODALITIES {
            let ex = self.feature_examples(split, m)?;
            let preds = predict(Net::First(&self.models.feature[idx(m)]), &self.models.store, &ex, m, cfg)?;
            reports.push(evaluate(FEATURE_LEVEL, view(m), &preds, &gts(m), thr, false));
        }
        for m in MODALITIES {
            let ex = self.second_examples(split, &dets, m)?;
            let preds = predict(Net::Branch(&self.models.second[idx(m)]), &self.models.store, &ex, m, cfg)?;
            reports.push(evaluate(MMDR, view(m), &preds, &gts(m), thr, m == Modality::Image));
        }
        Ok(reports)
    }

    /// Upper bound: a noise-free stub that sees every object, in both
    /// planes. Checks the evaluation path end to end.
    pub fn oracle(&self, split: Split) -> Result<Vec<EvalReport>> {
        let samples = self.samples(split);
        let mut reports = Vec::new();
        for m in MODALITIES {
            let gts: Vec<DetectionSet> = samples.iter().map(|s| s.gt[idx(m)].clone()).collect();
            let preds = samples
                .par_iter()
                .map(|s| Ok(simulate_first_stage(&s.gt[idx(m)], &NoiseModel::none(), s.scene.seed)?))
                .collect::<Result<Vec<_>>>()?;
            reports.push(evaluate(ORACLE, view(m), &preds, &gts, self.cfg.eval.iou_threshold, false));
        }
        Ok(reports)
    }

    pub fn save_checkpoints(&self, dir: &Path, stage: Stage) -> Result<()> {
        for (file, prefixes) in stage.files() {
            checkpoint::save(&self.models.store, prefixes, &dir.join(file))?;
        }
        Ok(())
    }

    pub fn load_checkpoints(&mut self, dir: &Path, stage: Stage) -> Result<()> {
        for (file, _) in stage.files() {
            let n = checkpoint::load_into(&mut self.models.store, &dir.join(file))?;
            log::info!("loaded {n} tensors from {file}");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    First,
    Second,
}

impl Stage {
    fn files(self) -> &'static [(&'static str, &'static [&'static str])] {
        match self {
            Stage::First => &[("first.ckpt", &["first."])],
            Stage::Second => &[("second.ckpt", &["second."]), ("feature.ckpt", &["feature."])],
        }
    }
}
