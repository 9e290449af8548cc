//! Seeded synthetic multimodal world.
//!
//! Objects live on a flat ground plane in front of a camera. Each object is
//! independently hidden from the image (occluded by a nearer object) and from
//! the lidar (distance-dependent dropout), so the two sensors miss different
//! objects.

mod calib;
mod noise;
mod project;
mod render;

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use calib::{BevBox, BevExtent, Calibration, Direction, Projection};
pub use noise::{simulate_first_stage, Confidence, NoiseModel};
pub use project::{project_detections, resample_bev_to_image, resample_image_to_bev};
pub use render::{render_inputs, IMAGE_CHANNELS, BEV_CHANNELS};

use crate::error::{Error, Result};
use crate::fusion::{Detection, DetectionSet, Modality};
use crate::NUM_CLASSES;

/// Nominal object dimensions per class, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassPrior {
    pub width: f64,
    pub length: f64,
    pub height: f64,
}

/// Pedestrian, vehicle, cyclist.
pub const CLASS_PRIORS: [ClassPrior; NUM_CLASSES] = [
    ClassPrior {
        width: 0.7,
        length: 0.7,
        height: 1.75,
    },
    ClassPrior {
        width: 1.85,
        length: 4.3,
        height: 1.55,
    },
    ClassPrior {
        width: 0.7,
        length: 1.8,
        height: 1.7,
    },
];

/// Fraction of an object's image box a single nearer box must cover for the
/// object to count as occluded.
pub const OCCLUSION_COVERAGE: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub min_objects: usize,
    pub max_objects: usize,
    /// Relative class frequencies.
    pub class_mix: [f64; NUM_CLASSES],
    /// Relative spread of object dimensions around the class prior.
    pub size_jitter: f64,
    /// Closest allowed near-face depth, meters.
    pub min_depth: f64,
    /// Probability of placing a new object behind an existing one along its
    /// camera ray.
    pub stack_prob: f64,
    /// Gap range between a stacked object and the one in front, meters.
    pub stack_gap: [f64; 2],
    /// Lidar dropout probability at `min_depth` and at the far BEV edge;
    /// linear in between.
    pub lidar_drop: [f64; 2],
    /// Allowed BEV overlap as a fraction of the smaller footprint.
    pub overlap_tolerance: f64,
    /// Horizontal image margin an object's near face must respect.
    pub view_margin: f64,
    pub max_retries: usize,
    pub calibration: Calibration,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            min_objects: 3,
            max_objects: 6,
            class_mix: [0.3, 0.5, 0.2],
            size_jitter: 0.1,
            min_depth: 3.0,
            stack_prob: 0.35,
            stack_gap: [0.5, 3.0],
            lidar_drop: [0.1, 0.45],
            overlap_tolerance: 0.0,
            view_margin: 0.01,
            max_retries: 500,
            calibration: Calibration::pinhole(),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |d: &str| Err(Error::contract("SceneConfig", d));
        if self.min_objects > self.max_objects {
            return bad("min_objects > max_objects");
        }
        if self.class_mix.iter().any(|&w| !(w >= 0.0 && w.is_finite())) || self.class_mix.iter().sum::<f64>() <= 0.0 {
            return bad("class_mix must be non-negative with a positive sum");
        }
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        if !unit(self.stack_prob) || !self.lidar_drop.iter().all(|&p| unit(p)) || !unit(self.overlap_tolerance) {
            return bad("probabilities must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.size_jitter) {
            return bad("size_jitter must lie in [0, 1)");
        }
        if !(self.stack_gap[0] >= 0.0 && self.stack_gap[1] >= self.stack_gap[0]) {
            return bad("stack_gap must be an ordered non-negative range");
        }
        if !(0.0..0.5).contains(&self.view_margin) {
            return bad("view_margin must lie in [0, 0.5)");
        }
        if self.min_depth <= 0.0 || self.min_depth >= self.calibration.extent.z_max {
            return bad("min_depth must be positive and inside the BEV extent");
        }
        self.calibration.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub class: usize,
    pub bev: BevBox,
    pub height: f64,
    pub occluded_in_image: bool,
    pub visible_to_lidar: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub seed: u64,
    pub calibration: Calibration,
    pub objects: Vec<SceneObject>,
}

impl Scene {
    /// Image box of object `i`, clipped to the view.
    pub fn image_box(&self, i: usize) -> Option<[f64; 4]> {
        let o = &self.objects[i];
        self.calibration.bev_to_image(&o.bev, o.height).ok().flatten()
    }

    /// Normalized BEV box of object `i`.
    pub fn bev_box(&self, i: usize) -> Option<[f64; 4]> {
        self.calibration.extent.normalize(&self.objects[i].bev)
    }
}

fn sample_class<R: Rng + ?Sized>(rng: &mut R, mix: &[f64; NUM_CLASSES]) -> usize {
    let total: f64 = mix.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, &w) in mix.iter().enumerate() {
        if u < w {
            return k;
        }
        u -= w;
    }
    NUM_CLASSES - 1
}

fn jittered<R: Rng + ?Sized>(rng: &mut R, v: f64, rel: f64) -> f64 {
    if rel == 0.0 {
        v
    } else {
        v * rng.random_range(1.0 - rel..=1.0 + rel)
    }
}

fn placement_ok(cfg: &SceneConfig, b: &BevBox, placed: &[SceneObject]) -> bool {
    let e = &cfg.calibration.extent;
    let inside = b.cx - 0.5 * b.w >= e.x_min && b.cx + 0.5 * b.w <= e.x_max && b.near() >= cfg.min_depth && b.far() <= e.z_max;
    inside
        && cfg.calibration.in_horizontal_view(b, cfg.view_margin)
        && placed.iter().all(|o| {
            let inter = o.bev.intersection(b);
            inter <= cfg.overlap_tolerance * o.bev.area().min(b.area()) && (cfg.overlap_tolerance > 0.0 || inter == 0.0)
        })
}

fn free_placement<R: Rng + ?Sized>(rng: &mut R, cfg: &SceneConfig, w: f64, l: f64) -> Option<BevBox> {
    let e = &cfg.calibration.extent;
    let near_hi = e.z_max - l;
    if near_hi <= cfg.min_depth {
        return None;
    }
    let near = rng.random_range(cfg.min_depth..near_hi);
    let half = match cfg.calibration.projection {
        Projection::PinholeGroundPlane { focal, cu, .. } => {
            let view = (cu.min(1.0 - cu) - cfg.view_margin) * near / focal.abs();
            view.min(e.x_max.min(-e.x_min))
        }
        Projection::Affine { .. } => e.x_max.min(-e.x_min),
    } - 0.5 * w;
    if half <= 0.0 {
        return None;
    }
    Some(BevBox {
        cx: rng.random_range(-half..=half),
        cz: near + 0.5 * l,
        w,
        l,
    })
}

fn stacked_placement<R: Rng + ?Sized>(rng: &mut R, cfg: &SceneConfig, front: &BevBox, w: f64, l: f64) -> BevBox {
    let gap = rng.random_range(cfg.stack_gap[0]..=cfg.stack_gap[1]);
    let near = front.far() + gap;
    let ratio = near / front.near();
    let wobble = rng.random_range(-0.3..=0.3) * front.w;
    BevBox {
        cx: (front.cx + wobble) * ratio,
        cz: near + 0.5 * l,
        w,
        l,
    }
}

fn intersection_2d(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let ix = a[2].min(b[2]) - a[0].max(b[0]);
    let iy = a[3].min(b[3]) - a[1].max(b[1]);
    ix.max(0.0) * iy.max(0.0)
}

/// Marks every object whose image box is covered to at least
/// [`OCCLUSION_COVERAGE`] by the box of a single object with a nearer near
/// face.
pub fn compute_occlusion(calib: &Calibration, objects: &mut [SceneObject]) -> Result<()> {
    let boxes: Vec<Option<[f64; 4]>> = objects
        .iter()
        .map(|o| calib.bev_to_image(&o.bev, o.height))
        .collect::<Result<_>>()?;
    let flags: Vec<bool> = (0..objects.len())
        .map(|a| {
            let Some(ba) = boxes[a] else { return false };
            let area = (ba[2] - ba[0]) * (ba[3] - ba[1]);
            area > 0.0
                && (0..objects.len()).any(|b| {
                    b != a
                        && objects[b].bev.near() < objects[a].bev.near()
                        && boxes[b].is_some_and(|bb| intersection_2d(&ba, &bb) >= OCCLUSION_COVERAGE * area)
                })
        })
        .collect();
    for (o, f) in objects.iter_mut().zip(flags) {
        o.occluded_in_image = f;
    }
    Ok(())
}

/// Lidar dropout probability for an object whose near face is at `depth`.
pub fn lidar_drop_prob(cfg: &SceneConfig, depth: f64) -> f64 {
    let span = cfg.calibration.extent.z_max - cfg.min_depth;
    let t = ((depth - cfg.min_depth) / span).clamp(0.0, 1.0);
    cfg.lidar_drop[0] + t * (cfg.lidar_drop[1] - cfg.lidar_drop[0])
}

/// Samples a scene; identical `(config, seed)` always yields the same scene.
pub fn sample_scene(cfg: &SceneConfig, seed: u64) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(cfg.min_objects..=cfg.max_objects);
    let mut objects: Vec<SceneObject> = Vec::with_capacity(n);
    for idx in 0..n {
        let class = sample_class(&mut rng, &cfg.class_mix);
        let prior = CLASS_PRIORS[class];
        let w = jittered(&mut rng, prior.width, cfg.size_jitter);
        let l = jittered(&mut rng, prior.length, cfg.size_jitter);
        let height = jittered(&mut rng, prior.height, cfg.size_jitter);
        let stack = !objects.is_empty() && rng.random::<f64>() < cfg.stack_prob;
        let mut placed = None;
        if stack {
            for _ in 0..cfg.max_retries.min(20) {
                let front = objects[rng.random_range(0..objects.len())].bev;
                let b = stacked_placement(&mut rng, cfg, &front, w, l);
                if placement_ok(cfg, &b, &objects) {
                    placed = Some(b);
                    break;
                }
            }
        }
        if placed.is_none() {
            for _ in 0..cfg.max_retries {
                if let Some(b) = free_placement(&mut rng, cfg, w, l) {
                    if placement_ok(cfg, &b, &objects) {
                        placed = Some(b);
                        break;
                    }
                }
            }
        }
        let bev = placed.ok_or_else(|| {
            Error::Generation(format!(
                "seed {seed}: no room for object {idx} (class {class}) after {} tries",
                cfg.max_retries
            ))
        })?;
        let visible_to_lidar = rng.random::<f64>() >= lidar_drop_prob(cfg, bev.near());
        objects.push(SceneObject {
            class,
            bev,
            height,
            occluded_in_image: false,
            visible_to_lidar,
        });
    }
    compute_occlusion(&cfg.calibration, &mut objects)?;
    Ok(Scene {
        seed,
        calibration: cfg.calibration,
        objects,
    })
}

/// Detections the given sensor can see, all with confidence 1: image boxes
/// of non-occluded objects, or normalized BEV boxes of lidar-visible objects.
pub fn ground_truth_detections(scene: &Scene, modality: Modality) -> DetectionSet {
    let keep = |o: &SceneObject| match modality {
        Modality::Image => !o.occluded_in_image,
        Modality::PointCloud => o.visible_to_lidar,
    };
    gt_boxes(scene, modality, keep)
}

/// Every object in the given plane with its occlusion flag as `block`; the
/// supervision and evaluation target.
pub fn ground_truth_full(scene: &Scene, modality: Modality) -> DetectionSet {
    gt_boxes(scene, modality, |_| true)
}

fn gt_boxes(scene: &Scene, modality: Modality, keep: impl Fn(&SceneObject) -> bool) -> DetectionSet {
    let mut out = DetectionSet::new(modality);
    for (i, o) in scene.objects.iter().enumerate() {
        if !keep(o) {
            continue;
        }
        let b = match modality {
            Modality::Image => scene.image_box(i),
            Modality::PointCloud => scene.bev_box(i),
        };
        if let Some(b) = b {
            if let Ok(d) = Detection::new(b[0], b[1], b[2], b[3], 1.0, o.class) {
                out.push(d.with_block(o.occluded_in_image));
            }
        }
    }
    out
}
