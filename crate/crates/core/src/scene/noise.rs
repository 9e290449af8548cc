use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{Detection, DetectionSet};
use crate::NUM_CLASSES;

/// Confidence distribution for simulated detections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    Fixed(f64),
    Beta { alpha: f64, beta: f64 },
}

impl Confidence {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Confidence::Fixed(s) => (0.0..=1.0).contains(&s),
            Confidence::Beta { alpha, beta } => alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::contract("NoiseModel", "invalid confidence distribution"))
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Confidence::Fixed(s) => s,
            Confidence::Beta { alpha, beta } => Beta::new(alpha, beta).expect("validated").sample(rng),
        }
    }
}

/// Error model of the simulated first-stage detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    /// Standard deviation of center and size jitter as a fraction of the box
    /// size.
    pub jitter: f64,
    /// Probability that a visible object is missed.
    pub drop_prob: f64,
    /// Mean number of false positives per scene.
    pub fp_rate: f64,
    /// Side length range of false-positive boxes, normalized.
    pub fp_size: [f64; 2],
    /// Probability that a true detection reports a wrong class.
    pub class_flip: f64,
    pub tp_confidence: Confidence,
    pub fp_confidence: Confidence,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            jitter: 0.05,
            drop_prob: 0.05,
            fp_rate: 1.0,
            fp_size: [0.03, 0.15],
            class_flip: 0.0,
            tp_confidence: Confidence::Beta { alpha: 4.0, beta: 2.0 },
            fp_confidence: Confidence::Beta { alpha: 2.0, beta: 2.5 },
        }
    }
}

impl NoiseModel {
    /// A perfect detector: every input box, confidence 1.
    pub fn none() -> Self {
        NoiseModel {
            jitter: 0.0,
            drop_prob: 0.0,
            fp_rate: 0.0,
            fp_size: [0.05, 0.1],
            class_flip: 0.0,
            tp_confidence: Confidence::Fixed(1.0),
            fp_confidence: Confidence::Fixed(0.5),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        if !unit(self.drop_prob) || !unit(self.class_flip) {
            return Err(Error::contract("NoiseModel", "probabilities must lie in [0, 1]"));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) || !(self.fp_rate >= 0.0 && self.fp_rate.is_finite()) {
            return Err(Error::contract("NoiseModel", "jitter and fp_rate must be non-negative"));
        }
        if !(self.fp_size[0] > 0.0 && self.fp_size[1] >= self.fp_size[0] && self.fp_size[1] <= 1.0) {
            return Err(Error::contract("NoiseModel", "fp_size must be an ordered range in (0, 1]"));
        }
        self.tp_confidence.validate()?;
        self.fp_confidence.validate()
    }
}

/// Simulated first-stage output for one sensor: each ground-truth box
/// survives with probability `1 - drop_prob` and is jittered, then a
/// Poisson number of false positives is appended. Deterministic per seed.
pub fn simulate_first_stage(gt: &DetectionSet, noise: &NoiseModel, seed: u64) -> Result<DetectionSet> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out: Vec<Detection> = Vec::with_capacity(gt.len());
    for d in gt.iter() {
        if rng.random::<f64>() < noise.drop_prob {
            continue;
        }
        let (cx, cy) = d.center();
        let (w, h) = (d.width(), d.height());
        let (cx, cy, w, h) = if noise.jitter > 0.0 {
            let s = noise.jitter;
            (
                cx + s * w * unit.sample(&mut rng),
                cy + s * h * unit.sample(&mut rng),
                w * crate::math::exp(s * unit.sample(&mut rng)),
                h * crate::math::exp(s * unit.sample(&mut rng)),
            )
        } else {
            (cx, cy, w, h)
        };
        let class = if noise.class_flip > 0.0 && rng.random::<f64>() < noise.class_flip {
            (d.class + rng.random_range(1..NUM_CLASSES)) % NUM_CLASSES
        } else {
            d.class
        };
        let score = noise.tp_confidence.sample(&mut rng);
        let raw = Detection {
            x1: cx - 0.5 * w,
            y1: cy - 0.5 * h,
            x2: cx + 0.5 * w,
            y2: cy + 0.5 * h,
            score,
            class,
            block: None,
        };
        let kept = if noise.jitter > 0.0 { raw.clipped() } else { Some(Detection { x1: d.x1, y1: d.y1, x2: d.x2, y2: d.y2, ..raw }) };
        if let Some(k) = kept {
            out.push(k);
        }
    }
    if noise.fp_rate > 0.0 {
        let count = Poisson::new(noise.fp_rate).expect("positive rate").sample(&mut rng) as usize;
        for _ in 0..count {
            let w = rng.random_range(noise.fp_size[0]..=noise.fp_size[1]);
            let h = rng.random_range(noise.fp_size[0]..=noise.fp_size[1]);
            let x1 = rng.random_range(0.0..=1.0 - w);
            let y1 = rng.random_range(0.0..=1.0 - h);
            let class = rng.random_range(0..NUM_CLASSES);
            let score = noise.fp_confidence.sample(&mut rng);
            out.push(Detection {
                x1,
                y1,
                x2: x1 + w,
                y2: y1 + h,
                score,
                class,
                block: None,
            });
        }
    }
    Ok(DetectionSet::from_vec(gt.modality, out))
}
