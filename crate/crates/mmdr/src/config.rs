//! Run configuration: one JSON document, unknown keys rejected, validated
//! before anything is computed.

use std::path::Path;

use mmdr_core::detectors::LossWeights;
use mmdr_core::fusion::RasterMode;
use mmdr_core::gridnet::AdamConfig;
use mmdr_core::scene::{NoiseModel, SceneConfig};
use mmdr_core::NUM_CLASSES;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Run directory name under the output root.
    pub name: String,
    /// Second-stage grid size `G`; first-stage heads run at `G/2`.
    pub grid: usize,
    /// Class count `K`; fixed by the label set.
    pub classes: usize,
    /// Scale count `S` of the global feature; fixed by the backbone.
    pub scales: usize,
    pub splits: Splits,
    pub scene: SceneConfig,
    pub noise: NoiseConfig,
    pub loss: LossWeights,
    pub optim: OptimConfig,
    pub model: ModelConfig,
    pub eval: EvalConfig,
    pub seeds: Seeds,
    pub raster_mode: RasterMode,
    /// Replace trained first stages with the noise-model detector.
    pub stub_first_stage: bool,
    /// Worker threads for generation and evaluation; 0 uses every core.
    pub workers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Splits {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub image: NoiseModel,
    pub pc: NoiseModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub first_epochs: usize,
    pub second_epochs: usize,
    pub feature_epochs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Channel widths of the first-stage backbone at `G`, `G/2`, `G/4`.
    pub backbone: [usize; 3],
    /// Base width of the second-stage encoder-decoder.
    pub second_width: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    /// Decode threshold on `obj * cls`.
    pub score_threshold: f64,
    pub nms_iou: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub data: u64,
    pub model_init: u64,
    pub training_order: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            name: "default".into(),
            grid: 64,
            classes: NUM_CLASSES,
            scales: 3,
            splits: Splits::default(),
            scene: SceneConfig::default(),
            noise: NoiseConfig::default(),
            loss: LossWeights::default(),
            optim: OptimConfig::default(),
            model: ModelConfig::default(),
            eval: EvalConfig::default(),
            seeds: Seeds::default(),
            raster_mode: RasterMode::default(),
            stub_first_stage: false,
            workers: 0,
        }
    }
}

impl Default for Splits {
    fn default() -> Self {
        Splits {
            train: 200,
            val: 50,
            test: 50,
        }
    }
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 8,
            first_epochs: 20,
            second_epochs: 30,
            feature_epochs: 30,
        }
    }
}

impl OptimConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: [8, 16, 32],
            second_width: 8,
        }
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_threshold: 0.5,
            score_threshold: 0.05,
            nms_iou: 0.5,
        }
    }
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            data: 7,
            model_init: 11,
            training_order: 13,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Points every seed at `seed`; the streams stay independent because
    /// each consumer mixes in its own tag.
    pub fn set_seed(&mut self, seed: u64) {
        self.seeds = Seeds {
            data: seed,
            model_init: seed,
            training_order: seed,
        };
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            return bad(format!("name {:?} is not a plain directory name", self.name));
        }
        if self.grid < 8 || !self.grid.is_multiple_of(8) {
            return bad(format!("grid must be a multiple of 8 and at least 8, got {}", self.grid));
        }
        if self.classes != NUM_CLASSES {
            return bad(format!("classes must be {NUM_CLASSES}, got {}", self.classes));
        }
        if self.scales != 3 {
            return bad(format!("scales must be 3, got {}", self.scales));
        }
        if self.splits.train == 0 || self.splits.test == 0 {
            return bad("train and test splits must be non-empty".into());
        }
        let o = &self.optim;
        if !(o.lr > 0.0 && o.lr.is_finite()) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return bad("optimizer needs lr > 0 and betas in [0, 1)".into());
        }
        if !(o.eps > 0.0) || o.batch_size == 0 {
            return bad("optimizer needs eps > 0 and batch_size >= 1".into());
        }
        if self.model.backbone.contains(&0) || self.model.second_width == 0 {
            return bad("model widths must be positive".into());
        }
        let e = &self.eval;
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        if !unit(e.iou_threshold) || !unit(e.nms_iou) || !(0.0..1.0).contains(&e.score_threshold) {
            return bad("eval thresholds out of range".into());
        }
        let core = |r: mmdr_core::Result<()>, what: &str| r.map_err(|err| Error::Config(format!("{what}: {err}")));
        core(self.scene.validate(), "scene")?;
        core(self.noise.image.validate(), "noise.image")?;
        core(self.noise.pc.validate(), "noise.pc")?;
        core(self.loss.validate(), "loss")?;
        Ok(())
    }
}
