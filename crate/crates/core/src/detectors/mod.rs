//! First- and second-stage detectors, target assignment, losses, decoding
//! and NMS.
//!
//! Parameter namespaces: `first.image.*`, `first.pc.*` for the single-sensor
//! detectors, `second.image.*`, `second.pc.*` for the fused branches
//! (global-feature extractor and second-stage detector).

mod decode;
mod loss;
mod network;
mod targets;

pub use decode::{decode, nms};
pub use loss::{detection_loss, LossComponents, LossWeights};
pub use network::{
    BackboneWidths, DensePredictions, FirstStage, FirstStageOutput, FusionBranch, Head, HeadVars, SecondStage,
    HEAD_PRIOR_BIAS,
};
pub use targets::{assign_targets, encode, Targets};
