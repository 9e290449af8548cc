//! Result-feature fusion for multimodal 2D / BEV object detection.
//!
//! The crate is `no_std` (with `alloc`) and contains only pure computation:
//!
//! - [`gridnet`]: a small dense-tensor engine with reverse-mode gradients, the
//!   handful of layers the detectors need, and SGD / Adam.
//! - [`fusion`]: detections, result-feature rasterization, global-feature
//!   extraction and fusion-feature assembly.
//! - [`scene`]: a seeded synthetic world with camera / BEV calibration,
//!   occlusion, lidar dropout and a noise-model first-stage detector.
//! - [`detectors`]: first- and second-stage networks, target assignment,
//!   losses, decoding and NMS.
//! - [`eval`]: matching, AP/AR, block accuracy and the two non-learned
//!   fusion baselines.
//!
//! File formats, training orchestration and the CLI live in the `mmdr` crate.
//!
//! # Grid axis convention
//!
//! Every spatial grid in this crate (result features, rendered rasters,
//! global features, dense predictions) is stored as a `(batch, channel, x, y)`
//! tensor: the first spatial index runs along the horizontal axis (image
//! columns / BEV lateral axis) and the second along the vertical axis. This is
//! transposed relative to the usual row-major image layout.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod detectors;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod gridnet;
pub mod math;
pub mod scene;

pub use error::{Error, Result};

/// Number of object classes: pedestrian, vehicle, cyclist.
pub const NUM_CLASSES: usize = 3;
