//! Result features, global features and their fusion.
//!
//! A first-stage [`DetectionSet`] is rasterized into a `K`-channel grid
//! ([`rasterize_results`]); multi-scale backbone maps are upsampled and
//! reduced to one channel per scale ([`GlobalFeatureParams`]); the fusion
//! feature concatenates, in this order, the own-modality result feature, the
//! other modality's projected result feature and the own-modality global
//! feature ([`build_fusion`]).

mod assemble;
mod detection;
mod global;
mod raster;

pub use assemble::{build_fusion, FusionFeature, FusionLayout};
pub use detection::{Detection, DetectionSet, Modality};
pub use global::{extract_global, GlobalBranch, GlobalFeature, GlobalFeatureParams};
pub use raster::{cell_index, rasterize_results, RasterMode, ResultFeatureGrid};
