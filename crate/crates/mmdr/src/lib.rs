//! File formats, staged training, benchmark driver and command
//! implementations around `mmdr-core`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod kitti;
pub mod pipeline;
pub mod report;
pub mod svg;

pub use error::{Error, Result};
