use serde::{Deserialize, Serialize};

use super::detection::Detection;
use crate::error::{Error, Result};
use crate::gridnet::Tensor;
use crate::math;

/// How overlapping detections of one class combine in a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RasterMode {
    /// Later detections overwrite earlier ones (list order matters).
    #[default]
    Overwrite,
    /// Each cell keeps the highest covering confidence.
    Max,
}

/// `K`-channel grid of first-stage confidences, stored `(1, K, G, G)` with
/// the first spatial index along x.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultFeatureGrid(Tensor);

impl ResultFeatureGrid {
    pub fn zeros(grid: usize, classes: usize) -> Self {
        ResultFeatureGrid(Tensor::zeros([1, classes, grid, grid]))
    }

    pub fn grid_size(&self) -> usize {
        self.0.height()
    }

    pub fn classes(&self) -> usize {
        self.0.channels()
    }

    /// Value at x-cell `i`, y-cell `j`, class `k`.
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.0.get(0, k, i, j)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }
}

/// Grid cell holding normalized coordinate `c`: `min(floor(c * G), G - 1)`.
#[inline]
pub fn cell_index(c: f64, grid: usize) -> usize {
    let i = math::floor(c * grid as f64);
    if i <= 0.0 {
        0
    } else {
        (i as usize).min(grid - 1)
    }
}

/// Rasterizes detections into a result feature: for each detection in list
/// order, every cell in the inclusive rectangle
/// `[idx(x1)..=idx(x2)] x [idx(y1)..=idx(y2)]` of channel `cls` is set to
/// its confidence (or raised to it in [`RasterMode::Max`]).
pub fn rasterize_results<'a, I>(dets: I, grid: usize, classes: usize, mode: RasterMode) -> Result<ResultFeatureGrid>
where
    I: IntoIterator<Item = &'a Detection>,
{
    if grid == 0 {
        return Err(Error::contract("rasterize_results", "grid size must be positive"));
    }
    let mut out = Tensor::zeros([1, classes, grid, grid]);
    for d in dets {
        d.validate()?;
        if d.class >= classes {
            return Err(Error::InvalidDetection(alloc::format!(
                "class {} outside 0..{classes}",
                d.class
            )));
        }
        let (i0, i1) = (cell_index(d.x1, grid), cell_index(d.x2, grid));
        let (j0, j1) = (cell_index(d.y1, grid), cell_index(d.y2, grid));
        let data = out.data_mut();
        for i in i0..=i1 {
            let row = (d.class * grid + i) * grid;
            let cells = &mut data[row + j0..=row + j1];
            match mode {
                RasterMode::Overwrite => cells.iter_mut().for_each(|c| *c = d.score),
                RasterMode::Max => cells.iter_mut().for_each(|c| *c = c.max(d.score)),
            }
        }
    }
    Ok(ResultFeatureGrid(out))
}
