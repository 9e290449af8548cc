use alloc::vec;
use alloc::vec::Vec;

use super::network::DensePredictions;
use crate::fusion::{cell_index, Detection, DetectionSet};
use crate::gridnet::Tensor;
use crate::math;
use crate::NUM_CLASSES;

/// Per-cell training targets at head resolution `Gp`, batch of one.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    /// One-hot class targets `(1, K, Gp, Gp)`.
    pub cls: Tensor,
    /// Target boxes `(1, 4, Gp, Gp)` as `(x1, y1, x2, y2)`; zero off positives.
    pub boxes: Tensor,
    /// Objectness target, also the positive-cell mask `(1, 1, Gp, Gp)`.
    pub obj: Tensor,
    /// Occlusion target on positive cells `(1, 1, Gp, Gp)`.
    pub block: Tensor,
    /// Which ground-truth entry each positive cell carries, by input index.
    pub assigned: Vec<Option<usize>>,
}

impl Targets {
    pub fn grid_size(&self) -> usize {
        self.obj.height()
    }

    pub fn positives(&self) -> usize {
        self.obj.data().iter().filter(|&&v| v > 0.0).count()
    }

    /// Positive mask repeated over the class channels.
    pub fn cls_mask(&self) -> Tensor {
        let [b, _, h, w] = self.obj.shape();
        let mut m = Tensor::zeros([b, NUM_CLASSES, h, w]);
        let plane = h * w;
        for bi in 0..b {
            let src = &self.obj.data()[bi * plane..(bi + 1) * plane];
            for k in 0..NUM_CLASSES {
                let off = (bi * NUM_CLASSES + k) * plane;
                m.data_mut()[off..off + plane].copy_from_slice(src);
            }
        }
        m
    }

    /// Stacks per-scene targets into one batch.
    pub fn stack(items: &[&Targets]) -> Targets {
        let cat = |f: fn(&Targets) -> &Tensor| {
            let v: Vec<&Tensor> = items.iter().map(|t| f(t)).collect();
            Tensor::stack_batch(&v).expect("targets share a grid size")
        };
        Targets {
            cls: cat(|t| &t.cls),
            boxes: cat(|t| &t.boxes),
            obj: cat(|t| &t.obj),
            block: cat(|t| &t.block),
            assigned: items.iter().flat_map(|t| t.assigned.iter().copied()).collect(),
        }
    }
}

/// Deterministic winner between two ground truths landing in one cell:
/// larger area first, then a total order on the box and class so the result
/// does not depend on list order.
fn beats(a: &Detection, b: &Detection) -> bool {
    let key = |d: &Detection| (d.area(), d.x1, d.y1, d.x2, d.y2, d.class);
    let (ka, kb) = (key(a), key(b));
    ka.0.total_cmp(&kb.0)
        .then(ka.1.total_cmp(&kb.1))
        .then(ka.2.total_cmp(&kb.2))
        .then(ka.3.total_cmp(&kb.3))
        .then(ka.4.total_cmp(&kb.4))
        .then(ka.5.cmp(&kb.5))
        .is_gt()
}

/// Assigns every ground truth to the cell containing its box center. When
/// several land in one cell the larger box wins and the others stay
/// unassigned. All other cells are negatives.
pub fn assign_targets(gt: &DetectionSet, grid: usize) -> Targets {
    let mut owner: Vec<Option<usize>> = vec![None; grid * grid];
    for (n, d) in gt.iter().enumerate() {
        let (cx, cy) = d.center();
        let cell = cell_index(cx, grid) * grid + cell_index(cy, grid);
        match owner[cell] {
            Some(prev) if !beats(d, &gt.detections[prev]) => {}
            _ => owner[cell] = Some(n),
        }
    }
    let mut t = Targets {
        cls: Tensor::zeros([1, NUM_CLASSES, grid, grid]),
        boxes: Tensor::zeros([1, 4, grid, grid]),
        obj: Tensor::zeros([1, 1, grid, grid]),
        block: Tensor::zeros([1, 1, grid, grid]),
        assigned: owner.clone(),
    };
    for (cell, o) in owner.iter().enumerate() {
        let Some(n) = *o else { continue };
        let d = &gt.detections[n];
        let (i, j) = (cell / grid, cell % grid);
        t.cls.set(0, d.class, i, j, 1.0);
        for (c, v) in d.bbox().into_iter().enumerate() {
            t.boxes.set(0, c, i, j, v);
        }
        t.obj.set(0, 0, i, j, 1.0);
        t.block.set(0, 0, i, j, if d.block == Some(true) { 1.0 } else { 0.0 });
    }
    t
}

/// Ideal head outputs for `targets`: logits of magnitude `confidence_logit`
/// and exact box offsets. Decoding them reproduces the assigned boxes.
pub fn encode(targets: &Targets, confidence_logit: f64, with_block: bool) -> DensePredictions {
    let grid = targets.grid_size();
    let l = confidence_logit;
    let mut cls = Tensor::full([1, NUM_CLASSES, grid, grid], -l);
    let mut reg = Tensor::zeros([1, 4, grid, grid]);
    let mut obj = Tensor::full([1, 1, grid, grid], -l);
    let mut block = Tensor::full([1, 1, grid, grid], -l);
    let g = grid as f64;
    for i in 0..grid {
        for j in 0..grid {
            if targets.obj.get(0, 0, i, j) == 0.0 {
                continue;
            }
            obj.set(0, 0, i, j, l);
            for k in 0..NUM_CLASSES {
                if targets.cls.get(0, k, i, j) > 0.0 {
                    cls.set(0, k, i, j, l);
                }
            }
            let b = [0, 1, 2, 3].map(|c| targets.boxes.get(0, c, i, j));
            reg.set(0, 0, i, j, 0.5 * (b[0] + b[2]) * g - i as f64 - 0.5);
            reg.set(0, 1, i, j, 0.5 * (b[1] + b[3]) * g - j as f64 - 0.5);
            reg.set(0, 2, i, j, math::ln((b[2] - b[0]) * g));
            reg.set(0, 3, i, j, math::ln((b[3] - b[1]) * g));
            if targets.block.get(0, 0, i, j) > 0.0 {
                block.set(0, 0, i, j, l);
            }
        }
    }
    DensePredictions {
        cls,
        reg,
        obj,
        block: with_block.then_some(block),
    }
}
