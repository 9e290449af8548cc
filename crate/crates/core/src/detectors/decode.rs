use alloc::vec::Vec;

use super::network::DensePredictions;
use crate::eval::iou;
use crate::fusion::{Detection, DetectionSet, Modality};
use crate::gridnet::decode_cell;
use crate::math::sigmoid;
use crate::NUM_CLASSES;

/// Turns dense predictions (batch of one) into detections: each cell scores
/// `sigmoid(obj) * max_k sigmoid(cls_k)`; cells above `threshold` emit their
/// decoded, clipped box. Output is sorted by descending score, ties by cell
/// index.
pub fn decode(preds: &DensePredictions, threshold: f64, use_block: bool, modality: Modality) -> DetectionSet {
    let grid = preds.grid_size();
    let mut out: Vec<(f64, usize, Detection)> = Vec::new();
    for i in 0..grid {
        for j in 0..grid {
            let obj = sigmoid(preds.obj.get(0, 0, i, j));
            let (class, cls_p) = (0..NUM_CLASSES)
                .map(|k| (k, sigmoid(preds.cls.get(0, k, i, j))))
                .fold((0, f64::NEG_INFINITY), |best, c| if c.1 > best.1 { c } else { best });
            let score = obj * cls_p;
            if !(score > threshold) {
                continue;
            }
            let reg = [0, 1, 2, 3].map(|c| preds.reg.get(0, c, i, j));
            let (x1, y1, x2, y2) = decode_cell(reg, i, j, grid, grid);
            let block = match (&preds.block, use_block) {
                (Some(b), true) => Some(sigmoid(b.get(0, 0, i, j)) > 0.5),
                _ => None,
            };
            let raw = Detection {
                x1,
                y1,
                x2,
                y2,
                score: score.clamp(0.0, 1.0),
                class,
                block,
            };
            if let Some(d) = raw.clipped() {
                out.push((score, i * grid + j, d));
            }
        }
    }
    out.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    DetectionSet::from_vec(modality, out.into_iter().map(|(_, _, d)| d).collect())
}

/// Class-aware greedy non-maximum suppression: in descending score order
/// (stable for ties), keep a box unless a kept box of the same class overlaps
/// it with IoU above `iou_threshold`.
pub fn nms(dets: &DetectionSet, iou_threshold: f64) -> DetectionSet {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets.detections[b].score.total_cmp(&dets.detections[a].score).then(a.cmp(&b)));
    let mut kept: Vec<Detection> = Vec::new();
    for n in order {
        let d = dets.detections[n];
        if kept.iter().all(|k| k.class != d.class || iou(&k.bbox(), &d.bbox()) <= iou_threshold) {
            kept.push(d);
        }
    }
    DetectionSet::from_vec(dets.modality, kept)
}
