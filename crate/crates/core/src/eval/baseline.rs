use alloc::vec::Vec;

use super::iou;
use crate::error::Result;
use crate::fusion::{Detection, DetectionSet, Modality};
use crate::scene::{project_detections, Calibration};

/// Score-level late fusion: brings both detection sets into `target`'s plane
/// (projecting the other one through `calib`), takes their union and runs
/// class-aware greedy NMS. A surviving box that suppresses a box from the
/// other sensor absorbs it with score `1 - (1 - s1)(1 - s2)`; each survivor
/// absorbs at most one such box.
pub fn decision_level_baseline(
    det_img: &DetectionSet,
    det_pc: &DetectionSet,
    calib: &Calibration,
    nms_iou: f64,
    target: Modality,
) -> Result<DetectionSet> {
    let (own, other) = match target {
        Modality::Image => (det_img.clone(), project_detections(det_pc, calib)?),
        Modality::PointCloud => (det_pc.clone(), project_detections(det_img, calib)?),
    };
    let mut all: Vec<(Detection, bool)> = own.iter().map(|d| (*d, false)).chain(other.iter().map(|d| (*d, true))).collect();
    // Stable: ties keep own-sensor boxes first.
    all.sort_by(|a, b| b.0.score.total_cmp(&a.0.score));
    let mut kept: Vec<(Detection, bool, bool)> = Vec::new();
    for (d, from_other) in all {
        let hit = kept
            .iter_mut()
            .find(|(k, _, _)| k.class == d.class && iou(&k.bbox(), &d.bbox()) > nms_iou);
        match hit {
            None => kept.push((d, from_other, false)),
            Some((k, k_other, merged)) => {
                if *k_other != from_other && !*merged {
                    k.score = 1.0 - (1.0 - k.score) * (1.0 - d.score);
                    *merged = true;
                }
            }
        }
    }
    let mut out: Vec<Detection> = kept.into_iter().map(|(d, _, _)| d).collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(DetectionSet::from_vec(target, out))
}
