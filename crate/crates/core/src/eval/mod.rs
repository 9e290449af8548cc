//! Matching, AP / AR, block accuracy and the decision-level fusion baseline.

mod baseline;
mod metrics;

pub use baseline::decision_level_baseline;
pub use metrics::{
    average_precision, average_recall, block_accuracy, block_counts, match_detections, ClassMetrics, ClassTally, EvalReport,
    MatchResult, PredMatch, View, AP_RECALL_POINTS,
};

/// Intersection over union of `(x1, y1, x2, y2)` boxes. A zero-area box has
/// IoU 0 with everything.
pub fn iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let area = |r: &[f64; 4]| (r[2] - r[0]).max(0.0) * (r[3] - r[1]).max(0.0);
    let (aa, ab) = (area(a), area(b));
    if aa <= 0.0 || ab <= 0.0 {
        log::warn!("IoU with a zero-area box: {a:?} vs {b:?}");
        return 0.0;
    }
    let iw = a[2].min(b[2]) - a[0].max(b[0]);
    let ih = a[3].min(b[3]) - a[1].max(b[1]);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    inter / (aa + ab - inter)
}
