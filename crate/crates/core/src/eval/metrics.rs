use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::iou;
use crate::fusion::DetectionSet;
use crate::NUM_CLASSES;

/// Recall sample points of the interpolated AP.
pub const AP_RECALL_POINTS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredMatch {
    /// Index into the ground-truth list.
    pub gt: Option<usize>,
    pub iou: f64,
    pub score: f64,
    pub class: usize,
}

/// Greedy assignment of predictions to ground truth, indexed like the inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub preds: Vec<PredMatch>,
    pub gt_matched: Vec<bool>,
}

impl MatchResult {
    pub fn true_positives(&self) -> usize {
        self.preds.iter().filter(|m| m.gt.is_some()).count()
    }
}

/// Predictions in descending score order (ties: earlier in the list first)
/// each claim the unmatched same-class ground truth with the highest IoU at
/// or above `iou_threshold` (ties: lower ground-truth index).
pub fn match_detections(preds: &DetectionSet, gts: &DetectionSet, iou_threshold: f64) -> MatchResult {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds.detections[b].score.total_cmp(&preds.detections[a].score).then(a.cmp(&b)));
    let mut gt_matched = vec![false; gts.len()];
    let mut out: Vec<PredMatch> = preds
        .iter()
        .map(|p| PredMatch {
            gt: None,
            iou: 0.0,
            score: p.score,
            class: p.class,
        })
        .collect();
    for n in order {
        let p = &preds.detections[n];
        let mut best: Option<(usize, f64)> = None;
        for (k, g) in gts.iter().enumerate() {
            if gt_matched[k] || g.class != p.class {
                continue;
            }
            let v = iou(&p.bbox(), &g.bbox());
            if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((k, v));
            }
        }
        if let Some((k, v)) = best {
            gt_matched[k] = true;
            out[n].gt = Some(k);
            out[n].iou = v;
        }
    }
    MatchResult {
        preds: out,
        gt_matched,
    }
}

/// Dataset-level accumulator for one class: scored predictions in
/// serialization order and the ground-truth count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClassTally {
    pub scored: Vec<(f64, bool)>,
    pub n_gt: usize,
}

impl ClassTally {
    /// Per-class tallies for one scene.
    pub fn from_match(m: &MatchResult, gts: &DetectionSet) -> [ClassTally; NUM_CLASSES] {
        let mut t: [ClassTally; NUM_CLASSES] = Default::default();
        for p in &m.preds {
            t[p.class].scored.push((p.score, p.gt.is_some()));
        }
        for g in gts.iter() {
            t[g.class].n_gt += 1;
        }
        t
    }

    pub fn merge(&mut self, other: &ClassTally) {
        self.scored.extend_from_slice(&other.scored);
        self.n_gt += other.n_gt;
    }
}

/// Precision / recall after each prediction in descending score order
/// (stable for ties).
fn pr_curve(t: &ClassTally) -> Vec<(f64, f64)> {
    let mut order: Vec<usize> = (0..t.scored.len()).collect();
    order.sort_by(|&a, &b| t.scored[b].0.total_cmp(&t.scored[a].0).then(a.cmp(&b)));
    let mut tp = 0usize;
    order
        .iter()
        .enumerate()
        .map(|(rank, &k)| {
            tp += t.scored[k].1 as usize;
            (tp as f64 / (rank + 1) as f64, tp as f64 / t.n_gt as f64)
        })
        .collect()
}

/// 40-point interpolated average precision: the mean over recall levels
/// `r = 1/40, ..., 1` of the best precision reached at recall `>= r`.
/// `None` when the class has no ground truth.
pub fn average_precision(t: &ClassTally) -> Option<f64> {
    if t.n_gt == 0 {
        return None;
    }
    let curve = pr_curve(t);
    // Suffix maximum of precision.
    let mut best = vec![0.0f64; curve.len() + 1];
    for k in (0..curve.len()).rev() {
        best[k] = best[k + 1].max(curve[k].0);
    }
    let mut sum = 0.0;
    let mut k = 0;
    for r in 1..=AP_RECALL_POINTS {
        let level = r as f64 / AP_RECALL_POINTS as f64;
        while k < curve.len() && curve[k].1 < level - 1e-12 {
            k += 1;
        }
        sum += best[k];
    }
    Some(sum / AP_RECALL_POINTS as f64)
}

/// Recall with every prediction kept (score threshold 0).
pub fn average_recall(t: &ClassTally) -> Option<f64> {
    if t.n_gt == 0 {
        return None;
    }
    Some(t.scored.iter().filter(|s| s.1).count() as f64 / t.n_gt as f64)
}

/// Fraction of matched predictions whose block flag equals the matched
/// ground truth's; `None` without matches. Missing flags count as "not
/// occluded".
pub fn block_accuracy(preds: &DetectionSet, gts: &DetectionSet, m: &MatchResult) -> Option<f64> {
    let (hits, total) = block_counts(preds, gts, m);
    (total > 0).then(|| hits as f64 / total as f64)
}

/// `(correct, matched)` block-flag counts, for dataset-level accumulation.
pub fn block_counts(preds: &DetectionSet, gts: &DetectionSet, m: &MatchResult) -> (usize, usize) {
    let mut hits = 0;
    let mut total = 0;
    for (p, pm) in preds.iter().zip(&m.preds) {
        if let Some(k) = pm.gt {
            total += 1;
            hits += (p.block.unwrap_or(false) == gts.detections[k].block.unwrap_or(false)) as usize;
        }
    }
    (hits, total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum View {
    #[serde(rename = "2D")]
    Image,
    #[serde(rename = "BEV")]
    Bev,
}

impl View {
    pub fn as_str(self) -> &'static str {
        match self {
            View::Image => "2D",
            View::Bev => "BEV",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub ap: Option<f64>,
    pub ar: Option<f64>,
}

/// Metrics of one model in one view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub view: View,
    pub classes: [ClassMetrics; NUM_CLASSES],
    pub block_acc: Option<f64>,
}

impl EvalReport {
    pub fn from_tallies(
        model: impl Into<String>,
        view: View,
        tallies: &[ClassTally; NUM_CLASSES],
        block: Option<(usize, usize)>,
    ) -> Self {
        let classes = core::array::from_fn(|k| ClassMetrics {
            ap: average_precision(&tallies[k]),
            ar: average_recall(&tallies[k]),
        });
        EvalReport {
            model: model.into(),
            view,
            classes,
            block_acc: block.and_then(|(h, t)| (t > 0).then(|| h as f64 / t as f64)),
        }
    }

    /// Unweighted mean AP over classes that have ground truth.
    pub fn map(&self) -> Option<f64> {
        mean(self.classes.iter().filter_map(|c| c.ap))
    }

    pub fn mar(&self) -> Option<f64> {
        mean(self.classes.iter().filter_map(|c| c.ar))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}
