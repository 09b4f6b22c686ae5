//! Contest scoring: a detection is correct when its centroid lies within a
//! fixed radius (32 px at native resolution) of an unmatched ground-truth
//! centroid. Precision, recall and F-measure are computed from pooled counts.

use serde::{Deserialize, Serialize};

use crate::geometry::score_order;

pub const CONTEST_RADIUS: f64 = 32.0;

/// Published F-measures shown next to a run for context: (label, value).
pub const PUBLISHED_F_MEASURES: [(&str, f64); 4] = [
    ("two-stream detector (published)", 0.507),
    ("contest winner", 0.356),
    ("deep learning baseline A", 0.437),
    ("deep learning baseline B", 0.442),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredPoint {
    pub x: f64,
    pub y: f64,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchOptions {
    pub radius: f64,
    /// Whether a distance exactly equal to `radius` counts as a hit.
    pub inclusive: bool,
}

impl Default for MatchOptions {
    fn default() -> Self {
        Self {
            radius: CONTEST_RADIUS,
            inclusive: true,
        }
    }
}

impl MatchOptions {
    fn hits(&self, d2: f64) -> bool {
        let r2 = self.radius * self.radius;
        if self.inclusive {
            d2 <= r2
        } else {
            d2 < r2
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub detection: usize,
    pub ground_truth: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub pairs: Vec<MatchPair>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// Greedy matching: detections in descending score order each take the
/// nearest unmatched ground truth within the radius (ties to the lower index).
pub fn match_detections(
    detections: &[ScoredPoint],
    ground_truth: &[(f64, f64)],
    options: MatchOptions,
) -> MatchResult {
    let scores: Vec<f64> = detections.iter().map(|d| d.score).collect();
    let mut taken = vec![false; ground_truth.len()];
    let mut pairs = Vec::new();
    for di in score_order(&scores) {
        let d = &detections[di];
        let mut best: Option<(usize, f64)> = None;
        for (gi, &(gx, gy)) in ground_truth.iter().enumerate() {
            if taken[gi] {
                continue;
            }
            let d2 = (d.x - gx).powi(2) + (d.y - gy).powi(2);
            if options.hits(d2) && best.is_none_or(|(_, b)| d2 < b) {
                best = Some((gi, d2));
            }
        }
        if let Some((gi, d2)) = best {
            taken[gi] = true;
            pairs.push(MatchPair {
                detection: di,
                ground_truth: gi,
                distance: d2.sqrt(),
            });
        }
    }
    let tp = pairs.len();
    MatchResult {
        pairs,
        tp,
        fp: detections.len() - tp,
        fn_: ground_truth.len() - tp,
    }
}

/// Largest number of disjoint detection/ground-truth pairs within the radius,
/// by exhaustive search over ground-truth subsets. `None` above 10 x 10.
pub fn exhaustive_max_matching(
    detections: &[ScoredPoint],
    ground_truth: &[(f64, f64)],
    options: MatchOptions,
) -> Option<usize> {
    if detections.len() > 10 || ground_truth.len() > 10 {
        return None;
    }
    let adj: Vec<Vec<bool>> = detections
        .iter()
        .map(|d| {
            ground_truth
                .iter()
                .map(|&(gx, gy)| options.hits((d.x - gx).powi(2) + (d.y - gy).powi(2)))
                .collect()
        })
        .collect();
    // best[mask] = max matching of the first k detections using gts in `mask`
    let full = 1usize << ground_truth.len();
    let mut best = vec![0usize; full];
    for row in &adj {
        let prev = best.clone();
        for mask in 0..full {
            let mut v = prev[mask];
            for (g, &ok) in row.iter().enumerate() {
                if ok && mask & (1 << g) != 0 {
                    v = v.max(prev[mask & !(1 << g)] + 1);
                }
            }
            best[mask] = v;
        }
    }
    Some(best[full - 1])
}

pub fn precision(tp: usize, fp: usize) -> f64 {
    if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    }
}

pub fn recall(tp: usize, fn_: usize) -> f64 {
    if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    }
}

pub fn f_measure(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub frame_id: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Exhaustive maximum matching, for frames with at most 10 x 10 candidates.
    pub optimal_tp: Option<usize>,
    pub matches: Vec<MatchPair>,
}

pub fn evaluate_frame(
    frame_id: &str,
    detections: &[ScoredPoint],
    ground_truth: &[(f64, f64)],
    options: MatchOptions,
) -> FrameReport {
    let m = match_detections(detections, ground_truth, options);
    FrameReport {
        frame_id: frame_id.to_string(),
        tp: m.tp,
        fp: m.fp,
        fn_: m.fn_,
        optimal_tp: exhaustive_max_matching(detections, ground_truth, options),
        matches: m.pairs,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    /// Frames where greedy matching found fewer pairs than the exhaustive optimum.
    pub greedy_below_optimal: Vec<String>,
    pub frames: Vec<FrameReport>,
}

/// Micro-averaged report: counts are pooled over frames before computing metrics.
pub fn aggregate(frames: Vec<FrameReport>) -> EvalReport {
    let tp = frames.iter().map(|f| f.tp).sum();
    let fp = frames.iter().map(|f| f.fp).sum();
    let fn_ = frames.iter().map(|f| f.fn_).sum();
    let p = precision(tp, fp);
    let r = recall(tp, fn_);
    EvalReport {
        tp,
        fp,
        fn_,
        precision: p,
        recall: r,
        f_measure: f_measure(p, r),
        greedy_below_optimal: frames
            .iter()
            .filter(|f| f.optimal_tp.is_some_and(|o| o > f.tp))
            .map(|f| f.frame_id.clone())
            .collect(),
        frames,
    }
}

/// Plain-text table of this run's F-measure beside the published figures.
pub fn compare_to_published(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<34} {:>9}\n", "method", "F-measure"));
    out.push_str(&format!("{:<34} {:>9.3}\n", "this run", report.f_measure));
    for (label, value) in PUBLISHED_F_MEASURES {
        out.push_str(&format!("{label:<34} {value:>9.3}\n"));
    }
    out.push_str(&format!(
        "\nTP {}  FP {}  FN {}  precision {:.3}  recall {:.3}\n",
        report.tp, report.fp, report.fn_, report.precision, report.recall
    ));
    out
}
