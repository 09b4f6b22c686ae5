//! Box geometry for the detector: anchors, IoU, label assignment, delta coding, NMS.
//!
//! Everything here is pure and allocation-light so it can be called from any
//! number of workers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in continuous pixel coordinates, `x1 <= x2`, `y1 <= y2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn is_valid(&self) -> bool {
        self.x1 <= self.x2 && self.y1 <= self.y2
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Intersection of `b` with `[0, width] x [0, height]`.
pub fn clip_box(b: &BBox, width: f64, height: f64) -> BBox {
    let x1 = b.x1.clamp(0.0, width);
    let y1 = b.y1.clamp(0.0, height);
    BBox::new(x1, y1, b.x2.clamp(x1, width), b.y2.clamp(y1, height))
}

/// Indices of boxes whose sides are both at least `min_side`.
pub fn filter_degenerate(boxes: &[BBox], min_side: f64) -> Vec<usize> {
    boxes
        .iter()
        .enumerate()
        .filter(|(_, b)| b.width() >= min_side && b.height() >= min_side)
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSpec {
    /// Pixels per feature-map cell.
    pub stride: f64,
    /// Anchor side lengths (square root of the area) in pixels.
    pub scales: Vec<f64>,
    /// Height / width aspect ratios.
    pub ratios: Vec<f64>,
}

impl Default for AnchorSpec {
    fn default() -> Self {
        Self {
            stride: 16.0,
            scales: vec![32.0, 64.0, 128.0],
            ratios: vec![0.5, 1.0, 2.0],
        }
    }
}

impl AnchorSpec {
    pub fn per_cell(&self) -> usize {
        self.scales.len() * self.ratios.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnchorOrigin {
    pub cell_x: usize,
    pub cell_y: usize,
    pub scale: usize,
    pub ratio: usize,
}

/// Anchors laid out cell-major: index `(cy * cells_x + cx) * per_cell + s * |ratios| + r`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    pub spec: AnchorSpec,
    pub cells_x: usize,
    pub cells_y: usize,
    pub anchors: Vec<BBox>,
    pub origins: Vec<AnchorOrigin>,
}

impl AnchorGrid {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn per_cell(&self) -> usize {
        self.spec.per_cell()
    }
}

/// Anchor of area `scale²` and aspect `ratio = h / w` at every cell center
/// `((i + 0.5) stride, (j + 0.5) stride)`. Anchors are not clipped.
pub fn generate_anchors(cells_y: usize, cells_x: usize, spec: &AnchorSpec) -> Result<AnchorGrid> {
    if !(spec.stride > 0.0) {
        return Err(Error::InvalidConfig("anchor stride must be positive".into()));
    }
    if spec.scales.is_empty() || spec.ratios.is_empty() {
        return Err(Error::InvalidConfig("anchor scales and ratios must be non-empty".into()));
    }
    let shapes: Vec<(f64, f64)> = spec
        .scales
        .iter()
        .flat_map(|&s| {
            spec.ratios.iter().map(move |&r| {
                let w = s / r.sqrt();
                (w, s * s / w)
            })
        })
        .collect();
    let mut anchors = Vec::with_capacity(cells_x * cells_y * shapes.len());
    let mut origins = Vec::with_capacity(anchors.capacity());
    for cy in 0..cells_y {
        for cx in 0..cells_x {
            let ccx = (cx as f64 + 0.5) * spec.stride;
            let ccy = (cy as f64 + 0.5) * spec.stride;
            for (k, &(w, h)) in shapes.iter().enumerate() {
                anchors.push(BBox::from_center(ccx, ccy, w, h));
                origins.push(AnchorOrigin {
                    cell_x: cx,
                    cell_y: cy,
                    scale: k / spec.ratios.len(),
                    ratio: k % spec.ratios.len(),
                });
            }
        }
    }
    Ok(AnchorGrid {
        spec: spec.clone(),
        cells_x,
        cells_y,
        anchors,
        origins,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorLabel {
    Foreground { gt: usize },
    Background,
    Ignore,
}

impl AnchorLabel {
    pub fn is_foreground(&self) -> bool {
        matches!(self, AnchorLabel::Foreground { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorLabels {
    pub labels: Vec<AnchorLabel>,
    /// Regression target for every foreground anchor, `None` elsewhere.
    pub targets: Vec<Option<[f64; 4]>>,
    /// Best IoU of every anchor over the ground truths (0 with no ground truth).
    pub max_iou: Vec<f64>,
}

impl AnchorLabels {
    pub fn foreground(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_foreground())
            .map(|(i, _)| i)
    }

    pub fn background(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == AnchorLabel::Background)
            .map(|(i, _)| i)
    }
}

/// Labels boxes by their best IoU against `gt`: `> fg_thresh` foreground,
/// `<= bg_thresh` background, otherwise ignored. With `force_best_match`,
/// every anchor attaining a ground truth's (positive) maximum IoU becomes
/// foreground too. Foreground entries carry [`encode_box`] targets towards
/// their best-IoU ground truth.
pub fn assign_labels(
    boxes: &[BBox],
    gt: &[BBox],
    fg_thresh: f64,
    bg_thresh: f64,
    force_best_match: bool,
) -> Result<AnchorLabels> {
    if boxes.is_empty() {
        return Err(Error::Empty("anchor list".into()));
    }
    if !(0.0 <= bg_thresh && bg_thresh < fg_thresh && fg_thresh <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "IoU thresholds must satisfy 0 <= bg ({bg_thresh}) < fg ({fg_thresh}) <= 1"
        )));
    }
    let n = boxes.len();
    let mut max_iou = vec![0.0; n];
    let mut argmax = vec![None; n];
    let mut best_per_gt = vec![0.0f64; gt.len()];
    let ious: Vec<Vec<f64>> = boxes
        .iter()
        .map(|a| gt.iter().map(|g| iou(a, g)).collect())
        .collect();
    for (i, row) in ious.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if argmax[i].is_none() || v > max_iou[i] {
                max_iou[i] = v;
                argmax[i] = Some(j);
            }
            best_per_gt[j] = best_per_gt[j].max(v);
        }
    }
    let mut labels: Vec<AnchorLabel> = (0..n)
        .map(|i| match argmax[i] {
            Some(j) if max_iou[i] > fg_thresh => AnchorLabel::Foreground { gt: j },
            _ if max_iou[i] <= bg_thresh => AnchorLabel::Background,
            _ => AnchorLabel::Ignore,
        })
        .collect();
    if force_best_match {
        for (i, row) in ious.iter().enumerate() {
            let hits_best = row
                .iter()
                .zip(&best_per_gt)
                .any(|(&v, &best)| best > 0.0 && v == best);
            if hits_best {
                labels[i] = AnchorLabel::Foreground {
                    gt: argmax[i].expect("gt present"),
                };
            }
        }
    }
    let mut targets = vec![None; n];
    for (i, l) in labels.iter().enumerate() {
        if let AnchorLabel::Foreground { gt: j } = *l {
            targets[i] = Some(encode_box(&gt[j], &boxes[i])?);
        }
    }
    Ok(AnchorLabels {
        labels,
        targets,
        max_iou,
    })
}

/// [`assign_labels`] with the forced best-match rule, as used for RPN anchors.
pub fn assign_anchor_labels(
    anchors: &[BBox],
    gt: &[BBox],
    fg_thresh: f64,
    bg_thresh: f64,
) -> Result<AnchorLabels> {
    assign_labels(anchors, gt, fg_thresh, bg_thresh, true)
}

/// Center/log-size deltas taking `anchor` to `gt`.
pub fn encode_box(gt: &BBox, anchor: &BBox) -> Result<[f64; 4]> {
    let (aw, ah) = (anchor.width(), anchor.height());
    if !(aw > 0.0 && ah > 0.0) {
        return Err(Error::InvalidBox(format!("anchor {anchor:?} has non-positive size")));
    }
    let (gw, gh) = (gt.width(), gt.height());
    if !(gw > 0.0 && gh > 0.0) {
        return Err(Error::InvalidBox(format!("ground truth {gt:?} has non-positive size")));
    }
    let (acx, acy) = anchor.center();
    let (gcx, gcy) = gt.center();
    Ok([
        (gcx - acx) / aw,
        (gcy - acy) / ah,
        (gw / aw).ln(),
        (gh / ah).ln(),
    ])
}

/// Log-size deltas are clamped to this magnitude before exponentiation.
pub const MAX_LOG_DELTA: f64 = 4.0;

/// Inverse of [`encode_box`].
pub fn decode_box(deltas: &[f64; 4], anchor: &BBox) -> BBox {
    let (aw, ah) = (anchor.width(), anchor.height());
    let w = aw * deltas[2].clamp(-MAX_LOG_DELTA, MAX_LOG_DELTA).exp();
    let h = ah * deltas[3].clamp(-MAX_LOG_DELTA, MAX_LOG_DELTA).exp();
    // offsets from the anchor's own corners, so zero deltas reproduce it exactly
    let (sx, sy) = (deltas[0] * aw, deltas[1] * ah);
    let (gx, gy) = ((aw - w) / 2.0, (ah - h) / 2.0);
    let b = BBox::new(anchor.x1 + sx + gx, anchor.y1 + sy + gy, anchor.x2 + sx - gx, anchor.y2 + sy - gy);
    BBox::new(b.x1.min(b.x2), b.y1.min(b.y2), b.x1.max(b.x2), b.y1.max(b.y2))
}

/// Indices sorted by descending score; equal scores keep the lower index first.
pub fn score_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Greedy non-maximum suppression. Returns kept indices in score-descending order.
pub fn nms(boxes: &[BBox], scores: &[f64], iou_thresh: f64) -> Vec<usize> {
    assert_eq!(boxes.len(), scores.len(), "nms: boxes and scores differ in length");
    let mut suppressed = vec![false; boxes.len()];
    let mut keep = Vec::new();
    for i in score_order(scores) {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        for (j, s) in suppressed.iter_mut().enumerate() {
            if !*s && j != i && iou(&boxes[i], &boxes[j]) > iou_thresh {
                *s = true;
            }
        }
    }
    keep
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0..50.0f64, 0.0..50.0f64, 0.5..30.0f64, 0.5..30.0f64)
            .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h))
    }

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(20.0, 20.0, 30.0, 30.0)), 0.0);
        assert_abs_diff_eq!(iou(&a, &BBox::new(5.0, 0.0, 15.0, 10.0)), 1.0 / 3.0, epsilon = 1e-12);
        let point = BBox::new(1.0, 1.0, 1.0, 1.0);
        assert_eq!(iou(&point, &point), 0.0);
    }

    #[test]
    fn anchor_examples() {
        let grid = generate_anchors(2, 2, &AnchorSpec::default()).unwrap();
        assert_eq!(grid.len(), 36);
        let spec = AnchorSpec {
            stride: 16.0,
            scales: vec![64.0],
            ratios: vec![1.0],
        };
        let g = generate_anchors(1, 1, &spec).unwrap();
        assert_eq!(g.anchors[0], BBox::new(-24.0, -24.0, 40.0, 40.0));
        let spec = AnchorSpec {
            stride: 8.0,
            scales: vec![48.0],
            ratios: vec![2.0],
        };
        let b = generate_anchors(1, 1, &spec).unwrap().anchors[0];
        assert_abs_diff_eq!(b.height() / b.width(), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.height() * b.width(), 48.0 * 48.0, epsilon = 1e-9);
        assert!(generate_anchors(1, 1, &AnchorSpec { stride: 0.0, ..AnchorSpec::default() }).is_err());
    }

    #[test]
    fn anchor_centers_lie_on_stride_lattice() {
        let spec = AnchorSpec::default();
        let g = generate_anchors(3, 4, &spec).unwrap();
        for (b, o) in g.anchors.iter().zip(&g.origins) {
            let (cx, cy) = b.center();
            assert_abs_diff_eq!(cx, (o.cell_x as f64 + 0.5) * 16.0, epsilon = 1e-9);
            assert_abs_diff_eq!(cy, (o.cell_y as f64 + 0.5) * 16.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn label_rule_thresholds() {
        let gt = [BBox::new(0.0, 0.0, 10.0, 10.0)];
        // IoU 0.6: 10 x 6 overlap over 10 x 10 vs a box of area 60 inside
        let fg = BBox::new(0.0, 0.0, 10.0, 6.0);
        let ignore = BBox::new(0.0, 0.0, 10.0, 3.0);
        let bg = BBox::new(0.0, 0.0, 10.0, 0.5);
        assert_abs_diff_eq!(iou(&fg, &gt[0]), 0.6);
        assert_abs_diff_eq!(iou(&ignore, &gt[0]), 0.3);
        assert_abs_diff_eq!(iou(&bg, &gt[0]), 0.05);
        let l = assign_labels(&[fg, ignore, bg], &gt, 0.5, 0.1, false).unwrap();
        assert_eq!(l.labels, vec![
            AnchorLabel::Foreground { gt: 0 },
            AnchorLabel::Ignore,
            AnchorLabel::Background
        ]);
        assert!(l.targets[0].is_some() && l.targets[1].is_none());
        let none = assign_anchor_labels(&[fg, ignore], &[], 0.5, 0.1).unwrap();
        assert!(none.labels.iter().all(|l| *l == AnchorLabel::Background));
        assert!(assign_anchor_labels(&[], &gt, 0.5, 0.1).is_err());
        assert!(assign_anchor_labels(&[fg], &gt, 0.1, 0.5).is_err());
    }

    #[test]
    fn forced_match_rescues_small_ground_truth() {
        let gt = [BBox::new(0.0, 0.0, 4.0, 4.0)];
        let anchors = [BBox::new(0.0, 0.0, 10.0, 10.0), BBox::new(50.0, 50.0, 60.0, 60.0)];
        let l = assign_anchor_labels(&anchors, &gt, 0.5, 0.1).unwrap();
        assert_eq!(l.labels[0], AnchorLabel::Foreground { gt: 0 });
        assert_eq!(l.labels[1], AnchorLabel::Background);
    }

    #[test]
    fn coding_examples() {
        let a = BBox::new(10.0, 20.0, 30.0, 60.0);
        assert_eq!(encode_box(&a, &a).unwrap(), [0.0, 0.0, 0.0, 0.0]);
        let shifted = BBox::new(30.0, 20.0, 50.0, 60.0);
        assert_eq!(encode_box(&shifted, &a).unwrap(), [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(decode_box(&[0.0; 4], &a), a);
        let wide = decode_box(&[0.0, 0.0, 2f64.ln(), 0.0], &a);
        assert_abs_diff_eq!(wide.width(), 40.0, epsilon = 1e-12);
        assert_eq!(wide.center(), a.center());
        assert!(encode_box(&BBox::new(1.0, 1.0, 1.0, 5.0), &a).is_err());
        // clamped log-size keeps huge deltas finite
        assert!(decode_box(&[0.0, 0.0, 1e6, -1e6], &a).area().is_finite());
    }

    #[test]
    fn clip_and_filter_examples() {
        assert_eq!(
            clip_box(&BBox::new(-5.0, -5.0, 10.0, 10.0), 100.0, 100.0),
            BBox::new(0.0, 0.0, 10.0, 10.0)
        );
        let inner = BBox::new(3.0, 4.0, 50.0, 60.0);
        assert_eq!(clip_box(&inner, 100.0, 100.0), inner);
        let flat = clip_box(&BBox::new(-20.0, 5.0, -10.0, 20.0), 100.0, 100.0);
        assert_eq!(flat.width(), 0.0);
        assert_eq!(filter_degenerate(&[flat, inner], 1.0), vec![1]);
    }

    #[test]
    fn nms_examples() {
        let b = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(nms(&[b, b], &[0.8, 0.9], 0.5), vec![1]);
        let far = BBox::new(20.0, 0.0, 30.0, 10.0);
        assert_eq!(nms(&[b, far], &[0.5, 0.5], 0.5), vec![0, 1]);
        assert!(nms(&[], &[], 0.5).is_empty());
    }

    proptest! {
        #[test]
        fn iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let x = iou(&a, &b);
            prop_assert_eq!(x, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&x));
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn decode_inverts_encode(g in arb_box(), a in arb_box()) {
            let back = decode_box(&encode_box(&g, &a).unwrap(), &a);
            for (u, v) in back.to_array().iter().zip(g.to_array()) {
                prop_assert!((u - v).abs() < 1e-6);
            }
        }

        #[test]
        fn nms_keeps_pairwise_separated(
            boxes in proptest::collection::vec(arb_box(), 0..25),
            seed in 0u64..1000,
        ) {
            let scores: Vec<f64> = (0..boxes.len()).map(|i| ((i as u64 * 7919 + seed) % 101) as f64).collect();
            let keep = nms(&boxes, &scores, 0.4);
            for (k, &i) in keep.iter().enumerate() {
                for &j in &keep[k + 1..] {
                    prop_assert!(iou(&boxes[i], &boxes[j]) <= 0.4);
                }
            }
            prop_assert!(keep.windows(2).all(|w| scores[w[0]] >= scores[w[1]]));
        }

        #[test]
        fn every_anchor_gets_exactly_one_label(
            anchors in proptest::collection::vec(arb_box(), 1..30),
            gts in proptest::collection::vec(arb_box(), 0..4),
        ) {
            let l = assign_anchor_labels(&anchors, &gts, 0.5, 0.1).unwrap();
            prop_assert_eq!(l.labels.len(), anchors.len());
            for (lab, t) in l.labels.iter().zip(&l.targets) {
                prop_assert_eq!(lab.is_foreground(), t.is_some());
            }
            for (j, g) in gts.iter().enumerate() {
                let touched = anchors.iter().any(|a| iou(a, g) > 0.0);
                let has_fg = l.labels.iter().enumerate().any(|(i, lab)| {
                    lab.is_foreground() && iou(&anchors[i], g) > 0.0 && iou(&anchors[i], g) >= anchors.iter().map(|a| iou(a, g)).fold(0.0, f64::max)
                });
                if touched {
                    prop_assert!(has_fg, "gt {} lacks a foreground anchor", j);
                }
            }
        }
    }
}
