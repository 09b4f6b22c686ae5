use mitosis_core::detector::roi_pool;
use mitosis_core::geometry::{
    assign_anchor_labels, decode_box, encode_box, iou, nms, AnchorLabel, BBox, MAX_LOG_DELTA,
};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ensure;

const INSTANCES: usize = 1000;
const TOL: f64 = 1e-6;

/// Integer-cornered box with sides in `1..=max_side`.
fn int_box(rng: &mut ChaCha8Rng, span: i32, max_side: i32) -> BBox {
    let x = rng.random_range(0..span) as f64;
    let y = rng.random_range(0..span) as f64;
    let w = rng.random_range(1..=max_side) as f64;
    let h = rng.random_range(1..=max_side) as f64;
    BBox::new(x, y, x + w, y + h)
}

/// IoU by counting unit pixels covered by each box.
fn raster_iou(a: &BBox, b: &BBox) -> f64 {
    let lo = a.x1.min(b.x1).min(a.y1).min(b.y1) as i64;
    let hi = a.x2.max(b.x2).max(a.y2).max(b.y2) as i64;
    let inside = |bx: &BBox, x: i64, y: i64| {
        let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
        bx.x1 < cx && cx < bx.x2 && bx.y1 < cy && cy < bx.y2
    };
    let (mut inter, mut union) = (0u64, 0u64);
    for y in lo..hi {
        for x in lo..hi {
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            inter += (ia && ib) as u64;
            union += (ia || ib) as u64;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn check_iou(rng: &mut ChaCha8Rng) -> Result<(), String> {
    for k in 0..INSTANCES {
        let a = int_box(rng, 20, 12);
        let b = int_box(rng, 20, 12);
        let (got, want) = (iou(&a, &b), raster_iou(&a, &b));
        ensure((got - want).abs() <= TOL, || format!("iou instance {k}: {a:?} {b:?} gave {got}, raster {want}"))?;
    }
    Ok(())
}

/// Keeps a box iff no already kept box of higher rank overlaps it above the threshold.
fn reference_nms(boxes: &[BBox], scores: &[f64], thresh: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    // insertion sort on (score desc, index asc)
    for i in 1..order.len() {
        let mut j = i;
        while j > 0 {
            let (p, q) = (order[j - 1], order[j]);
            if scores[q] > scores[p] || (scores[q] == scores[p] && q < p) {
                order.swap(j - 1, j);
                j -= 1;
            } else {
                break;
            }
        }
    }
    let mut keep: Vec<usize> = Vec::new();
    for i in order {
        if keep.iter().all(|&k| raster_iou(&boxes[k], &boxes[i]) <= thresh) {
            keep.push(i);
        }
    }
    keep
}

fn check_nms(rng: &mut ChaCha8Rng) -> Result<(), String> {
    for k in 0..INSTANCES {
        let n = rng.random_range(0..=12);
        let boxes: Vec<BBox> = (0..n).map(|_| int_box(rng, 16, 10)).collect();
        // coarse scores so that ties occur
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64 / 8.0).collect();
        let thresh = [0.0, 0.3, 0.5, 0.7][k % 4];
        let (got, want) = (nms(&boxes, &scores, thresh), reference_nms(&boxes, &scores, thresh));
        ensure(got == want, || format!("nms instance {k}: kept {got:?}, reference {want:?}"))?;
    }
    Ok(())
}

fn reference_targets(gt: &BBox, a: &BBox) -> [f64; 4] {
    let (aw, ah) = (a.x2 - a.x1, a.y2 - a.y1);
    let (gw, gh) = (gt.x2 - gt.x1, gt.y2 - gt.y1);
    [
        ((gt.x1 + gt.x2) - (a.x1 + a.x2)) / (2.0 * aw),
        ((gt.y1 + gt.y2) - (a.y1 + a.y2)) / (2.0 * ah),
        (gw / aw).ln(),
        (gh / ah).ln(),
    ]
}

fn check_labels(rng: &mut ChaCha8Rng) -> Result<(), String> {
    for k in 0..INSTANCES {
        let anchors: Vec<BBox> = (0..rng.random_range(1..=15)).map(|_| int_box(rng, 16, 10)).collect();
        let gts: Vec<BBox> = (0..rng.random_range(0..=4)).map(|_| int_box(rng, 16, 10)).collect();
        let (fg, bg) = if k % 2 == 0 { (0.5, 0.1) } else { (0.7, 0.3) };
        let got = assign_anchor_labels(&anchors, &gts, fg, bg).map_err(|e| e.to_string())?;

        let m: Vec<Vec<f64>> = anchors.iter().map(|a| gts.iter().map(|g| raster_iou(a, g)).collect()).collect();
        let best_gt: Vec<f64> = (0..gts.len())
            .map(|j| m.iter().map(|row| row[j]).fold(0.0, f64::max))
            .collect();
        for (i, row) in m.iter().enumerate() {
            // first index attaining the row maximum
            let mut arg = 0;
            for j in 0..row.len() {
                if row[j] > row[arg] {
                    arg = j;
                }
            }
            let max = row.get(arg).copied().unwrap_or(0.0);
            let forced = (0..gts.len()).any(|j| best_gt[j] > 0.0 && row[j] == best_gt[j]);
            let want = if max > fg || forced {
                AnchorLabel::Foreground { gt: arg }
            } else if max <= bg {
                AnchorLabel::Background
            } else {
                AnchorLabel::Ignore
            };
            ensure(got.labels[i] == want, || {
                format!("labels instance {k}, anchor {i}: got {:?}, reference {want:?}", got.labels[i])
            })?;
            ensure((got.max_iou[i] - max).abs() <= TOL, || format!("labels instance {k}: max IoU of anchor {i}"))?;
            match (want, got.targets[i]) {
                (AnchorLabel::Foreground { gt }, Some(t)) => {
                    let r = reference_targets(&gts[gt], &anchors[i]);
                    ensure(t.iter().zip(&r).all(|(a, b)| (a - b).abs() <= TOL), || {
                        format!("labels instance {k}: target {t:?} vs {r:?}")
                    })?;
                }
                (AnchorLabel::Foreground { .. }, None) => return Err(format!("labels instance {k}: missing target")),
                (_, Some(_)) => return Err(format!("labels instance {k}: target on a non-foreground anchor")),
                (_, None) => {}
            }
        }
    }
    Ok(())
}

fn check_codec(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let max_ratio = (MAX_LOG_DELTA * 0.9).exp();
    for k in 0..INSTANCES {
        let a = BBox::from_center(
            rng.random_range(0.0..200.0),
            rng.random_range(0.0..200.0),
            rng.random_range(2.0..80.0),
            rng.random_range(2.0..80.0),
        );
        let (aw, ah) = (a.width(), a.height());
        let gt = BBox::from_center(
            a.center().0 + rng.random_range(-2.0..2.0) * aw,
            a.center().1 + rng.random_range(-2.0..2.0) * ah,
            aw * rng.random_range(1.0 / max_ratio..max_ratio),
            ah * rng.random_range(1.0 / max_ratio..max_ratio),
        );
        let d = encode_box(&gt, &a).map_err(|e| e.to_string())?;
        let r = reference_targets(&gt, &a);
        ensure(d.iter().zip(&r).all(|(x, y)| (x - y).abs() <= TOL), || {
            format!("encode instance {k}: {d:?} vs {r:?}")
        })?;
        let back = decode_box(&d, &a);
        let err = back
            .to_array()
            .iter()
            .zip(gt.to_array())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        ensure(err <= TOL, || format!("decode instance {k}: {back:?} vs {gt:?}"))?;
    }
    Ok(())
}

/// Max over the cells of each sub-bin, with cells and bins chosen by
/// membership tests rather than index arithmetic.
fn reference_roi_pool(f: &Array3<f64>, b: &BBox, stride: f64, p: usize) -> Array3<f64> {
    let (c, fh, fw) = f.dim();
    let cells = |lo: f64, hi: f64, n: usize| -> Vec<usize> {
        (0..n)
            .filter(|&k| (k as f64) * stride < hi && (k as f64 + 1.0) * stride > lo)
            .collect()
    };
    let (ys, xs) = (cells(b.y1, b.y2, fh), cells(b.x1, b.x2, fw));
    let in_bin = |pos: usize, len: usize, i: usize| pos * p < (i + 1) * len && (pos + 1) * p > i * len;
    let mut out = Array3::<f64>::zeros((c, p, p));
    for ch in 0..c {
        for i in 0..p {
            for j in 0..p {
                let mut best = f64::NEG_INFINITY;
                for (yi, &y) in ys.iter().enumerate() {
                    for (xi, &x) in xs.iter().enumerate() {
                        if in_bin(yi, ys.len(), i) && in_bin(xi, xs.len(), j) {
                            best = best.max(f[[ch, y, x]]);
                        }
                    }
                }
                out[[ch, i, j]] = best;
            }
        }
    }
    out
}

fn check_roi_pool(rng: &mut ChaCha8Rng) -> Result<(), String> {
    for k in 0..INSTANCES {
        let (c, fh, fw) = (rng.random_range(1..=3), rng.random_range(1..=10), rng.random_range(1..=10));
        let stride = [4.0, 8.0, 16.0][k % 3];
        let p = rng.random_range(1..=4);
        let f = Array3::from_shape_fn((c, fh, fw), |_| rng.random_range(-1.0..1.0));
        let (w, h) = (fw as f64 * stride, fh as f64 * stride);
        let (xa, xb) = (rng.random_range(0.0..w), rng.random_range(0.0..w));
        let (ya, yb) = (rng.random_range(0.0..h), rng.random_range(0.0..h));
        let b = BBox::new(xa.min(xb), ya.min(yb), xa.max(xb), ya.max(yb));
        let (got, _) = roi_pool(&f, &b, stride, p);
        let want = reference_roi_pool(&f, &b, stride, p);
        ensure(got == want, || format!("roi_pool instance {k}: box {b:?}, stride {stride}, p {p}"))?;
    }
    Ok(())
}

pub fn run() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    check_iou(&mut rng)?;
    check_nms(&mut rng)?;
    check_labels(&mut rng)?;
    check_codec(&mut rng)?;
    check_roi_pool(&mut rng)?;
    Ok(format!(
        "iou, nms, anchor labels, encode/decode and roi_pool each agree with their references on {INSTANCES} random instances"
    ))
}
