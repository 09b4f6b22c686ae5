use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::Result;
use crate::geometry::{assign_labels, AnchorLabel, BBox};

/// Feature-cell window `[y0, y1) x [x0, x1)` covered by `b`: corners divided by
/// the stride, rounded outwards, clamped to the map. An empty window becomes
/// the single nearest cell.
pub fn roi_project(b: &BBox, stride: f64, fh: usize, fw: usize) -> (usize, usize, usize, usize) {
    let axis = |lo: f64, hi: f64, n: usize| -> (usize, usize) {
        let a = ((lo / stride).floor().max(0.0) as usize).min(n);
        let e = ((hi / stride).ceil().max(0.0) as usize).min(n);
        if e > a {
            (a, e)
        } else {
            let a = a.min(n - 1);
            (a, a + 1)
        }
    };
    let (y0, y1) = axis(b.y1, b.y2, fh);
    let (x0, x1) = axis(b.x1, b.x2, fw);
    (y0, y1, x0, x1)
}

/// Sub-bin `i` of `p` over a window of `len` cells: `[floor(i len / p), ceil((i + 1) len / p))`.
fn bin(i: usize, len: usize, p: usize) -> (usize, usize) {
    (i * len / p, ((i + 1) * len).div_ceil(p))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoiPoolCache {
    /// Flat feature index of the maximum of every output cell.
    pub argmax: Vec<usize>,
    pub in_dims: (usize, usize, usize),
}

/// Max-pools the projected box into a `C x p x p` block.
pub fn roi_pool(features: &Array3<f64>, b: &BBox, stride: f64, p: usize) -> (Array3<f64>, RoiPoolCache) {
    let (c, fh, fw) = features.dim();
    let (y0, y1, x0, x1) = roi_project(b, stride, fh, fw);
    let (hl, wl) = (y1 - y0, x1 - x0);
    let mut out = Array3::<f64>::zeros((c, p, p));
    let mut argmax = Vec::with_capacity(c * p * p);
    let data = features.as_slice().expect("standard layout");
    for ch in 0..c {
        for i in 0..p {
            let (by0, by1) = bin(i, hl, p);
            for j in 0..p {
                let (bx0, bx1) = bin(j, wl, p);
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for y in y0 + by0..y0 + by1 {
                    for x in x0 + bx0..x0 + bx1 {
                        let idx = (ch * fh + y) * fw + x;
                        if data[idx] > best {
                            best = data[idx];
                            best_idx = idx;
                        }
                    }
                }
                out[[ch, i, j]] = best;
                argmax.push(best_idx);
            }
        }
    }
    (out, RoiPoolCache { argmax, in_dims: (c, fh, fw) })
}

/// Adds the pooled gradient `dy` into `grad` at the recorded maxima.
pub fn roi_pool_backward(cache: &RoiPoolCache, dy: &Array3<f64>, grad: &mut Array3<f64>) {
    let g = grad.as_slice_mut().expect("standard layout");
    for (&idx, &d) in cache.argmax.iter().zip(dy.iter()) {
        g[idx] += d;
    }
}

/// A labelled RoI for the detection heads.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiSample {
    pub bbox: BBox,
    /// Matched ground-truth index for foreground RoIs.
    pub gt: Option<usize>,
    /// Box-regression target for foreground RoIs.
    pub target: Option<[f64; 4]>,
}

impl RoiSample {
    pub fn is_foreground(&self) -> bool {
        self.gt.is_some()
    }
}

/// Labels proposals by IoU (`> fg_iou` foreground, `<= bg_iou` background)
/// and draws up to `samples` of them, `round(fg_fraction * samples)` at most
/// foreground, filling the rest with background.
pub fn sample_proposals_for_training<R: Rng + ?Sized>(
    proposals: &[BBox],
    gt: &[BBox],
    samples: usize,
    fg_fraction: f64,
    fg_iou: f64,
    bg_iou: f64,
    rng: &mut R,
) -> Result<Vec<RoiSample>> {
    if proposals.is_empty() {
        return Ok(Vec::new());
    }
    let labels = assign_labels(proposals, gt, fg_iou, bg_iou, false)?;
    let mut fg: Vec<usize> = labels.foreground().collect();
    let mut bg: Vec<usize> = labels.background().collect();
    fg.shuffle(rng);
    bg.shuffle(rng);
    let n_fg = fg.len().min((fg_fraction * samples as f64).round() as usize);
    let n_bg = bg.len().min(samples - n_fg);
    let mut out = Vec::with_capacity(n_fg + n_bg);
    for &i in &fg[..n_fg] {
        let AnchorLabel::Foreground { gt } = labels.labels[i] else {
            unreachable!("foreground index")
        };
        out.push(RoiSample {
            bbox: proposals[i],
            gt: Some(gt),
            target: labels.targets[i],
        });
    }
    for &i in &bg[..n_bg] {
        out.push(RoiSample {
            bbox: proposals[i],
            gt: None,
            target: None,
        });
    }
    Ok(out)
}
