use std::fmt;
use std::sync::Arc;

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Keeps the normalization defined for an all-zero bilinear vector.
const NORM_FLOOR: f64 = 1e-12;

/// Pooled RoI blocks from both streams and their fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedRoi {
    pub f_rgb: Array3<f64>,
    pub f_seg: Array3<f64>,
    /// Bilinear vector before signed square root and normalization.
    pub raw: Array1<f64>,
    pub fused: Array1<f64>,
}

fn as_matrix(x: &Array3<f64>) -> Array2<f64> {
    let (c, h, w) = x.dim();
    x.to_owned().into_shape_with_order((c, h * w)).expect("contiguous")
}

fn check_dims(r: &Array3<f64>, s: &Array3<f64>) -> Result<()> {
    if r.dim() != s.dim() {
        return Err(Error::Shape(format!(
            "fusion blocks differ: rgb {:?} vs seg {:?}",
            r.dim(),
            s.dim()
        )));
    }
    Ok(())
}

/// `vec(R S^T)`: entry `i * C + j` is `sum_p rgb[i, p] * seg[j, p]`.
pub fn bilinear_full(r: &Array3<f64>, s: &Array3<f64>) -> Result<Array1<f64>> {
    check_dims(r, s)?;
    let z = as_matrix(r).dot(&as_matrix(s).t());
    Ok(z.iter().copied().collect())
}

/// Position-by-position sum of explicit outer products.
pub fn bilinear_reference(r: &Array3<f64>, s: &Array3<f64>) -> Array1<f64> {
    let (c, h, w) = r.dim();
    let mut out = Array1::<f64>::zeros(c * c);
    for y in 0..h {
        for x in 0..w {
            for i in 0..c {
                for j in 0..c {
                    out[i * c + j] += r[[i, y, x]] * s[[j, y, x]];
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct NormCache {
    raw: Array1<f64>,
    signed: Array1<f64>,
    norm: f64,
    eps: f64,
}

/// `sign(z) (sqrt(|z| + eps) - sqrt(eps))` followed by division by the L2 norm.
pub fn signed_sqrt_normalize(raw: &Array1<f64>, eps: f64) -> (Array1<f64>, NormCache) {
    let se = eps.sqrt();
    let signed = raw.mapv(|z| if z == 0.0 { 0.0 } else { z.signum() * ((z.abs() + eps).sqrt() - se) });
    let norm = (signed.dot(&signed) + NORM_FLOOR).sqrt();
    let out = &signed / norm;
    (
        out,
        NormCache {
            raw: raw.clone(),
            signed,
            norm,
            eps,
        },
    )
}

fn signed_sqrt_normalize_backward(c: &NormCache, dout: &Array1<f64>) -> Array1<f64> {
    let n = c.norm;
    let proj = c.signed.dot(dout);
    let dsigned = dout / n - &(&c.signed * (proj / (n * n * n)));
    ndarray::Zip::from(&dsigned)
        .and(&c.raw)
        .map_collect(|&g, &z| g / (2.0 * (z.abs() + c.eps).sqrt()))
}

/// Tensor Sketch of the bilinear vector: per position, the circular
/// convolution of two count sketches, computed in the Fourier domain.
#[derive(Clone)]
pub struct TensorSketch {
    pub dim: usize,
    pub seed: u64,
    h1: Vec<usize>,
    s1: Vec<f64>,
    h2: Vec<usize>,
    s2: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for TensorSketch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TensorSketch")
            .field("dim", &self.dim)
            .field("channels", &self.h1.len())
            .field("seed", &self.seed)
            .finish()
    }
}

impl PartialEq for TensorSketch {
    fn eq(&self, o: &Self) -> bool {
        self.dim == o.dim && self.h1 == o.h1 && self.s1 == o.s1 && self.h2 == o.h2 && self.s2 == o.s2
    }
}

#[derive(Debug, Clone)]
pub struct SketchCache {
    r: Array3<f64>,
    s: Array3<f64>,
}

impl TensorSketch {
    pub fn new(channels: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> (Vec<usize>, Vec<f64>) {
            (0..n)
                .map(|_| (rng.random_range(0..dim), if rng.random::<bool>() { 1.0 } else { -1.0 }))
                .unzip()
        };
        let (h1, s1) = draw(channels);
        let (h2, s2) = draw(channels);
        let mut planner = FftPlanner::new();
        Self {
            dim,
            seed,
            h1,
            s1,
            h2,
            s2,
            forward: planner.plan_fft_forward(dim),
            inverse: planner.plan_fft_inverse(dim),
        }
    }

    pub fn channels(&self) -> usize {
        self.h1.len()
    }

    fn count_sketch(&self, v: impl Iterator<Item = f64>, h: &[usize], s: &[f64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.dim];
        for (i, x) in v.enumerate() {
            out[h[i]].re += s[i] * x;
        }
        self.forward.process(&mut out);
        out
    }

    pub fn project(&self, r: &Array3<f64>, s: &Array3<f64>) -> Result<(Array1<f64>, SketchCache)> {
        check_dims(r, s)?;
        let (c, h, w) = r.dim();
        if c != self.channels() {
            return Err(Error::Shape(format!("sketch built for {} channels, got {c}", self.channels())));
        }
        let mut acc = vec![Complex64::new(0.0, 0.0); self.dim];
        for y in 0..h {
            for x in 0..w {
                let a = self.count_sketch((0..c).map(|i| r[[i, y, x]]), &self.h1, &self.s1);
                let b = self.count_sketch((0..c).map(|i| s[[i, y, x]]), &self.h2, &self.s2);
                for k in 0..self.dim {
                    acc[k] += a[k] * b[k];
                }
            }
        }
        self.inverse.process(&mut acc);
        let scale = 1.0 / self.dim as f64;
        let out = Array1::from_iter(acc.iter().map(|v| v.re * scale));
        Ok((out, SketchCache { r: r.clone(), s: s.clone() }))
    }

    pub fn backward(&self, cache: &SketchCache, dout: &Array1<f64>) -> (Array3<f64>, Array3<f64>) {
        let (c, h, w) = cache.r.dim();
        let mut g: Vec<Complex64> = dout.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut g);
        let scale = 1.0 / self.dim as f64;
        let mut dr = Array3::<f64>::zeros((c, h, w));
        let mut ds = Array3::<f64>::zeros((c, h, w));
        let mut buf = vec![Complex64::new(0.0, 0.0); self.dim];
        for p in 0..h * w {
            let (y, x) = (p / w, p % w);
            let a = self.count_sketch((0..c).map(|i| cache.r[[i, y, x]]), &self.h1, &self.s1);
            let b = self.count_sketch((0..c).map(|i| cache.s[[i, y, x]]), &self.h2, &self.s2);
            // correlation of the upstream gradient with the partner sketch
            for (dst, src, h_, s_) in [(&mut dr, &b, &self.h1, &self.s1), (&mut ds, &a, &self.h2, &self.s2)] {
                for k in 0..self.dim {
                    buf[k] = g[k] * src[k].conj();
                }
                self.inverse.process(&mut buf);
                for i in 0..c {
                    dst[[i, y, x]] = s_[i] * buf[h_[i]].re * scale;
                }
            }
        }
        (dr, ds)
    }
}

#[derive(Debug, Clone)]
pub enum FusionCache {
    Full {
        r: Array2<f64>,
        s: Array2<f64>,
        dims: (usize, usize, usize),
        norm: NormCache,
    },
    Compact {
        sketch: SketchCache,
        norm: NormCache,
    },
}

/// Fuses two pooled blocks: full bilinear when `sketch` is `None`, else the
/// sketch projection; both followed by signed square root and normalization.
pub fn fuse(
    r: &Array3<f64>,
    s: &Array3<f64>,
    sketch: Option<&TensorSketch>,
    eps: f64,
) -> Result<(FusedRoi, FusionCache)> {
    let (raw, cache) = match sketch {
        None => {
            let raw = bilinear_full(r, s)?;
            (raw, None)
        }
        Some(ts) => {
            let (raw, sc) = ts.project(r, s)?;
            (raw, Some(sc))
        }
    };
    let (fused, norm) = signed_sqrt_normalize(&raw, eps);
    let cache = match cache {
        None => FusionCache::Full {
            r: as_matrix(r),
            s: as_matrix(s),
            dims: r.dim(),
            norm,
        },
        Some(sketch) => FusionCache::Compact { sketch, norm },
    };
    Ok((
        FusedRoi {
            f_rgb: r.clone(),
            f_seg: s.clone(),
            raw,
            fused,
        },
        cache,
    ))
}

/// Gradients w.r.t. the RGB and segmentation blocks.
pub fn fuse_backward(
    cache: &FusionCache,
    sketch: Option<&TensorSketch>,
    dfused: &Array1<f64>,
) -> (Array3<f64>, Array3<f64>) {
    match cache {
        FusionCache::Full { r, s, dims, norm } => {
            let draw = signed_sqrt_normalize_backward(norm, dfused);
            let c = dims.0;
            let dz = draw.into_shape_with_order((c, c)).expect("square");
            let dr = Array3::from_shape_vec(*dims, dz.dot(s).iter().copied().collect()).expect("dims");
            let ds = Array3::from_shape_vec(*dims, dz.t().dot(r).iter().copied().collect()).expect("dims");
            (dr, ds)
        }
        FusionCache::Compact { sketch: sc, norm } => {
            let draw = signed_sqrt_normalize_backward(norm, dfused);
            sketch.expect("compact fusion needs its sketch").backward(sc, &draw)
        }
    }
}
