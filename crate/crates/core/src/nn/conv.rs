use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array3, ArrayView2, Axis, Ix2};
use rand::Rng;

use super::Param;

/// Stride-1 square convolution with zero padding, lowered to im2col + GEMM.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `(out_channels, in_channels, k, k)`
    pub weight: Param,
    /// `(out_channels,)`
    pub bias: Param,
    pub kernel: usize,
    pub padding: usize,
}

#[derive(Debug, Clone)]
pub struct ConvCache {
    cols: Array2<f64>,
    in_dims: (usize, usize, usize),
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Self {
            weight: Param::he_normal(
                format!("{name}.weight"),
                &[out_channels, in_channels, kernel, kernel],
                fan_in,
                rng,
            ),
            bias: Param::zeros(format!("{name}.bias"), &[out_channels]),
            kernel,
            padding,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Spatial output size for an `h x w` input, or `None` if the kernel does not fit.
    pub fn out_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if ph < self.kernel || pw < self.kernel {
            return None;
        }
        Some((ph - self.kernel + 1, pw - self.kernel + 1))
    }

    fn weight_matrix(&self) -> ArrayView2<'_, f64> {
        let cout = self.out_channels();
        self.weight
            .value
            .view()
            .into_shape_with_order((cout, self.weight.len() / cout))
            .expect("contiguous weight")
            .into_dimensionality::<Ix2>()
            .expect("2-d")
    }

    pub fn forward(&self, x: &Array3<f64>) -> (Array3<f64>, ConvCache) {
        let (c, h, w) = x.dim();
        assert_eq!(c, self.in_channels(), "conv input channels");
        let (oh, ow) = self
            .out_hw(h, w)
            .unwrap_or_else(|| panic!("{}x{} input too small for conv", h, w));
        let cols = im2col(x, self.kernel, self.padding, oh, ow);
        let cout = self.out_channels();
        let mut y = Array2::<f64>::zeros((cout, oh * ow));
        general_mat_mul(1.0, &self.weight_matrix(), &cols, 0.0, &mut y);
        for (mut row, &b) in y.axis_iter_mut(Axis(0)).zip(self.bias.value.iter()) {
            row += b;
        }
        let y = y.into_shape_with_order((cout, oh, ow)).expect("reshape");
        (
            y,
            ConvCache {
                cols,
                in_dims: (c, h, w),
            },
        )
    }

    /// Accumulates weight/bias gradients; returns the input gradient when requested.
    pub fn backward(
        &mut self,
        cache: &ConvCache,
        dy: &Array3<f64>,
        need_input_grad: bool,
    ) -> Option<Array3<f64>> {
        let (cout, oh, ow) = dy.dim();
        let dy2 = dy
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((cout, oh * ow))
            .expect("reshape");
        {
            let mut gw = self
                .weight
                .grad
                .view_mut()
                .into_shape_with_order((cout, cache.cols.nrows()))
                .expect("contiguous grad")
                .into_dimensionality::<Ix2>()
                .expect("2-d");
            general_mat_mul(1.0, &dy2, &cache.cols.t(), 1.0, &mut gw);
        }
        let db: Array1<f64> = dy2.sum_axis(Axis(1));
        self.bias
            .grad
            .iter_mut()
            .zip(db.iter())
            .for_each(|(g, d)| *g += d);
        if !need_input_grad {
            return None;
        }
        let mut dcols = Array2::<f64>::zeros(cache.cols.raw_dim());
        general_mat_mul(1.0, &self.weight_matrix().t(), &dy2, 0.0, &mut dcols);
        Some(col2im(
            &dcols,
            cache.in_dims,
            self.kernel,
            self.padding,
            oh,
            ow,
        ))
    }
}

fn im2col(x: &Array3<f64>, k: usize, pad: usize, oh: usize, ow: usize) -> Array2<f64> {
    let (c, h, w) = x.dim();
    let xs = x.as_standard_layout();
    let xs = xs.as_slice().expect("standard layout");
    let mut cols = Array2::<f64>::zeros((c * k * k, oh * ow));
    let out = cols.as_slice_mut().expect("fresh array");
    for ci in 0..c {
        let plane = &xs[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut out[row * oh * ow..(row + 1) * oh * ow];
                let (ox_lo, ox_hi) = valid_range(kx, pad, w, ow);
                if ox_lo >= ox_hi {
                    continue;
                }
                for oy in 0..oh {
                    let iy = oy + ky;
                    if iy < pad || iy - pad >= h {
                        continue;
                    }
                    let src_row = &plane[(iy - pad) * w..(iy - pad + 1) * w];
                    let ix_lo = ox_lo + kx - pad;
                    dst[oy * ow + ox_lo..oy * ow + ox_hi]
                        .copy_from_slice(&src_row[ix_lo..ix_lo + (ox_hi - ox_lo)]);
                }
            }
        }
    }
    cols
}

fn col2im(
    dcols: &Array2<f64>,
    (c, h, w): (usize, usize, usize),
    k: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array3<f64> {
    let mut dx = Array3::<f64>::zeros((c, h, w));
    let src = dcols.as_slice().expect("standard layout");
    let out = dx.as_slice_mut().expect("fresh array");
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let col = &src[row * oh * ow..(row + 1) * oh * ow];
                let (ox_lo, ox_hi) = valid_range(kx, pad, w, ow);
                if ox_lo >= ox_hi {
                    continue;
                }
                for oy in 0..oh {
                    let iy = oy + ky;
                    if iy < pad || iy - pad >= h {
                        continue;
                    }
                    let base = (ci * h + iy - pad) * w + ox_lo + kx - pad;
                    let seg = &col[oy * ow + ox_lo..oy * ow + ox_hi];
                    for (d, s) in out[base..base + seg.len()].iter_mut().zip(seg) {
                        *d += s;
                    }
                }
            }
        }
    }
    dx
}

/// Output columns `[lo, hi)` whose tap `kx` lands inside the unpadded input.
fn valid_range(kx: usize, pad: usize, w: usize, ow: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(kx);
    let hi = (w + pad).saturating_sub(kx).min(ow);
    (lo, hi.max(lo))
}

/// 2x2, stride-2 transposed convolution ("up-convolution").
#[derive(Debug, Clone, PartialEq)]
pub struct UpConv2x2 {
    /// `(in_channels, out_channels, 2, 2)`
    pub weight: Param,
    pub bias: Param,
}

impl UpConv2x2 {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: Param::he_normal(
                format!("{name}.weight"),
                &[in_channels, out_channels, 2, 2],
                in_channels,
                rng,
            ),
            bias: Param::zeros(format!("{name}.bias"), &[out_channels]),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    fn weight_matrix(&self) -> ArrayView2<'_, f64> {
        let cin = self.weight.shape()[0];
        self.weight
            .value
            .view()
            .into_shape_with_order((cin, self.weight.len() / cin))
            .expect("contiguous weight")
            .into_dimensionality::<Ix2>()
            .expect("2-d")
    }

    /// Returns the output and the flattened input (the cache).
    pub fn forward(&self, x: &Array3<f64>) -> (Array3<f64>, Array2<f64>) {
        let (cin, h, w) = x.dim();
        let cout = self.out_channels();
        let x2 = x
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((cin, h * w))
            .expect("reshape");
        let mut z = Array2::<f64>::zeros((cout * 4, h * w));
        general_mat_mul(1.0, &self.weight_matrix().t(), &x2, 0.0, &mut z);
        let mut y = Array3::<f64>::zeros((cout, 2 * h, 2 * w));
        for co in 0..cout {
            let b = self.bias.value[[co]];
            for a in 0..2 {
                for bb in 0..2 {
                    let zr = z.row(co * 4 + a * 2 + bb);
                    for i in 0..h {
                        for j in 0..w {
                            y[[co, 2 * i + a, 2 * j + bb]] = zr[i * w + j] + b;
                        }
                    }
                }
            }
        }
        (y, x2)
    }

    pub fn backward(&mut self, x2: &Array2<f64>, dy: &Array3<f64>) -> Array3<f64> {
        let (cout, oh, ow) = dy.dim();
        let (h, w) = (oh / 2, ow / 2);
        let cin = x2.nrows();
        let mut dz = Array2::<f64>::zeros((cout * 4, h * w));
        for co in 0..cout {
            let mut db = 0.0;
            for a in 0..2 {
                for bb in 0..2 {
                    let mut zr = dz.row_mut(co * 4 + a * 2 + bb);
                    for i in 0..h {
                        for j in 0..w {
                            let g = dy[[co, 2 * i + a, 2 * j + bb]];
                            zr[i * w + j] = g;
                            db += g;
                        }
                    }
                }
            }
            self.bias.grad[[co]] += db;
        }
        {
            let mut gw = self
                .weight
                .grad
                .view_mut()
                .into_shape_with_order((cin, cout * 4))
                .expect("contiguous grad")
                .into_dimensionality::<Ix2>()
                .expect("2-d");
            general_mat_mul(1.0, x2, &dz.t(), 1.0, &mut gw);
        }
        let mut dx = Array2::<f64>::zeros((cin, h * w));
        general_mat_mul(1.0, &self.weight_matrix(), &dz, 0.0, &mut dx);
        dx.into_shape_with_order((cin, h, w)).expect("reshape")
    }
}
