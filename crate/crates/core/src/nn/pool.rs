use ndarray::Array3;

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MaxPool2;

#[derive(Debug, Clone)]
pub struct PoolCache {
    in_dims: (usize, usize, usize),
    /// Flat input index of the winning element for every output element.
    argmax: Vec<usize>,
}

impl MaxPool2 {
    pub fn out_hw(h: usize, w: usize) -> (usize, usize) {
        (h / 2, w / 2)
    }

    pub fn forward(&self, x: &Array3<f64>) -> (Array3<f64>, PoolCache) {
        let (c, h, w) = x.dim();
        let (oh, ow) = Self::out_hw(h, w);
        let xs = x.as_standard_layout();
        let xs = xs.as_slice().expect("standard layout");
        let mut y = Array3::<f64>::zeros((c, oh, ow));
        let mut argmax = Vec::with_capacity(c * oh * ow);
        let ys = y.as_slice_mut().expect("fresh array");
        let mut o = 0;
        for ci in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for a in 0..2 {
                        for b in 0..2 {
                            let idx = (ci * h + 2 * i + a) * w + 2 * j + b;
                            if xs[idx] > best {
                                best = xs[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    ys[o] = best;
                    argmax.push(best_idx);
                    o += 1;
                }
            }
        }
        (
            y,
            PoolCache {
                in_dims: (c, h, w),
                argmax,
            },
        )
    }

    pub fn backward(&self, cache: &PoolCache, dy: &Array3<f64>) -> Array3<f64> {
        let mut dx = Array3::<f64>::zeros(cache.in_dims);
        let dxs = dx.as_slice_mut().expect("fresh array");
        for (&idx, &g) in cache.argmax.iter().zip(dy.iter()) {
            dxs[idx] += g;
        }
        dx
    }
}
