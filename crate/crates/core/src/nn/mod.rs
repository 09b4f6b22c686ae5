//! Minimal CPU neural-network layer kit with hand-written backward passes.
//!
//! Feature maps are `Array3<f64>` in `(channels, height, width)` order. Every
//! layer exposes a `forward` that takes `&self` and returns an explicit cache,
//! and a `backward` that consumes the cache, accumulates parameter gradients
//! into the layer's [`Param`]s and returns the gradient w.r.t. the input.

pub mod checkpoint;
pub mod conv;
pub mod gradcheck;
pub mod linear;
pub mod optim;
pub mod pool;

use ndarray::{Array3, ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub use conv::{Conv2d, ConvCache, UpConv2x2};
pub use linear::Linear;
pub use optim::Sgd;
pub use pool::{MaxPool2, PoolCache};

/// A learnable tensor together with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: ArrayD<f64>,
    pub grad: ArrayD<f64>,
}

impl Param {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self {
            name: name.into(),
            value: ArrayD::zeros(IxDyn(shape)),
            grad: ArrayD::zeros(IxDyn(shape)),
        }
    }

    /// Normal(0, sqrt(2 / fan_in)) initialization.
    pub fn he_normal<R: Rng + ?Sized>(
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> Self {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let mut p = Self::zeros(name, shape);
        p.value.iter_mut().for_each(|v| *v = normal.sample(rng));
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }
}

/// Models that own a fixed, ordered list of parameter groups.
pub trait HasParams {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

pub fn relu(x: &Array3<f64>) -> Array3<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Backward of ReLU given its *output*.
pub fn relu_backward(y: &Array3<f64>, dy: &Array3<f64>) -> Array3<f64> {
    let mut dx = dy.clone();
    ndarray::Zip::from(&mut dx).and(y).for_each(|d, &o| {
        if o <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Binary cross-entropy of a logit against a (possibly soft) target in [0, 1].
pub fn bce_with_logit(logit: f64, target: f64) -> f64 {
    softplus(logit) - target * logit
}

/// Concatenate two feature maps along the channel axis.
pub fn concat_channels(a: &Array3<f64>, b: &Array3<f64>) -> Array3<f64> {
    ndarray::concatenate(ndarray::Axis(0), &[a.view(), b.view()]).expect("matching spatial dims")
}

/// Center crop of `x` to `(h, w)`.
pub fn center_crop(x: &Array3<f64>, h: usize, w: usize) -> Array3<f64> {
    let (_, xh, xw) = x.dim();
    let top = (xh - h) / 2;
    let left = (xw - w) / 2;
    x.slice(ndarray::s![.., top..top + h, left..left + w]).to_owned()
}
