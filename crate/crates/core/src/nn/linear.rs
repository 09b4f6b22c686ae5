use ndarray::{Array1, ArrayView1, Ix2};
use rand::Rng;

use super::Param;

/// Fully connected layer `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `(out, in)`
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            weight: Param::he_normal(format!("{name}.weight"), &[outputs, inputs], inputs, rng),
            bias: Param::zeros(format!("{name}.bias"), &[outputs]),
        }
    }

    pub fn zeroed(name: &str, inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Param::zeros(format!("{name}.weight"), &[outputs, inputs]),
            bias: Param::zeros(format!("{name}.bias"), &[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let w = self.weight.value.view().into_dimensionality::<Ix2>().expect("2-d");
        let b = self.bias.value.view().into_dimensionality::<ndarray::Ix1>().expect("1-d");
        w.dot(&x) + b
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&mut self, x: ArrayView1<f64>, dy: ArrayView1<f64>) -> Array1<f64> {
        {
            let mut gw = self.weight.grad.view_mut().into_dimensionality::<Ix2>().expect("2-d");
            for (mut row, &d) in gw.rows_mut().into_iter().zip(dy.iter()) {
                if d != 0.0 {
                    row.scaled_add(d, &x);
                }
            }
        }
        self.bias.grad.iter_mut().zip(dy.iter()).for_each(|(g, d)| *g += d);
        let w = self.weight.value.view().into_dimensionality::<Ix2>().expect("2-d");
        w.t().dot(&dy)
    }
}
