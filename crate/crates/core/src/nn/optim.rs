use ndarray::ArrayD;

use super::Param;

/// SGD with classical momentum: `v = m v + g; w -= lr v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<ArrayD<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            weight_decay: 0.0,
            velocity: Vec::new(),
        }
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }

    pub fn step(&mut self, params: &mut [&mut Param]) {
        if self.velocity.len() != params.len() {
            self.velocity = params.iter().map(|p| ArrayD::zeros(p.value.raw_dim())).collect();
        }
        for (p, v) in params.iter_mut().zip(self.velocity.iter_mut()) {
            let wd = self.weight_decay;
            ndarray::Zip::from(&mut *v)
                .and(&p.grad)
                .and(&p.value)
                .for_each(|v, &g, &w| *v = self.momentum * *v + g + wd * w);
            p.value.scaled_add(-self.lr, v);
        }
    }
}
