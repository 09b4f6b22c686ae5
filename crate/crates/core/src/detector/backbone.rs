use std::path::Path;

use ndarray::{Array3, ArrayD, IxDyn};
use rand::Rng;
use safetensors::{Dtype, SafeTensors};

use super::{BackboneKind, DetectorConfig};
use crate::error::{Error, Result};
use crate::nn::{relu, relu_backward, Conv2d, ConvCache, MaxPool2, Param, PoolCache};

/// Indices of the 13 convolutions inside torchvision's `vgg16().features`.
pub const VGG16_LAYER_INDICES: [usize; 13] = [0, 2, 5, 7, 10, 12, 14, 17, 19, 21, 24, 26, 28];
const VGG16_CHANNELS: [usize; 13] = [64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512];
/// Convs followed by 2x2 max pooling (the fifth pool is dropped, giving stride 16).
const VGG16_POOL_AFTER: [usize; 4] = [1, 3, 6, 9];

/// Stack of 3x3 conv + ReLU layers, some followed by 2x2 max pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    pub convs: Vec<Conv2d>,
    pub pool_after: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct BackboneCache {
    layers: Vec<(ConvCache, Array3<f64>, Option<PoolCache>)>,
}

impl Backbone {
    pub fn tiny<R: Rng + ?Sized>(prefix: &str, channels: usize, rng: &mut R) -> Self {
        let convs = (0..4)
            .map(|i| {
                let cin = if i == 0 { 3 } else { channels };
                Conv2d::new(&format!("{prefix}.conv{i}"), cin, channels, 3, 1, rng)
            })
            .collect();
        Self {
            convs,
            pool_after: vec![true, true, true, false],
        }
    }

    /// VGG-16 topology with He-initialized weights.
    pub fn vgg16<R: Rng + ?Sized>(prefix: &str, rng: &mut R) -> Self {
        let mut cin = 3;
        let convs = VGG16_LAYER_INDICES
            .iter()
            .zip(VGG16_CHANNELS)
            .map(|(&idx, cout)| {
                let c = Conv2d::new(&format!("{prefix}.features.{idx}"), cin, cout, 3, 1, rng);
                cin = cout;
                c
            })
            .collect();
        Self {
            convs,
            pool_after: (0..13).map(|i| VGG16_POOL_AFTER.contains(&i)).collect(),
        }
    }

    pub fn build<R: Rng + ?Sized>(config: &DetectorConfig, prefix: &str, rng: &mut R) -> Result<Self> {
        match config.backbone {
            BackboneKind::TinyRandom => Ok(Self::tiny(prefix, config.tiny_channels, rng)),
            BackboneKind::Vgg16Pretrained => {
                let mut b = Self::vgg16(prefix, rng);
                b.load_vgg16(&config.pretrained_path)?;
                Ok(b)
            }
        }
    }

    /// Copies `features.<i>.weight/bias` tensors (F32 or F64) into the convs.
    pub fn load_vgg16(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|_| Error::MissingPretrained(path.to_path_buf()))?;
        let st = SafeTensors::deserialize(&bytes).map_err(|e| Error::Checkpoint {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        for (conv, idx) in self.convs.iter_mut().zip(VGG16_LAYER_INDICES) {
            for (param, kind) in [(&mut conv.weight, "weight"), (&mut conv.bias, "bias")] {
                let name = format!("features.{idx}.{kind}");
                let fail = |reason: String| Error::Checkpoint {
                    path: path.to_path_buf(),
                    reason: format!("{name}: {reason}"),
                };
                let view = st.tensor(&name).map_err(|e| fail(e.to_string()))?;
                if view.shape() != param.shape() {
                    return Err(fail(format!("shape {:?}, expected {:?}", view.shape(), param.shape())));
                }
                let values: Vec<f64> = match view.dtype() {
                    Dtype::F32 => view
                        .data()
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                        .collect(),
                    Dtype::F64 => view
                        .data()
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect(),
                    other => return Err(fail(format!("unsupported dtype {other:?}"))),
                };
                param.value = ArrayD::from_shape_vec(IxDyn(view.shape()), values)
                    .map_err(|e| fail(e.to_string()))?;
            }
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        1 << self.pool_after.iter().filter(|&&p| p).count()
    }

    pub fn out_channels(&self) -> usize {
        self.convs.last().map_or(3, Conv2d::out_channels)
    }

    /// Feature map size for an `h x w` input.
    pub fn feature_hw(&self, mut h: usize, mut w: usize) -> (usize, usize) {
        for &p in &self.pool_after {
            if p {
                (h, w) = MaxPool2::out_hw(h, w);
            }
        }
        (h, w)
    }

    pub fn forward(&self, x: &Array3<f64>) -> (Array3<f64>, BackboneCache) {
        let mut cur = x.clone();
        let mut layers = Vec::with_capacity(self.convs.len());
        for (conv, &pool) in self.convs.iter().zip(&self.pool_after) {
            let (z, cc) = conv.forward(&cur);
            let y = relu(&z);
            if pool {
                let (p, pc) = MaxPool2.forward(&y);
                cur = p;
                layers.push((cc, y, Some(pc)));
            } else {
                cur = y.clone();
                layers.push((cc, y, None));
            }
        }
        (cur, BackboneCache { layers })
    }

    /// Accumulates parameter gradients; the input gradient is not formed.
    pub fn backward(&mut self, cache: &BackboneCache, dy: &Array3<f64>) {
        let mut grad = dy.clone();
        for (i, (conv, (cc, y, pc))) in self.convs.iter_mut().zip(&cache.layers).enumerate().rev() {
            if let Some(pc) = pc {
                grad = MaxPool2.backward(pc, &grad);
            }
            let dz = relu_backward(y, &grad);
            match conv.backward(cc, &dz, i > 0) {
                Some(g) => grad = g,
                None => break,
            }
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        self.convs.iter().flat_map(|c| [&c.weight, &c.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.convs.iter_mut().flat_map(|c| [&mut c.weight, &mut c.bias]).collect()
    }
}
