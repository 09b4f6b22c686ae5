//! U-net producing per-pixel mitosis probabilities for the segmentation stream.
//!
//! Topology at depth `d`: `d` encoder levels of two 3x3 conv + ReLU followed by
//! 2x2 max pooling (channels `base * 2^k`), a two-conv bottleneck, `d` decoder
//! levels of a 2x2 up-convolution, skip concatenation and two 3x3 conv + ReLU,
//! and a final 1x1 convolution to one logit per pixel. That is `5d + 3` learned
//! layers, 23 at the default depth of 4.

use image::RgbImage;
use ndarray::{s, Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::SegTarget;
use crate::error::{Error, Result};
use crate::imaging::{resize_bilinear, resize_map, rgb_to_planar};
use crate::nn::{
    bce_with_logit, center_crop, checkpoint, concat_channels, relu, relu_backward, sigmoid,
    Conv2d, ConvCache, HasParams, MaxPool2, Param, PoolCache, Sgd, UpConv2x2,
};

pub const CHECKPOINT_MAGIC: &str = "unet-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Unpadded 3x3 convolutions; the output is smaller than the input.
    Valid,
    /// Zero-padded 3x3 convolutions; output size equals input size.
    Same,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnetConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub padding: Padding,
    /// Fixed `[height, width]` input, if any; must be divisible by `2^depth`.
    pub input_size: Option<[usize; 2]>,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Training epochs over the U-net training subset.
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for UnetConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            base_channels: 64,
            padding: Padding::Same,
            input_size: None,
            learning_rate: 1e-3,
            momentum: 0.9,
            iterations: 80,
            batch_size: 1,
            seed: 0,
        }
    }
}

impl UnetConfig {
    pub fn divisor(&self) -> usize {
        1 << self.depth
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 {
            return Err(Error::InvalidConfig("base_channels must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if let Some([h, w]) = self.input_size {
            let d = self.divisor();
            if h % d != 0 || w % d != 0 || h == 0 || w == 0 {
                return Err(Error::InvalidConfig(format!(
                    "input size {h}x{w} is not divisible by 2^depth = {d}"
                )));
            }
        }
        Ok(())
    }

    /// Learned layers: 4 convs per level, 2 in the bottleneck, 1 up-conv per level, 1 head.
    pub fn layer_count(&self) -> usize {
        5 * self.depth + 3
    }

    /// Output side length for an input side `n`, or `None` if it collapses.
    pub fn output_len(&self, n: usize) -> Option<usize> {
        let shrink = match self.padding {
            Padding::Same => 0,
            Padding::Valid => 4,
        };
        let mut n = n as isize;
        for _ in 0..self.depth {
            n -= shrink;
            if n < 2 {
                return None;
            }
            n /= 2;
        }
        n -= shrink;
        if n < 1 {
            return None;
        }
        for _ in 0..self.depth {
            n = 2 * n - shrink;
            if n < 1 {
                return None;
            }
        }
        Some(n as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct DoubleConv {
    a: Conv2d,
    b: Conv2d,
}

#[derive(Debug, Clone)]
struct DoubleConvCache {
    ca: ConvCache,
    ya: Array3<f64>,
    cb: ConvCache,
    yb: Array3<f64>,
}

impl DoubleConv {
    fn new(name: &str, cin: usize, cout: usize, pad: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            a: Conv2d::new(&format!("{name}.conv1"), cin, cout, 3, pad, rng),
            b: Conv2d::new(&format!("{name}.conv2"), cout, cout, 3, pad, rng),
        }
    }

    fn forward(&self, x: &Array3<f64>) -> DoubleConvCache {
        let (za, ca) = self.a.forward(x);
        let ya = relu(&za);
        let (zb, cb) = self.b.forward(&ya);
        let yb = relu(&zb);
        DoubleConvCache { ca, ya, cb, yb }
    }

    fn backward(&mut self, cache: &DoubleConvCache, dy: &Array3<f64>, need_input: bool) -> Option<Array3<f64>> {
        let dzb = relu_backward(&cache.yb, dy);
        let dya = self.b.backward(&cache.cb, &dzb, true).expect("input grad");
        let dza = relu_backward(&cache.ya, &dya);
        self.a.backward(&cache.ca, &dza, need_input)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.a.weight, &self.a.bias, &self.b.weight, &self.b.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.a.weight, &mut self.a.bias, &mut self.b.weight, &mut self.b.bias]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UNet {
    pub config: UnetConfig,
    encoders: Vec<DoubleConv>,
    bottleneck: DoubleConv,
    /// Indexed by level: `upconvs[k]` maps level `k + 1` channels to level `k`.
    upconvs: Vec<UpConv2x2>,
    decoders: Vec<DoubleConv>,
    head: Conv2d,
}

struct LevelCache {
    enc: DoubleConvCache,
    pool: PoolCache,
}

struct UpCache {
    up_in: Array2<f64>,
    skip_crop: (usize, usize, usize, usize),
    dec: DoubleConvCache,
}

pub struct ForwardCache {
    levels: Vec<LevelCache>,
    bottleneck: DoubleConvCache,
    /// Stored deepest-first, in execution order.
    ups: Vec<UpCache>,
    head: ConvCache,
}

/// Builds the network with fan-in-scaled normal weights drawn from `config.seed`.
pub fn build_unet(config: &UnetConfig) -> Result<UNet> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pad = match config.padding {
        Padding::Same => 1,
        Padding::Valid => 0,
    };
    let ch = |k: usize| config.base_channels << k;
    let mut encoders = Vec::with_capacity(config.depth);
    for k in 0..config.depth {
        let cin = if k == 0 { 3 } else { ch(k - 1) };
        encoders.push(DoubleConv::new(&format!("enc{k}"), cin, ch(k), pad, &mut rng));
    }
    let bottleneck = DoubleConv::new(
        "bottleneck",
        if config.depth == 0 { 3 } else { ch(config.depth - 1) },
        ch(config.depth),
        pad,
        &mut rng,
    );
    let mut upconvs = Vec::with_capacity(config.depth);
    let mut decoders = Vec::with_capacity(config.depth);
    for k in 0..config.depth {
        upconvs.push(UpConv2x2::new(&format!("up{k}"), ch(k + 1), ch(k), &mut rng));
        decoders.push(DoubleConv::new(&format!("dec{k}"), 2 * ch(k), ch(k), pad, &mut rng));
    }
    let head = Conv2d::new("head", ch(0), 1, 1, 0, &mut rng);
    Ok(UNet {
        config: config.clone(),
        encoders,
        bottleneck,
        upconvs,
        decoders,
        head,
    })
}

impl HasParams for UNet {
    fn params(&self) -> Vec<&Param> {
        let mut v = Vec::new();
        for e in &self.encoders {
            v.extend(e.params());
        }
        v.extend(self.bottleneck.params());
        for (u, d) in self.upconvs.iter().zip(&self.decoders) {
            v.push(&u.weight);
            v.push(&u.bias);
            v.extend(d.params());
        }
        v.push(&self.head.weight);
        v.push(&self.head.bias);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        for e in &mut self.encoders {
            v.extend(e.params_mut());
        }
        v.extend(self.bottleneck.params_mut());
        for (u, d) in self.upconvs.iter_mut().zip(&mut self.decoders) {
            v.push(&mut u.weight);
            v.push(&mut u.bias);
            v.extend(d.params_mut());
        }
        v.push(&mut self.head.weight);
        v.push(&mut self.head.bias);
        v
    }
}

impl UNet {
    /// Number of learned (weight-carrying) layers.
    pub fn layer_count(&self) -> usize {
        2 * self.encoders.len() + 2 + self.upconvs.len() + 2 * self.decoders.len() + 1
    }

    /// Filters of encoder level `k` (level `depth` is the bottleneck).
    pub fn encoder_channels(&self, k: usize) -> usize {
        if k < self.encoders.len() {
            self.encoders[k].b.out_channels()
        } else {
            self.bottleneck.b.out_channels()
        }
    }

    pub fn decoder_channels(&self, k: usize) -> usize {
        self.decoders[k].b.out_channels()
    }

    pub fn head_mut(&mut self) -> &mut Conv2d {
        &mut self.head
    }

    fn check_input(&self, x: &Array3<f64>) -> Result<()> {
        let (c, h, w) = x.dim();
        if c != 3 {
            return Err(Error::Shape(format!("U-net expects 3 channels, got {c}")));
        }
        let d = self.config.divisor();
        if h % d != 0 || w % d != 0 {
            return Err(Error::Shape(format!("input {h}x{w} not divisible by {d}")));
        }
        if let Some([eh, ew]) = self.config.input_size {
            if (h, w) != (eh, ew) {
                return Err(Error::Shape(format!("input {h}x{w} differs from configured {eh}x{ew}")));
            }
        }
        if self.config.output_len(h).is_none() || self.config.output_len(w).is_none() {
            return Err(Error::Shape(format!("input {h}x{w} too small for depth {}", self.config.depth)));
        }
        Ok(())
    }

    /// Per-pixel logits plus everything needed for the backward pass.
    pub fn forward_logits(&self, x: &Array3<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(x)?;
        let mut levels = Vec::with_capacity(self.encoders.len());
        let mut cur = x.clone();
        for enc in &self.encoders {
            let c = enc.forward(&cur);
            let (pooled, pool) = MaxPool2.forward(&c.yb);
            cur = pooled;
            levels.push(LevelCache { enc: c, pool });
        }
        let bottleneck = self.bottleneck.forward(&cur);
        let mut cur = bottleneck.yb.clone();
        let mut ups = Vec::with_capacity(self.decoders.len());
        for k in (0..self.decoders.len()).rev() {
            let (up, up_in) = self.upconvs[k].forward(&cur);
            let skip = &levels[k].enc.yb;
            let (_, uh, uw) = up.dim();
            let (_, sh, sw) = skip.dim();
            let skip_crop = ((sh - uh) / 2, (sw - uw) / 2, uh, uw);
            let cat = concat_channels(&center_crop(skip, uh, uw), &up);
            let dec = self.decoders[k].forward(&cat);
            cur = dec.yb.clone();
            ups.push(UpCache { up_in, skip_crop, dec });
        }
        let (logits, head) = self.head.forward(&cur);
        let logits = logits.index_axis_move(Axis(0), 0);
        Ok((
            logits,
            ForwardCache {
                levels,
                bottleneck,
                ups,
                head,
            },
        ))
    }

    /// Probability map in `[0, 1]`.
    pub fn forward(&self, x: &Array3<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_logits(x)?.0.mapv(sigmoid))
    }

    /// Accumulates parameter gradients for `dL/dlogits`.
    pub fn backward(&mut self, cache: &ForwardCache, dlogits: &Array2<f64>) {
        let (h, w) = dlogits.dim();
        let d = dlogits.clone().into_shape_with_order((1, h, w)).expect("reshape");
        let mut grad = self.head.backward(&cache.head, &d, true).expect("input grad");
        let depth = self.decoders.len();
        let mut skip_grads: Vec<Option<Array3<f64>>> = vec![None; depth];
        for (i, uc) in cache.ups.iter().enumerate().rev() {
            let k = depth - 1 - i;
            let dcat = self.decoders[k].backward(&uc.dec, &grad, true).expect("input grad");
            let skip_c = self.encoders[k].b.out_channels();
            let dskip_crop = dcat.slice(s![..skip_c, .., ..]).to_owned();
            let dup = dcat.slice(s![skip_c.., .., ..]).to_owned();
            let (_, sh, sw) = cache.levels[k].enc.yb.dim();
            let (top, left, uh, uw) = uc.skip_crop;
            let mut dskip = Array3::<f64>::zeros((skip_c, sh, sw));
            dskip
                .slice_mut(s![.., top..top + uh, left..left + uw])
                .assign(&dskip_crop);
            skip_grads[k] = Some(dskip);
            grad = self.upconvs[k].backward(&uc.up_in, &dup);
        }
        grad = self
            .bottleneck
            .backward(&cache.bottleneck, &grad, depth > 0)
            .unwrap_or_default();
        for k in (0..depth).rev() {
            let lc = &cache.levels[k];
            let mut dy = MaxPool2.backward(&lc.pool, &grad);
            if let Some(ds) = skip_grads[k].take() {
                dy += &ds;
            }
            grad = self.encoders[k]
                .backward(&lc.enc, &dy, k > 0)
                .unwrap_or_default();
        }
    }

    pub fn save(&self, path: &std::path::Path, extra: serde_json::Value, iterations_run: usize) -> Result<()> {
        let meta = serde_json::json!({
            "config": self.config,
            "seed": self.config.seed,
            "iterations": iterations_run,
            "extra": extra,
        });
        checkpoint::write(path, CHECKPOINT_MAGIC, &meta, &self.params())
    }

    pub fn load(path: &std::path::Path) -> Result<(Self, serde_json::Value)> {
        let loaded = checkpoint::read(path, CHECKPOINT_MAGIC)?;
        let config: UnetConfig = serde_json::from_value(loaded.meta["config"].clone())?;
        let mut model = build_unet(&config)?;
        loaded.restore_into(path, model.params_mut())?;
        Ok((model, loaded.meta))
    }
}

/// RGB tile to normalized U-net input: `v / 255 - 0.5`.
pub fn normalize_rgb(img: &RgbImage) -> Array3<f64> {
    rgb_to_planar(img).mapv(|v| v / 255.0 - 0.5)
}

/// Largest `(h, w)` not exceeding the tile that is divisible by `2^depth`.
pub fn unet_input_dims(tile_h: usize, tile_w: usize, depth: usize) -> (usize, usize) {
    let d = 1 << depth;
    ((tile_h / d).max(1) * d, (tile_w / d).max(1) * d)
}

/// Restores a map produced at U-net resolution to the original tile size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResizeBack {
    pub tile_h: usize,
    pub tile_w: usize,
    pub input_h: usize,
    pub input_w: usize,
}

impl ResizeBack {
    /// A `valid`-mode output covers the center of the input; it is zero-padded
    /// back to input size before the bilinear resize to tile size.
    pub fn apply(&self, map: &Array2<f64>) -> Array2<f64> {
        let (h, w) = map.dim();
        let full = if (h, w) == (self.input_h, self.input_w) {
            map.clone()
        } else {
            let mut full = Array2::<f64>::zeros((self.input_h, self.input_w));
            let (top, left) = ((self.input_h - h) / 2, (self.input_w - w) / 2);
            full.slice_mut(s![top..top + h, left..left + w]).assign(map);
            full
        };
        resize_map(&full, self.tile_h, self.tile_w)
    }
}

/// Downsizes a normalized `(3, h, w)` tile to U-net-compatible dims.
pub fn resize_for_unet(tile: &Array3<f64>, depth: usize) -> (Array3<f64>, ResizeBack) {
    let (_, h, w) = tile.dim();
    let (ih, iw) = unet_input_dims(h, w, depth);
    let resized = if (ih, iw) == (h, w) {
        tile.clone()
    } else {
        resize_bilinear(tile, ih, iw)
    };
    (
        resized,
        ResizeBack {
            tile_h: h,
            tile_w: w,
            input_h: ih,
            input_w: iw,
        },
    )
}

/// One training pair at U-net resolution.
#[derive(Debug, Clone)]
pub struct UnetSample {
    pub tile_id: String,
    pub input: Array3<f64>,
    /// Soft target in `[0, 1]`, same size as `input`.
    pub target: Array2<f64>,
}

impl UnetSample {
    pub fn from_tile(image: &RgbImage, target: &SegTarget, depth: usize) -> Self {
        let (input, back) = resize_for_unet(&normalize_rgb(image), depth);
        let t = target.mask.mapv(|v| v as f64);
        let t = if t.dim() == (back.input_h, back.input_w) {
            t
        } else {
            resize_map(&t, back.input_h, back.input_w)
        };
        Self {
            tile_id: target.tile_id.clone(),
            input,
            target: t,
        }
    }
}

/// Mean per-pixel binary cross-entropy and its gradient w.r.t. the logits.
/// In `valid` mode the target is center-cropped to the logit map.
pub fn bce_loss(logits: &Array2<f64>, target: &Array2<f64>) -> (f64, Array2<f64>) {
    let (h, w) = logits.dim();
    let (th, tw) = target.dim();
    let t = target.slice(s![(th - h) / 2..(th - h) / 2 + h, (tw - w) / 2..(tw - w) / 2 + w]);
    let n = (h * w) as f64;
    let mut loss = 0.0;
    let mut grad = Array2::<f64>::zeros((h, w));
    ndarray::Zip::from(&mut grad)
        .and(logits)
        .and(&t)
        .for_each(|g, &z, &y| {
            loss += bce_with_logit(z, y);
            *g = (sigmoid(z) - y) / n;
        });
    (loss / n, grad)
}

impl UNet {
    /// Loss on one sample, accumulating gradients scaled by `weight`.
    pub fn accumulate(&mut self, sample: &UnetSample, weight: f64) -> Result<f64> {
        let (logits, cache) = self.forward_logits(&sample.input)?;
        let (loss, mut grad) = bce_loss(&logits, &sample.target);
        grad *= weight;
        self.backward(&cache, &grad);
        Ok(loss)
    }

    pub fn loss(&self, sample: &UnetSample) -> Result<f64> {
        let (logits, _) = self.forward_logits(&sample.input)?;
        Ok(bce_loss(&logits, &sample.target).0)
    }
}

#[derive(Debug, Clone)]
pub struct UnetTraining {
    pub model: UNet,
    /// Mean loss over the training subset before the first update.
    pub initial_loss: f64,
    /// Mean training loss of every epoch, in order.
    pub epoch_losses: Vec<f64>,
}

/// Runs `config.iterations` epochs of SGD with momentum on mean per-pixel BCE.
pub fn train_unet(
    samples: &[UnetSample],
    config: &UnetConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<UnetTraining> {
    if samples.is_empty() {
        return Err(Error::Empty("U-net training subset".into()));
    }
    let mut model = build_unet(config)?;
    let initial_loss = samples
        .iter()
        .map(|s| model.loss(s))
        .sum::<Result<f64>>()?
        / samples.len() as f64;
    let mut opt = Sgd::new(config.learning_rate, config.momentum);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0001);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.iterations);
    for epoch in 0..config.iterations {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            model.zero_grad();
            let weight = 1.0 / batch.len() as f64;
            for &i in batch {
                total += model.accumulate(&samples[i], weight)?;
            }
            opt.step(&mut model.params_mut());
        }
        let mean = total / samples.len() as f64;
        on_epoch(epoch, mean);
        epoch_losses.push(mean);
    }
    Ok(UnetTraining {
        model,
        initial_loss,
        epoch_losses,
    })
}

/// Probability mask for one tile, at tile resolution.
pub fn predict_mask(model: &UNet, image: &RgbImage) -> Result<Array2<f64>> {
    let (input, back) = resize_for_unet(&normalize_rgb(image), model.config.depth);
    let prob = model.forward(&input)?;
    Ok(back.apply(&prob).mapv(|v| v.clamp(0.0, 1.0)))
}
