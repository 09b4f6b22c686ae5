use image::RgbImage;
use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{rgb_input, seg_input, LossBreakdown, TwoStreamDetector};
use super::{Detection, DetectorConfig};
use crate::dataset::{tile_frame, HpfFrame, TileGeometry, TilingConfig};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::nn::{HasParams, Sgd};
use crate::unet::{predict_mask, UNet};

/// A training tile with its predicted segmentation mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DetTile {
    pub tile_id: String,
    pub image: RgbImage,
    /// U-net probability map at tile resolution.
    pub seg_prob: Array2<f64>,
    pub gt_boxes: Vec<BBox>,
}

impl DetTile {
    pub fn new(tile_id: impl Into<String>, image: RgbImage, seg_prob: Array2<f64>, gt_boxes: Vec<BBox>) -> Result<Self> {
        let tile_id = tile_id.into();
        let (w, h) = image.dimensions();
        if seg_prob.dim() != (h as usize, w as usize) {
            return Err(Error::Shape(format!(
                "tile `{tile_id}`: mask {:?} does not match image {h}x{w}",
                seg_prob.dim()
            )));
        }
        Ok(Self {
            tile_id,
            image,
            seg_prob,
            gt_boxes,
        })
    }
}

#[derive(Debug, Clone)]
pub struct DetTraining {
    pub model: TwoStreamDetector,
    /// Component losses of every optimizer step, in order.
    pub losses: Vec<LossBreakdown>,
}

/// Joint training: every step draws one tile, samples anchors and RoIs
/// against the current RPN, and takes one SGD step on the summed loss.
pub fn train_detector(
    tiles: &[DetTile],
    config: &DetectorConfig,
    mut on_step: impl FnMut(usize, &LossBreakdown),
) -> Result<DetTraining> {
    let mut model = TwoStreamDetector::new(config)?;
    let tiles: Vec<&DetTile> = tiles
        .iter()
        .filter(|t| !config.skip_empty_tiles || !t.gt_boxes.is_empty())
        .collect();
    if config.steps > 0 && tiles.is_empty() {
        let what = if config.skip_empty_tiles { "detector training tiles with mitoses" } else { "detector training tiles" };
        return Err(Error::Empty(what.into()));
    }
    let inputs: Vec<(Array3<f64>, Array3<f64>)> = tiles
        .iter()
        .map(|t| (rgb_input(&t.image, config.backbone), seg_input(&t.seg_prob, config.backbone)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(7);
    let mut opt = Sgd::new(config.learning_rate, config.momentum).with_weight_decay(config.weight_decay);
    let mut order: Vec<usize> = Vec::new();
    let mut losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        if order.is_empty() {
            order = (0..tiles.len()).collect();
            order.shuffle(&mut rng);
            order.reverse();
        }
        let i = order.pop().expect("refilled");
        let (rgb, seg) = &inputs[i];
        let batch = model.make_batch(&tiles[i].tile_id, rgb.clone(), seg.clone(), &tiles[i].gt_boxes, &mut rng)?;
        model.zero_grad();
        let loss = model.loss_and_grad(&batch)?;
        if !loss.total.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "detector loss diverged at step {step} on tile `{}`",
                tiles[i].tile_id
            )));
        }
        opt.lr = config.lr_at(step);
        opt.step(&mut model.params_mut());
        on_step(step, &loss);
        losses.push(loss);
    }
    Ok(DetTraining { model, losses })
}

/// Detections of one tile mapped back to frame coordinates.
pub fn detect_tile(
    model: &TwoStreamDetector,
    image: &RgbImage,
    seg_prob: &Array2<f64>,
    geometry: &TileGeometry,
) -> Result<Vec<Detection>> {
    let kind = model.config.backbone;
    let local = model.detect(&rgb_input(image, kind), &seg_input(seg_prob, kind))?;
    Ok(local
        .into_iter()
        .map(|d| Detection {
            bbox: geometry.box_to_frame(&d.bbox),
            score: d.score,
        })
        .collect())
}

/// Tiles a frame, segments every tile, detects per tile and merges the results.
pub fn detect_frame(
    model: &TwoStreamDetector,
    unet: &UNet,
    frame: &HpfFrame,
    tiling: &TilingConfig,
) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for tile in tile_frame(frame, tiling)?.tiles {
        let prob = predict_mask(unet, &tile.image)?;
        out.extend(detect_tile(model, &tile.image, &prob, &tile.geometry)?);
    }
    Ok(out)
}
