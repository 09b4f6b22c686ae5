use std::path::Path;

use image::RgbImage;
use ndarray::{Array1, Array2, Array3, ArrayView1};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::backbone::{Backbone, BackboneCache};
use super::fusion::{fuse, fuse_backward, FusionCache, TensorSketch};
use super::loss::{rpn_loss_from_logits, smooth_l1, smooth_l1_grad, softmax2};
use super::roi::{roi_pool, roi_pool_backward, sample_proposals_for_training, RoiPoolCache, RoiSample};
use super::{BackboneKind, Detection, DetectorConfig, FusionMode, RpnConfig, CHECKPOINT_MAGIC};
use crate::error::{Error, Result};
use crate::geometry::{
    assign_anchor_labels, clip_box, decode_box, generate_anchors, nms, score_order, AnchorGrid, AnchorLabel, BBox,
};
use crate::imaging::rgb_to_planar;
use crate::nn::{checkpoint, relu, relu_backward, Conv2d, ConvCache, HasParams, Linear, Param};

/// Class indices of the two-way classifier.
pub const MITOSIS: usize = 0;
pub const BACKGROUND: usize = 1;

const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// RGB stream input: `v / 255 - 0.5` (tiny) or ImageNet-standardized (VGG-16).
pub fn rgb_input(img: &RgbImage, kind: BackboneKind) -> Array3<f64> {
    let mut x = rgb_to_planar(img) / 255.0;
    standardize(&mut x, kind);
    x
}

/// Segmentation stream input: the probability map replicated to 3 channels,
/// then shifted like an RGB input.
pub fn seg_input(prob: &Array2<f64>, kind: BackboneKind) -> Array3<f64> {
    let (h, w) = prob.dim();
    let mut x = Array3::from_shape_fn((3, h, w), |(_, y, x)| prob[[y, x]]);
    standardize(&mut x, kind);
    x
}

fn standardize(x: &mut Array3<f64>, kind: BackboneKind) {
    match kind {
        BackboneKind::TinyRandom => *x -= 0.5,
        BackboneKind::Vgg16Pretrained => {
            for (c, mut plane) in x.outer_iter_mut().enumerate() {
                plane.mapv_inplace(|v| (v - IMAGENET_MEAN[c]) / IMAGENET_STD[c]);
            }
        }
    }
}

/// Last-layer feature maps of both streams.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamFeatures {
    pub rgb_features: Array3<f64>,
    pub seg_features: Array3<f64>,
}

/// Per-anchor RPN outputs in anchor-grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct RpnOutput {
    pub logits: Vec<f64>,
    pub deltas: Vec<[f64; 4]>,
}

impl RpnOutput {
    pub fn objectness(&self) -> Vec<f64> {
        self.logits.iter().map(|&z| crate::nn::sigmoid(z)).collect()
    }
}

pub struct RpnCache {
    conv: ConvCache,
    hidden: Array3<f64>,
    cls: ConvCache,
    reg: ConvCache,
    dims: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub bbox: BBox,
    pub objectness: f64,
}

/// Decode, clip, drop boxes with a side under `min_size`, keep the top
/// `pre_nms_top_k` by objectness, suppress at `nms_thresh`, keep `post_nms_top_k`.
pub fn propose_regions(
    objectness: &[f64],
    deltas: &[[f64; 4]],
    anchors: &[BBox],
    width: f64,
    height: f64,
    cfg: &RpnConfig,
) -> Vec<Proposal> {
    let boxes: Vec<BBox> = deltas
        .iter()
        .zip(anchors)
        .map(|(d, a)| clip_box(&decode_box(d, a), width, height))
        .collect();
    let valid: Vec<usize> = (0..boxes.len())
        .filter(|&i| boxes[i].width() >= cfg.min_size && boxes[i].height() >= cfg.min_size)
        .collect();
    let scores: Vec<f64> = valid.iter().map(|&i| objectness[i]).collect();
    let top: Vec<usize> = score_order(&scores)
        .into_iter()
        .take(cfg.pre_nms_top_k)
        .map(|k| valid[k])
        .collect();
    let cand: Vec<BBox> = top.iter().map(|&i| boxes[i]).collect();
    let cand_scores: Vec<f64> = top.iter().map(|&i| objectness[i]).collect();
    nms(&cand, &cand_scores, cfg.nms_thresh)
        .into_iter()
        .take(cfg.post_nms_top_k)
        .map(|k| Proposal {
            bbox: cand[k],
            objectness: cand_scores[k],
        })
        .collect()
}

/// A sampled anchor for the RPN loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorSample {
    pub index: usize,
    /// 1 for foreground, 0 for background.
    pub label: f64,
    pub target: [f64; 4],
}

/// Everything one optimization step needs, with proposals frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub tile_id: String,
    pub rgb_input: Array3<f64>,
    pub seg_input: Array3<f64>,
    pub gt_boxes: Vec<BBox>,
    pub anchor_samples: Vec<AnchorSample>,
    /// N_reg: number of anchor positions (feature cells).
    pub n_reg: usize,
    pub rois: Vec<RoiSample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct LossBreakdown {
    pub rpn_cls: f64,
    pub rpn_reg: f64,
    /// `rpn_cls + rpn_reg`
    pub rpn: f64,
    pub mitosis: f64,
    pub bbox: f64,
    /// `rpn + mitosis + bbox`
    pub total: f64,
}

struct RoiCache {
    rgb_pool: RoiPoolCache,
    seg_pool: RoiPoolCache,
    fused: Array1<f64>,
    fusion: FusionCache,
    flat_rgb: Array1<f64>,
    dlogits: [f64; 2],
    ddeltas: Option<[f64; 4]>,
}

pub struct BatchCache {
    rgb: BackboneCache,
    seg: BackboneCache,
    feat_dims: (usize, usize, usize),
    rpn: RpnCache,
    rpn_dlogits: Vec<(usize, f64)>,
    rpn_ddeltas: Vec<(usize, [f64; 4])>,
    rois: Vec<RoiCache>,
}

/// Output of the detection heads for one RoI.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub probs: [f64; 2],
    pub deltas: [f64; 4],
    pub fused_raw: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStreamDetector {
    pub config: DetectorConfig,
    pub rgb: Backbone,
    pub seg: Backbone,
    pub rpn_conv: Conv2d,
    pub rpn_cls: Conv2d,
    pub rpn_reg: Conv2d,
    pub cls_head: Linear,
    pub bbox_head: Linear,
    pub sketch: Option<TensorSketch>,
}

fn normal_fill<R: Rng + ?Sized>(p: &mut Param, std: f64, rng: &mut R) {
    let n = Normal::new(0.0, std).expect("finite std");
    p.value.iter_mut().for_each(|v| *v = n.sample(rng));
}

impl TwoStreamDetector {
    /// Builds both streams (loading VGG-16 weights if configured) and the heads.
    pub fn new(config: &DetectorConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let rgb = Backbone::build(config, "rgb", &mut rng)?;
        let seg = Backbone::build(config, "seg", &mut rng)?;
        Ok(Self::assemble(config, rgb, seg, &mut rng))
    }

    fn assemble(config: &DetectorConfig, rgb: Backbone, seg: Backbone, rng: &mut ChaCha8Rng) -> Self {
        let c = rgb.out_channels();
        let a = config.anchors.scales.len() * config.anchors.ratios.len();
        let hidden = config.rpn.hidden_channels;
        let p = config.roi.pool_size;
        let rpn_conv = Conv2d::new("rpn.conv", c, hidden, 3, 1, rng);
        let mut rpn_cls = Conv2d::new("rpn.cls", hidden, a, 1, 0, rng);
        let mut rpn_reg = Conv2d::new("rpn.reg", hidden, 4 * a, 1, 0, rng);
        normal_fill(&mut rpn_cls.weight, 0.01, rng);
        normal_fill(&mut rpn_reg.weight, 0.01, rng);
        let (fused_dim, sketch) = match config.fusion {
            FusionMode::FullBilinear => (c * c, None),
            FusionMode::CompactProjection { dim } => (dim, Some(TensorSketch::new(c, dim, config.seed ^ 0x5ca1_ab1e))),
        };
        let mut cls_head = Linear::zeroed("head.cls", fused_dim, 2);
        normal_fill(&mut cls_head.weight, 0.01, rng);
        let mut bbox_head = Linear::zeroed("head.bbox", c * p * p, 4);
        normal_fill(&mut bbox_head.weight, 0.001, rng);
        Self {
            config: config.clone(),
            rgb,
            seg,
            rpn_conv,
            rpn_cls,
            rpn_reg,
            cls_head,
            bbox_head,
            sketch,
        }
    }

    pub fn stride(&self) -> usize {
        self.rgb.stride()
    }

    pub fn anchors_per_cell(&self) -> usize {
        self.rpn_cls.out_channels()
    }

    pub fn anchor_grid(&self, fh: usize, fw: usize) -> Result<AnchorGrid> {
        generate_anchors(fh, fw, &self.config.anchor_spec(self.stride()))
    }

    pub fn features(&self, rgb_in: &Array3<f64>, seg_in: &Array3<f64>) -> Result<StreamFeatures> {
        Ok(self.features_cached(rgb_in, seg_in)?.0)
    }

    fn features_cached(
        &self,
        rgb_in: &Array3<f64>,
        seg_in: &Array3<f64>,
    ) -> Result<(StreamFeatures, BackboneCache, BackboneCache)> {
        if rgb_in.dim() != seg_in.dim() {
            return Err(Error::Shape(format!(
                "stream inputs differ: rgb {:?} vs seg {:?}",
                rgb_in.dim(),
                seg_in.dim()
            )));
        }
        if rgb_in.dim().0 != 3 {
            return Err(Error::Shape(format!("stream inputs need 3 channels, got {}", rgb_in.dim().0)));
        }
        let (fr, cr) = self.rgb.forward(rgb_in);
        let (fs, cs) = self.seg.forward(seg_in);
        Ok((
            StreamFeatures {
                rgb_features: fr,
                seg_features: fs,
            },
            cr,
            cs,
        ))
    }

    /// Objectness logits and deltas for every anchor of the feature grid.
    pub fn rpn_forward(&self, rgb_features: &Array3<f64>) -> RpnOutput {
        self.rpn_forward_cached(rgb_features).0
    }

    fn rpn_forward_cached(&self, f: &Array3<f64>) -> (RpnOutput, RpnCache) {
        let (hz, conv) = self.rpn_conv.forward(f);
        let hidden = relu(&hz);
        let (cl, cls) = self.rpn_cls.forward(&hidden);
        let (rg, reg) = self.rpn_reg.forward(&hidden);
        let (_, fh, fw) = f.dim();
        let a = self.anchors_per_cell();
        let mut logits = Vec::with_capacity(fh * fw * a);
        let mut deltas = Vec::with_capacity(fh * fw * a);
        for y in 0..fh {
            for x in 0..fw {
                for k in 0..a {
                    logits.push(cl[[k, y, x]]);
                    deltas.push([rg[[4 * k, y, x]], rg[[4 * k + 1, y, x]], rg[[4 * k + 2, y, x]], rg[[4 * k + 3, y, x]]]);
                }
            }
        }
        (
            RpnOutput { logits, deltas },
            RpnCache {
                conv,
                hidden,
                cls,
                reg,
                dims: (fh, fw),
            },
        )
    }

    /// Proposals for an image of `width x height` pixels.
    pub fn proposals(&self, rgb_features: &Array3<f64>, width: f64, height: f64) -> Result<Vec<Proposal>> {
        let (_, fh, fw) = rgb_features.dim();
        let grid = self.anchor_grid(fh, fw)?;
        let out = self.rpn_forward(rgb_features);
        Ok(propose_regions(
            &out.objectness(),
            &out.deltas,
            &grid.anchors,
            width,
            height,
            &self.config.rpn,
        ))
    }

    fn fusion_eps(&self) -> f64 {
        self.config.fusion_eps
    }

    /// Classification and box-regression outputs for one RoI.
    pub fn heads(&self, feats: &StreamFeatures, roi: &BBox) -> Result<HeadOutput> {
        let stride = self.stride() as f64;
        let p = self.config.roi.pool_size;
        let (r, _) = roi_pool(&feats.rgb_features, roi, stride, p);
        let (s, _) = roi_pool(&feats.seg_features, roi, stride, p);
        let (fused, _) = fuse(&r, &s, self.sketch.as_ref(), self.fusion_eps())?;
        let logits = self.cls_head.forward(fused.fused.view());
        Ok(HeadOutput {
            probs: softmax2([logits[0], logits[1]]),
            deltas: self.bbox_deltas(&r),
            fused_raw: fused.raw,
        })
    }

    /// Box-regression deltas from an RGB RoI block.
    pub fn bbox_deltas(&self, rgb_block: &Array3<f64>) -> [f64; 4] {
        let flat = ArrayView1::from(rgb_block.as_slice().expect("standard layout"));
        let d = self.bbox_head.forward(flat);
        [d[0], d[1], d[2], d[3]]
    }

    /// Labels anchors and RoIs for one tile against the current RPN.
    pub fn make_batch<R: Rng + ?Sized>(
        &self,
        tile_id: &str,
        rgb_in: Array3<f64>,
        seg_in: Array3<f64>,
        gt_boxes: &[BBox],
        rng: &mut R,
    ) -> Result<TrainBatch> {
        let (_, h, w) = rgb_in.dim();
        let (feats, _, _) = self.features_cached(&rgb_in, &seg_in)?;
        let (_, fh, fw) = feats.rgb_features.dim();
        let grid = self.anchor_grid(fh, fw)?;
        let rcfg = &self.config.rpn;
        let labels = assign_anchor_labels(&grid.anchors, gt_boxes, rcfg.fg_iou, rcfg.bg_iou)?;
        let mut fg: Vec<usize> = labels.foreground().collect();
        let mut bg: Vec<usize> = labels.background().collect();
        fg.shuffle(rng);
        bg.shuffle(rng);
        let n_fg = fg.len().min((rcfg.fg_fraction * rcfg.batch_size as f64).round() as usize);
        let n_bg = bg.len().min(rcfg.batch_size - n_fg);
        let mut anchor_samples: Vec<AnchorSample> = fg[..n_fg]
            .iter()
            .map(|&i| AnchorSample {
                index: i,
                label: 1.0,
                target: labels.targets[i].expect("foreground target"),
            })
            .collect();
        anchor_samples.extend(bg[..n_bg].iter().map(|&i| AnchorSample {
            index: i,
            label: 0.0,
            target: [0.0; 4],
        }));
        debug_assert!(anchor_samples
            .iter()
            .all(|s| (s.label == 1.0) == matches!(labels.labels[s.index], AnchorLabel::Foreground { .. })));

        let out = self.rpn_forward(&feats.rgb_features);
        let mut boxes: Vec<BBox> = propose_regions(&out.objectness(), &out.deltas, &grid.anchors, w as f64, h as f64, rcfg)
            .into_iter()
            .map(|p| p.bbox)
            .collect();
        boxes.extend(gt_boxes.iter().copied());
        let rois = sample_proposals_for_training(
            &boxes,
            gt_boxes,
            self.config.roi.samples_per_image,
            self.config.roi.fg_fraction,
            self.config.roi.fg_iou,
            self.config.roi.bg_iou,
            rng,
        )?;
        Ok(TrainBatch {
            tile_id: tile_id.to_string(),
            rgb_input: rgb_in,
            seg_input: seg_in,
            gt_boxes: gt_boxes.to_vec(),
            anchor_samples,
            n_reg: fh * fw,
            rois,
        })
    }

    /// Loss components on a fixed batch.
    pub fn loss(&self, batch: &TrainBatch) -> Result<LossBreakdown> {
        Ok(self.forward_batch(batch)?.0)
    }

    /// Loss components on a fixed batch; accumulates gradients of the total.
    pub fn loss_and_grad(&mut self, batch: &TrainBatch) -> Result<LossBreakdown> {
        let (loss, cache) = self.forward_batch(batch)?;
        self.backward_batch(&cache);
        Ok(loss)
    }

    fn forward_batch(&self, batch: &TrainBatch) -> Result<(LossBreakdown, BatchCache)> {
        let (feats, rgb, seg) = self.features_cached(&batch.rgb_input, &batch.seg_input)?;
        let (rpn_out, rpn) = self.rpn_forward_cached(&feats.rgb_features);

        let take = |s: &AnchorSample| (rpn_out.logits[s.index], rpn_out.deltas[s.index]);
        let logits: Vec<f64> = batch.anchor_samples.iter().map(|s| take(s).0).collect();
        let deltas: Vec<[f64; 4]> = batch.anchor_samples.iter().map(|s| take(s).1).collect();
        let labels: Vec<f64> = batch.anchor_samples.iter().map(|s| s.label).collect();
        let targets: Vec<[f64; 4]> = batch.anchor_samples.iter().map(|s| s.target).collect();
        let (rpn_terms, dl, dd) = rpn_loss_from_logits(
            &logits,
            &labels,
            &deltas,
            &targets,
            self.config.lambda,
            batch.anchor_samples.len().max(1),
            batch.n_reg.max(1),
        )?;
        let idx: Vec<usize> = batch.anchor_samples.iter().map(|s| s.index).collect();
        let rpn_dlogits = idx.iter().copied().zip(dl).collect();
        let rpn_ddeltas = idx.iter().copied().zip(dd).collect();

        let stride = self.stride() as f64;
        let p = self.config.roi.pool_size;
        let n = batch.rois.len().max(1) as f64;
        let mut mitosis = 0.0;
        let mut bbox = 0.0;
        let mut rois = Vec::with_capacity(batch.rois.len());
        for roi in &batch.rois {
            let (r, rgb_pool) = roi_pool(&feats.rgb_features, &roi.bbox, stride, p);
            let (s, seg_pool) = roi_pool(&feats.seg_features, &roi.bbox, stride, p);
            let (fused, fusion) = fuse(&r, &s, self.sketch.as_ref(), self.fusion_eps())?;
            let logits = self.cls_head.forward(fused.fused.view());
            let probs = softmax2([logits[0], logits[1]]);
            let label = if roi.is_foreground() { MITOSIS } else { BACKGROUND };
            mitosis += -probs[label].max(f64::MIN_POSITIVE).ln();
            let mut dlogits = probs;
            dlogits[label] -= 1.0;
            dlogits.iter_mut().for_each(|g| *g /= n);
            let flat_rgb = Array1::from(r.as_slice().expect("standard layout").to_vec());
            let ddeltas = roi.target.map(|t| {
                let d = self.bbox_head.forward(flat_rgb.view());
                let mut g = [0.0; 4];
                for k in 0..4 {
                    bbox += smooth_l1(d[k] - t[k]);
                    g[k] = smooth_l1_grad(d[k] - t[k]) / n;
                }
                g
            });
            rois.push(RoiCache {
                rgb_pool,
                seg_pool,
                fused: fused.fused,
                fusion,
                flat_rgb,
                dlogits,
                ddeltas,
            });
        }
        let rpn_total = rpn_terms.cls + rpn_terms.reg;
        let (mitosis, bbox) = (mitosis / n, bbox / n);
        let loss = LossBreakdown {
            rpn_cls: rpn_terms.cls,
            rpn_reg: rpn_terms.reg,
            rpn: rpn_total,
            mitosis,
            bbox,
            total: rpn_total + mitosis + bbox,
        };
        Ok((
            loss,
            BatchCache {
                rgb,
                seg,
                feat_dims: feats.rgb_features.dim(),
                rpn,
                rpn_dlogits,
                rpn_ddeltas,
                rois,
            },
        ))
    }

    fn backward_batch(&mut self, cache: &BatchCache) {
        let mut d_rgb = Array3::<f64>::zeros(cache.feat_dims);
        let mut d_seg = Array3::<f64>::zeros(cache.feat_dims);
        let p = self.config.roi.pool_size;
        let c = cache.feat_dims.0;
        for rc in &cache.rois {
            let dfused = self
                .cls_head
                .backward(rc.fused.view(), ArrayView1::from(&rc.dlogits[..]));
            let (dr, ds) = fuse_backward(&rc.fusion, self.sketch.as_ref(), &dfused);
            roi_pool_backward(&rc.rgb_pool, &dr, &mut d_rgb);
            roi_pool_backward(&rc.seg_pool, &ds, &mut d_seg);
            if let Some(dd) = rc.ddeltas {
                let dx = self.bbox_head.backward(rc.flat_rgb.view(), ArrayView1::from(&dd[..]));
                let dx = dx.into_shape_with_order((c, p, p)).expect("pool block");
                roi_pool_backward(&rc.rgb_pool, &dx, &mut d_rgb);
            }
        }

        let (fh, fw) = cache.rpn.dims;
        let a = self.anchors_per_cell();
        let mut dcl = Array3::<f64>::zeros((a, fh, fw));
        let mut drg = Array3::<f64>::zeros((4 * a, fh, fw));
        for &(i, g) in &cache.rpn_dlogits {
            let (cell, k) = (i / a, i % a);
            dcl[[k, cell / fw, cell % fw]] += g;
        }
        for &(i, g) in &cache.rpn_ddeltas {
            let (cell, k) = (i / a, i % a);
            for j in 0..4 {
                drg[[4 * k + j, cell / fw, cell % fw]] += g[j];
            }
        }
        let mut dh = self.rpn_cls.backward(&cache.rpn.cls, &dcl, true).expect("input grad");
        dh += &self.rpn_reg.backward(&cache.rpn.reg, &drg, true).expect("input grad");
        let dhz = relu_backward(&cache.rpn.hidden, &dh);
        d_rgb += &self.rpn_conv.backward(&cache.rpn.conv, &dhz, true).expect("input grad");

        self.rgb.backward(&cache.rgb, &d_rgb);
        self.seg.backward(&cache.seg, &d_seg);
    }

    /// Detections in tile-local coordinates, after score threshold and final NMS.
    pub fn detect(&self, rgb_in: &Array3<f64>, seg_in: &Array3<f64>) -> Result<Vec<Detection>> {
        let (_, h, w) = rgb_in.dim();
        let feats = self.features(rgb_in, seg_in)?;
        let proposals = self.proposals(&feats.rgb_features, w as f64, h as f64)?;
        let mut boxes = Vec::new();
        let mut scores = Vec::new();
        for prop in &proposals {
            let out = self.heads(&feats, &prop.bbox)?;
            let score = out.probs[MITOSIS];
            if score < self.config.score_thresh {
                continue;
            }
            let b = clip_box(&decode_box(&out.deltas, &prop.bbox), w as f64, h as f64);
            if b.width() > 0.0 && b.height() > 0.0 {
                boxes.push(b);
                scores.push(score);
            }
        }
        Ok(nms(&boxes, &scores, self.config.final_nms_thresh)
            .into_iter()
            .map(|i| Detection {
                bbox: boxes[i],
                score: scores[i],
            })
            .collect())
    }

    pub fn save(&self, path: &Path, extra: serde_json::Value, steps_run: usize) -> Result<()> {
        let meta = serde_json::json!({
            "config": self.config,
            "seed": self.config.seed,
            "steps": steps_run,
            "extra": extra,
        });
        checkpoint::write(path, CHECKPOINT_MAGIC, &meta, &self.params())
    }

    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        let loaded = checkpoint::read(path, CHECKPOINT_MAGIC)?;
        let config: DetectorConfig = serde_json::from_value(loaded.meta["config"].clone())?;
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (rgb, seg) = match config.backbone {
            BackboneKind::TinyRandom => (
                Backbone::tiny("rgb", config.tiny_channels, &mut rng),
                Backbone::tiny("seg", config.tiny_channels, &mut rng),
            ),
            BackboneKind::Vgg16Pretrained => (Backbone::vgg16("rgb", &mut rng), Backbone::vgg16("seg", &mut rng)),
        };
        let mut model = Self::assemble(&config, rgb, seg, &mut rng);
        loaded.restore_into(path, model.params_mut())?;
        Ok((model, loaded.meta))
    }
}

impl HasParams for TwoStreamDetector {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.rgb.params();
        v.extend(self.seg.params());
        for c in [&self.rpn_conv, &self.rpn_cls, &self.rpn_reg] {
            v.push(&c.weight);
            v.push(&c.bias);
        }
        for l in [&self.cls_head, &self.bbox_head] {
            v.push(&l.weight);
            v.push(&l.bias);
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.rgb.params_mut();
        v.extend(self.seg.params_mut());
        for c in [&mut self.rpn_conv, &mut self.rpn_cls, &mut self.rpn_reg] {
            v.push(&mut c.weight);
            v.push(&mut c.bias);
        }
        for l in [&mut self.cls_head, &mut self.bbox_head] {
            v.push(&mut l.weight);
            v.push(&mut l.bias);
        }
        v
    }
}
