//! Two-stream Faster R-CNN: an RGB stream and a segmentation stream with
//! identical topology, an RPN on the RGB features only, shared RoI pooling,
//! bilinear fusion feeding the mitosis classifier, and RGB-only box regression.

mod backbone;
mod fusion;
mod loss;
mod model;
mod roi;
mod train;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AnchorSpec, BBox};

pub use backbone::{Backbone, BackboneCache, VGG16_LAYER_INDICES};
pub use fusion::{
    bilinear_full, bilinear_reference, fuse, fuse_backward, signed_sqrt_normalize, FusedRoi,
    FusionCache, TensorSketch,
};
pub use loss::{rpn_loss, rpn_loss_from_logits, smooth_l1, smooth_l1_grad, softmax2, RpnLossTerms};
pub use model::{
    propose_regions, rgb_input, seg_input, AnchorSample, HeadOutput, LossBreakdown, Proposal, RpnOutput,
    StreamFeatures, TrainBatch, TwoStreamDetector, BACKGROUND, MITOSIS,
};
pub use roi::{
    roi_pool, roi_pool_backward, roi_project, sample_proposals_for_training, RoiPoolCache, RoiSample,
};
pub use train::{detect_frame, detect_tile, train_detector, DetTile, DetTraining};

pub const CHECKPOINT_MAGIC: &str = "detector-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    /// 13-conv VGG-16 feature stack (stride 16) loaded from a safetensors file.
    Vgg16Pretrained,
    /// Four 3x3 convs with three poolings (stride 8), randomly initialized.
    TinyRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum FusionMode {
    FullBilinear,
    /// Tensor Sketch projection of the bilinear vector to `dim` entries.
    CompactProjection { dim: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnchorConfig {
    pub scales: Vec<f64>,
    pub ratios: Vec<f64>,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        let spec = AnchorSpec::default();
        Self {
            scales: spec.scales,
            ratios: spec.ratios,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RpnConfig {
    pub hidden_channels: usize,
    pub pre_nms_top_k: usize,
    pub post_nms_top_k: usize,
    pub nms_thresh: f64,
    /// Proposals with a side shorter than this (pixels) are discarded.
    pub min_size: f64,
    /// Anchors sampled per image for the classification term (N_cls).
    pub batch_size: usize,
    pub fg_fraction: f64,
    pub fg_iou: f64,
    pub bg_iou: f64,
}

impl Default for RpnConfig {
    fn default() -> Self {
        Self {
            hidden_channels: 512,
            pre_nms_top_k: 2000,
            post_nms_top_k: 300,
            nms_thresh: 0.7,
            min_size: 1.0,
            batch_size: 256,
            fg_fraction: 0.5,
            fg_iou: 0.5,
            bg_iou: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoiConfig {
    pub pool_size: usize,
    pub samples_per_image: usize,
    pub fg_fraction: f64,
    /// Proposals above this IoU with a ground truth are mitosis RoIs.
    pub fg_iou: f64,
    /// Proposals at or below this IoU with every ground truth are background RoIs.
    pub bg_iou: f64,
}

impl Default for RoiConfig {
    fn default() -> Self {
        Self {
            pool_size: 7,
            samples_per_image: 64,
            fg_fraction: 0.25,
            fg_iou: 0.5,
            bg_iou: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub backbone: BackboneKind,
    /// Channel width of every `tiny_random` conv.
    pub tiny_channels: usize,
    /// safetensors file with torchvision-named `features.*` VGG-16 weights.
    pub pretrained_path: PathBuf,
    pub anchors: AnchorConfig,
    pub rpn: RpnConfig,
    pub roi: RoiConfig,
    pub fusion: FusionMode,
    /// Offset inside the signed square root, keeping its slope finite at 0.
    pub fusion_eps: f64,
    pub lambda: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Learning rate is multiplied by `lr_decay_gamma` after this fraction of the steps.
    pub lr_decay_at: f64,
    pub lr_decay_gamma: f64,
    pub steps: usize,
    /// Train only on tiles containing at least one ground-truth box.
    pub skip_empty_tiles: bool,
    pub seed: u64,
    pub score_thresh: f64,
    pub final_nms_thresh: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneKind::Vgg16Pretrained,
            tiny_channels: 16,
            pretrained_path: PathBuf::from("models/vgg16_features.safetensors"),
            anchors: AnchorConfig::default(),
            rpn: RpnConfig::default(),
            roi: RoiConfig::default(),
            fusion: FusionMode::FullBilinear,
            fusion_eps: 1e-4,
            lambda: 1.0,
            learning_rate: 1e-3,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_decay_at: 0.75,
            lr_decay_gamma: 0.1,
            steps: 2000,
            skip_empty_tiles: false,
            seed: 0,
            score_thresh: 0.5,
            final_nms_thresh: 0.3,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lambda > 0.0) {
            return bad(format!("lambda must be > 0, got {}", self.lambda));
        }
        if self.roi.pool_size == 0 {
            return bad("roi.pool_size must be >= 1".into());
        }
        for (name, f) in [("roi.fg_fraction", self.roi.fg_fraction), ("rpn.fg_fraction", self.rpn.fg_fraction)] {
            if !(f > 0.0 && f < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {f}"));
            }
        }
        for (name, fg, bg) in [("rpn", self.rpn.fg_iou, self.rpn.bg_iou), ("roi", self.roi.fg_iou, self.roi.bg_iou)] {
            if !(0.0 <= bg && bg < fg && fg <= 1.0) {
                return bad(format!("{name} IoU thresholds need 0 <= bg_iou < fg_iou <= 1, got {bg} / {fg}"));
            }
        }
        if self.backbone == BackboneKind::TinyRandom && self.tiny_channels == 0 {
            return bad("tiny_channels must be >= 1".into());
        }
        if self.rpn.hidden_channels == 0 {
            return bad("rpn.hidden_channels must be >= 1".into());
        }
        if let FusionMode::CompactProjection { dim } = self.fusion {
            if dim == 0 {
                return bad("compact projection dim must be >= 1".into());
            }
        }
        if !(self.fusion_eps > 0.0) {
            return bad("fusion_eps must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.score_thresh) {
            return bad(format!("score_thresh must lie in [0, 1], got {}", self.score_thresh));
        }
        if self.anchors.scales.is_empty() || self.anchors.ratios.is_empty() {
            return bad("anchor scales and ratios must be non-empty".into());
        }
        Ok(())
    }

    pub fn anchor_spec(&self, stride: usize) -> AnchorSpec {
        AnchorSpec {
            stride: stride as f64,
            scales: self.anchors.scales.clone(),
            ratios: self.anchors.ratios.clone(),
        }
    }

    /// Learning rate in effect at `step` (0-based).
    pub fn lr_at(&self, step: usize) -> f64 {
        let boundary = (self.lr_decay_at * self.steps as f64).floor() as usize;
        if self.lr_decay_at < 1.0 && step >= boundary {
            self.learning_rate * self.lr_decay_gamma
        } else {
            self.learning_rate
        }
    }
}

/// A final detection in frame coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
}

impl Detection {
    pub fn centroid(&self) -> (f64, f64) {
        self.bbox.center()
    }
}

/// Detection CSV header; coordinates are written with 2 decimals.
pub const DETECTION_CSV_HEADER: &str = "frame_id,x1,y1,x2,y2,score,centroid_x,centroid_y";

pub fn format_detection_row(frame_id: &str, d: &Detection) -> String {
    let (cx, cy) = d.centroid();
    format!(
        "{frame_id},{:.2},{:.2},{:.2},{:.2},{:.4},{cx:.2},{cy:.2}",
        d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2, d.score
    )
}

/// One parsed detection row.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRow {
    pub frame_id: String,
    pub detection: Detection,
    pub centroid: (f64, f64),
}

/// Parses a detection CSV; `#` lines and the header are skipped.
pub fn parse_detections_csv(text: &str) -> Result<Vec<DetectionRow>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("frame_id,") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let err = |reason: String| Error::AnnotationParse {
            frame_id: fields.first().unwrap_or(&"").to_string(),
            line: i + 1,
            reason,
        };
        if fields.len() != 8 {
            return Err(err(format!("expected 8 fields, found {}", fields.len())));
        }
        let mut v = [0.0f64; 7];
        for (k, f) in fields[1..].iter().enumerate() {
            v[k] = f
                .parse()
                .map_err(|_| err(format!("field {} `{f}` is not a number", k + 2)))?;
        }
        out.push(DetectionRow {
            frame_id: fields[0].to_string(),
            detection: Detection {
                bbox: BBox::new(v[0], v[1], v[2], v[3]),
                score: v[4],
            },
            centroid: (v[5], v[6]),
        });
    }
    Ok(out)
}
