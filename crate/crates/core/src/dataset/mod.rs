//! HPF frames, centroid annotations, 4x4 tiling, ground-truth boxes and masks,
//! train/test split, and a deterministic synthetic data generator.

mod synthetic;
mod tiling;

use std::collections::BTreeSet;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use synthetic::{generate_synthetic_dataset, SyntheticConfig};
pub use tiling::{
    centroid_to_box, map_annotations_to_tile, synth_mask, tile_frame, tile_id, SegTarget,
    TileGeometry, TileSample, Tiling, TilingConfig,
};

/// Native contest frame size at x40.
pub const NATIVE_FRAME_WIDTH: u32 = 1539;
pub const NATIVE_FRAME_HEIGHT: u32 = 1376;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scanner {
    Aperio,
    Hamamatsu,
}

impl Scanner {
    /// Contest frame ids start with `A` (Aperio) or `H` (Hamamatsu).
    pub fn from_frame_id(frame_id: &str) -> Option<Self> {
        match frame_id.chars().next() {
            Some('A') => Some(Scanner::Aperio),
            Some('H') => Some(Scanner::Hamamatsu),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MitosisAnnotation {
    pub x: u32,
    pub y: u32,
    pub raters: Option<u32>,
}

impl MitosisAnnotation {
    pub fn new(x: u32, y: u32) -> Self {
        Self { x, y, raters: None }
    }
}

/// One high-power field with its annotated mitosis centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct HpfFrame {
    pub frame_id: String,
    pub scanner: Scanner,
    pub image: RgbImage,
    pub annotations: Vec<MitosisAnnotation>,
}

impl HpfFrame {
    /// Validates that every centroid lies inside the image.
    pub fn new(
        frame_id: impl Into<String>,
        scanner: Scanner,
        image: RgbImage,
        annotations: Vec<MitosisAnnotation>,
    ) -> Result<Self> {
        let frame_id = frame_id.into();
        let (w, h) = image.dimensions();
        if let Some(a) = annotations.iter().find(|a| a.x >= w || a.y >= h) {
            return Err(Error::InvalidConfig(format!(
                "annotation ({}, {}) outside {w}x{h} frame `{frame_id}`",
                a.x, a.y
            )));
        }
        Ok(Self {
            frame_id,
            scanner,
            image,
            annotations,
        })
    }

    pub fn width(&self) -> u32 {
        self.image.width()
    }

    pub fn height(&self) -> u32 {
        self.image.height()
    }

    pub fn meta(&self) -> FrameMeta {
        FrameMeta {
            frame_id: self.frame_id.clone(),
            scanner: self.scanner,
            mitoses: self.annotations.len(),
        }
    }
}

/// The contest file group of a frame id: everything before the first `_`.
pub fn frame_group(frame_id: &str) -> &str {
    frame_id.split('_').next().unwrap_or(frame_id)
}

/// Parses one frame's annotation CSV: rows `x,y[,raters[,...]]`.
///
/// Blank lines are skipped; line numbers in errors are 1-based.
pub fn parse_annotation_file(text: &str, frame_id: &str) -> Result<Vec<MitosisAnnotation>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| Error::AnnotationParse {
            frame_id: frame_id.to_string(),
            line: i + 1,
            reason,
        };
        let mut fields = line.split(',').map(str::trim);
        let mut coord = |axis: &str| -> Result<u32> {
            let f = fields
                .next()
                .ok_or_else(|| err(format!("missing {axis} coordinate")))?;
            f.parse::<u32>()
                .map_err(|_| err(format!("{axis} coordinate `{f}` is not a non-negative integer")))
        };
        let x = coord("x")?;
        let y = coord("y")?;
        let raters = fields.next().and_then(|f| f.parse::<u32>().ok());
        out.push(MitosisAnnotation { x, y, raters });
    }
    Ok(out)
}

/// Renders annotations in the format accepted by [`parse_annotation_file`].
pub fn format_annotations(annotations: &[MitosisAnnotation]) -> String {
    annotations
        .iter()
        .map(|a| match a.raters {
            Some(r) => format!("{},{},{}\n", a.x, a.y, r),
            None => format!("{},{}\n", a.x, a.y),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub frame_id: String,
    pub scanner: Scanner,
    pub mitoses: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_group: Option<String>,
    pub train_frame_ids: BTreeSet<String>,
    pub test_frame_ids: BTreeSet<String>,
    /// Aperio-scanner members of the training set.
    pub unet_train_frame_ids: BTreeSet<String>,
    pub train_mitoses: usize,
    pub test_mitoses: usize,
}

impl SplitSpec {
    /// No hold-out: every frame is a training frame.
    pub fn train_only(frames: &[FrameMeta]) -> Self {
        build_split(frames, None)
    }

    pub fn is_sound(&self) -> bool {
        self.train_frame_ids.is_disjoint(&self.test_frame_ids)
            && self.unet_train_frame_ids.is_subset(&self.train_frame_ids)
    }
}

/// Holds out every frame of `test_group`; the U-net trains on the Aperio part of the rest.
pub fn make_split(frames: &[FrameMeta], test_group: &str) -> Result<SplitSpec> {
    if !frames.iter().any(|f| frame_group(&f.frame_id) == test_group) {
        return Err(Error::UnknownGroup(test_group.to_string()));
    }
    Ok(build_split(frames, Some(test_group)))
}

fn build_split(frames: &[FrameMeta], test_group: Option<&str>) -> SplitSpec {
    let mut split = SplitSpec {
        test_group: test_group.map(str::to_string),
        ..SplitSpec::default()
    };
    for f in frames {
        if Some(frame_group(&f.frame_id)) == test_group {
            split.test_frame_ids.insert(f.frame_id.clone());
            split.test_mitoses += f.mitoses;
        } else {
            split.train_frame_ids.insert(f.frame_id.clone());
            split.train_mitoses += f.mitoses;
            if f.scanner == Scanner::Aperio {
                split.unet_train_frame_ids.insert(f.frame_id.clone());
            }
        }
    }
    if split.unet_train_frame_ids.is_empty() && !split.train_frame_ids.is_empty() {
        log::warn!("no Aperio frames in the training set: the U-net training subset is empty");
    }
    split
}
