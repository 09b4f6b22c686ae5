//! The pipeline commands. Each one takes the work-dir lock, clears its own
//! manifest, checks its prerequisites, writes its artifacts atomically and
//! commits a manifest last.

pub mod detect;
pub mod evaluate;
pub mod prepare;
pub mod segment;
pub mod synth;
pub mod train_det;
pub mod train_seg;
pub mod visualize;

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::codecs::jpeg::JpegEncoder;
use image::{ImageFormat, RgbImage};
use mitosis_core::dataset::{MitosisAnnotation, Scanner, SplitSpec, TileGeometry};
use mitosis_core::geometry::BBox;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::workdir::{read_json, Provenance, WorkDir};

/// Resolved configuration plus the work directory it points at.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: RunConfig,
    pub work: WorkDir,
    pub prov: Provenance,
}

impl Context {
    pub fn new(config: RunConfig) -> Self {
        let work = WorkDir::new(&config.data.work_dir);
        let prov = Provenance::of(&config);
        Self { config, work, prov }
    }
}

/// One prepared frame, as listed in `frames.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: String,
    pub scanner: Scanner,
    pub width: u32,
    pub height: u32,
    /// Source image file name inside `data.frames_dir`.
    pub source: String,
    pub annotations: Vec<MitosisAnnotation>,
    pub tile_ids: Vec<String>,
    /// Annotations lying in the discarded edge strips.
    pub dropped_annotations: usize,
}

impl FrameRecord {
    pub fn centroids(&self) -> Vec<(f64, f64)> {
        self.annotations.iter().map(|a| (a.x as f64, a.y as f64)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameIndex {
    pub provenance: Provenance,
    pub frames: Vec<FrameRecord>,
}

impl FrameIndex {
    pub fn load(work: &WorkDir) -> Result<Self> {
        let path = work.frames_index();
        work.require(&path, "prepare")?;
        read_json(&path)
    }

    pub fn get(&self, frame_id: &str) -> Option<&FrameRecord> {
        self.frames.iter().find(|f| f.frame_id == frame_id)
    }
}

/// JSON sidecar of a tile image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileRecord {
    pub tile_id: String,
    pub frame_id: String,
    pub tile_index: usize,
    pub geometry: TileGeometry,
    /// Tile pixels, after scaling.
    pub gt_boxes: Vec<BBox>,
    pub gt_centroids: Vec<(f64, f64)>,
    pub provenance: Provenance,
}

impl TileRecord {
    pub fn load(work: &WorkDir, tile_id: &str) -> Result<Self> {
        let path = work.tile_record(tile_id);
        work.require(&path, "prepare")?;
        read_json(&path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub provenance: Provenance,
    #[serde(flatten)]
    pub split: SplitSpec,
}

impl SplitRecord {
    pub fn load(work: &WorkDir) -> Result<Self> {
        let path = work.split();
        work.require(&path, "prepare")?;
        read_json(&path)
    }
}

const FRAME_EXTENSIONS: [&str; 4] = ["tif", "tiff", "jpg", "jpeg"];

fn is_tiff(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("tif") || e.eq_ignore_ascii_case("tiff"))
}

/// Frame images in `dir` as `(frame_id, path)`, sorted by id.
pub fn list_frames(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(CliError::io(dir))?;
    let mut out: Vec<(String, PathBuf)> = Vec::new();
    for entry in entries {
        let path = entry.map_err(CliError::io(dir))?.path();
        let ext_ok = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| FRAME_EXTENSIONS.iter().any(|k| e.eq_ignore_ascii_case(k)));
        if !ext_ok || !path.is_file() {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        out.push((stem.to_string(), path));
    }
    out.sort();
    for pair in out.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(CliError::DuplicateFrame {
                frame_id: pair[0].0.clone(),
                first: pair[0].1.clone(),
                second: pair[1].1.clone(),
            });
        }
    }
    if out.is_empty() {
        return Err(CliError::NoFrames(dir.to_path_buf()));
    }
    Ok(out)
}

/// Decodes a frame; TIFF input goes through an in-memory JPEG encode at
/// `jpeg_quality` so every frame reaches the tiler as JPEG data.
pub fn load_frame_image(path: &Path, jpeg_quality: u8) -> Result<RgbImage> {
    let read_err = |source| CliError::ImageRead {
        path: path.to_path_buf(),
        source,
    };
    let img = image::open(path).map_err(read_err)?.to_rgb8();
    if !is_tiff(path) {
        return Ok(img);
    }
    let mut buf = Vec::new();
    JpegEncoder::new_with_quality(&mut buf, jpeg_quality)
        .encode_image(&img)
        .map_err(read_err)?;
    Ok(image::load(Cursor::new(buf), ImageFormat::Jpeg).map_err(read_err)?.to_rgb8())
}

/// Binary SegTarget mask from a stored 8-bit PNG.
pub fn gray_to_binary(img: &image::GrayImage) -> ndarray::Array2<u8> {
    let (w, h) = img.dimensions();
    ndarray::Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        (img.get_pixel(x as u32, y as u32)[0] >= 128) as u8
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiff_frames_pass_through_jpeg() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::from_fn(32, 24, |x, y| image::Rgb([(x * 7) as u8, (y * 9) as u8, 120]));
        let tif = dir.path().join("A01_00.tif");
        let jpg = dir.path().join("A01_01.jpg");
        img.save(&tif).unwrap();
        img.save(&jpg).unwrap();
        let a = load_frame_image(&tif, 95).unwrap();
        assert_eq!(a.dimensions(), (32, 24));
        assert_ne!(a, img, "lossy step applied");
        let max_err = a
            .as_raw()
            .iter()
            .zip(img.as_raw())
            .map(|(p, q)| (*p as i32 - *q as i32).abs())
            .max()
            .unwrap();
        assert!(max_err < 40, "{max_err}");
        assert_eq!(load_frame_image(&tif, 95).unwrap(), a);
        assert_eq!(
            list_frames(dir.path()).unwrap().iter().map(|(id, _)| id.as_str()).collect::<Vec<_>>(),
            ["A01_00", "A01_01"]
        );
    }

    #[test]
    fn duplicate_and_missing_frames() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(list_frames(dir.path()), Err(CliError::NoFrames(_))));
        let img = RgbImage::new(4, 4);
        img.save(dir.path().join("A01_00.tif")).unwrap();
        img.save(dir.path().join("A01_00.jpg")).unwrap();
        assert!(matches!(list_frames(dir.path()), Err(CliError::DuplicateFrame { .. })));
    }

    #[test]
    fn corrupt_image_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("A01_00.jpg");
        fs::write(&p, b"not a jpeg").unwrap();
        let err = load_frame_image(&p, 95).unwrap_err().to_string();
        assert!(err.contains("A01_00.jpg"), "{err}");
    }
}
