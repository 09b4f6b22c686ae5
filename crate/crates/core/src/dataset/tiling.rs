use image::{GrayImage, RgbImage};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{HpfFrame, MitosisAnnotation};
use crate::error::{Error, Result};
use crate::geometry::{clip_box, BBox};
use crate::imaging::resize_rgb;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TilingConfig {
    /// Tiles per side; the frame is cut into `grid x grid` equal crops.
    pub grid: u32,
    /// Expansion factor applied to every crop.
    pub scale: f64,
    /// Ground-truth box half-side in frame pixels (scaled with the tile).
    pub gt_half_side: f64,
    /// Segmentation-target disc radius in frame pixels (scaled with the tile).
    pub mask_radius: f64,
}

impl Default for TilingConfig {
    fn default() -> Self {
        Self {
            grid: 4,
            scale: 1.7,
            gt_half_side: 32.0,
            mask_radius: 15.0,
        }
    }
}

impl TilingConfig {
    /// Half-side of ground-truth boxes in tile pixels, e.g. `round(32 * 1.7) = 54`.
    pub fn tile_half_side(&self) -> f64 {
        (self.gt_half_side * self.scale).round()
    }

    pub fn tile_mask_radius(&self) -> f64 {
        self.mask_radius * self.scale
    }
}

/// Where a tile sits in its frame and how it was scaled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TileGeometry {
    pub offset_x: u32,
    pub offset_y: u32,
    /// Crop window size in frame pixels.
    pub crop_width: u32,
    pub crop_height: u32,
    pub scale: f64,
    /// Tile image size after scaling.
    pub width: u32,
    pub height: u32,
}

impl TileGeometry {
    pub fn new(offset_x: u32, offset_y: u32, crop_width: u32, crop_height: u32, scale: f64) -> Self {
        Self {
            offset_x,
            offset_y,
            crop_width,
            crop_height,
            scale,
            width: (crop_width as f64 * scale).round() as u32,
            height: (crop_height as f64 * scale).round() as u32,
        }
    }

    pub fn contains_frame_point(&self, x: f64, y: f64) -> bool {
        let (ox, oy) = (self.offset_x as f64, self.offset_y as f64);
        x >= ox && x < ox + self.crop_width as f64 && y >= oy && y < oy + self.crop_height as f64
    }

    pub fn frame_to_tile(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.offset_x as f64) * self.scale,
            (y - self.offset_y as f64) * self.scale,
        )
    }

    pub fn tile_to_frame(&self, x: f64, y: f64) -> (f64, f64) {
        (
            x / self.scale + self.offset_x as f64,
            y / self.scale + self.offset_y as f64,
        )
    }

    pub fn box_to_frame(&self, b: &BBox) -> BBox {
        let (x1, y1) = self.tile_to_frame(b.x1, b.y1);
        let (x2, y2) = self.tile_to_frame(b.x2, b.y2);
        BBox::new(x1, y1, x2, y2)
    }
}

/// One of the `grid²` frame subsections, expanded by `scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct TileSample {
    pub parent_frame_id: String,
    /// Row-major index in the grid.
    pub tile_index: usize,
    pub image: RgbImage,
    pub geometry: TileGeometry,
    /// Tile-local, post-scaling, clipped to the tile.
    pub gt_boxes: Vec<BBox>,
    /// Tile-local, post-scaling.
    pub gt_centroids: Vec<(f64, f64)>,
}

impl TileSample {
    pub fn id(&self) -> String {
        tile_id(&self.parent_frame_id, self.tile_index)
    }
}

pub fn tile_id(frame_id: &str, tile_index: usize) -> String {
    format!("{frame_id}_{tile_index:02}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tiling {
    pub tiles: Vec<TileSample>,
    /// Annotations that fell into the discarded right/bottom remainder strips.
    pub dropped: Vec<MitosisAnnotation>,
}

/// Cuts a frame into `grid x grid` equal crops of `floor(W/grid) x floor(H/grid)`
/// (remainder strips discarded), upscales each bilinearly by `scale`, and maps
/// the frame's annotations into every tile.
pub fn tile_frame(frame: &HpfFrame, config: &TilingConfig) -> Result<Tiling> {
    if !(config.scale >= 1.0) {
        return Err(Error::InvalidConfig(format!("tile scale {} must be >= 1", config.scale)));
    }
    if config.grid == 0 {
        return Err(Error::InvalidConfig("tiling grid must be positive".into()));
    }
    let (w, h) = frame.image.dimensions();
    if w < config.grid || h < config.grid {
        return Err(Error::FrameTooSmall {
            frame_id: frame.frame_id.clone(),
            width: w,
            height: h,
            grid: config.grid,
        });
    }
    let (tw, th) = (w / config.grid, h / config.grid);
    let mut tiles = Vec::with_capacity((config.grid * config.grid) as usize);
    let mut assigned = vec![false; frame.annotations.len()];
    for row in 0..config.grid {
        for col in 0..config.grid {
            let geometry = TileGeometry::new(col * tw, row * th, tw, th, config.scale);
            let crop = image::imageops::crop_imm(&frame.image, geometry.offset_x, geometry.offset_y, tw, th)
                .to_image();
            let image = resize_rgb(&crop, geometry.width, geometry.height);
            let (gt_centroids, gt_boxes) =
                map_annotations_to_tile(&frame.annotations, &geometry, config.gt_half_side);
            for (k, a) in frame.annotations.iter().enumerate() {
                if geometry.contains_frame_point(a.x as f64, a.y as f64) {
                    assigned[k] = true;
                }
            }
            tiles.push(TileSample {
                parent_frame_id: frame.frame_id.clone(),
                tile_index: (row * config.grid + col) as usize,
                image,
                geometry,
                gt_boxes,
                gt_centroids,
            });
        }
    }
    let dropped: Vec<MitosisAnnotation> = frame
        .annotations
        .iter()
        .zip(&assigned)
        .filter(|(_, &a)| !a)
        .map(|(a, _)| *a)
        .collect();
    for a in &dropped {
        log::warn!(
            "frame `{}`: annotation ({}, {}) lies in a discarded edge strip and is dropped",
            frame.frame_id,
            a.x,
            a.y
        );
    }
    Ok(Tiling { tiles, dropped })
}

/// Centroids whose frame position falls inside the tile's crop window, in
/// tile-local post-scaling coordinates, plus their clipped ground-truth boxes.
/// `half_side` is in frame pixels and is scaled (and rounded) with the tile.
pub fn map_annotations_to_tile(
    annotations: &[MitosisAnnotation],
    geometry: &TileGeometry,
    half_side: f64,
) -> (Vec<(f64, f64)>, Vec<BBox>) {
    let h = (half_side * geometry.scale).round();
    annotations
        .iter()
        .filter(|a| geometry.contains_frame_point(a.x as f64, a.y as f64))
        .map(|a| {
            let c = geometry.frame_to_tile(a.x as f64, a.y as f64);
            let b = clip_box(
                &centroid_to_box(c, h),
                geometry.width as f64,
                geometry.height as f64,
            );
            (c, b)
        })
        .unzip()
}

/// Square box of half-side `half_side` around a centroid (unclipped).
pub fn centroid_to_box((x, y): (f64, f64), half_side: f64) -> BBox {
    BBox::new(x - half_side, y - half_side, x + half_side, y + half_side)
}

/// Binary segmentation target for one tile.
#[derive(Debug, Clone, PartialEq)]
pub struct SegTarget {
    pub tile_id: String,
    /// `(height, width)`, values in {0, 1}.
    pub mask: Array2<u8>,
}

impl SegTarget {
    pub fn to_image(&self) -> GrayImage {
        let (h, w) = self.mask.dim();
        GrayImage::from_fn(w as u32, h as u32, |x, y| {
            image::Luma([self.mask[[y as usize, x as usize]] * 255])
        })
    }

    pub fn positives(&self) -> usize {
        self.mask.iter().filter(|&&v| v == 1).count()
    }
}

/// Mask that is 1 on every pixel `(col, row)` within `radius` of some centroid.
pub fn synth_mask(
    tile_id: impl Into<String>,
    height: usize,
    width: usize,
    centroids: &[(f64, f64)],
    radius: f64,
) -> Result<SegTarget> {
    if !(radius > 0.0) {
        return Err(Error::InvalidConfig(format!("mask radius {radius} must be positive")));
    }
    let mut mask = Array2::<u8>::zeros((height, width));
    let r2 = radius * radius;
    for &(cx, cy) in centroids {
        let y0 = (cy - radius).floor().max(0.0) as usize;
        let y1 = ((cy + radius).ceil().max(0.0) as usize).min(height.saturating_sub(1));
        let x0 = (cx - radius).floor().max(0.0) as usize;
        let x1 = ((cx + radius).ceil().max(0.0) as usize).min(width.saturating_sub(1));
        if height == 0 || width == 0 || y0 > y1 || x0 > x1 {
            continue;
        }
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                if dx * dx + dy * dy <= r2 {
                    mask[[y, x]] = 1;
                }
            }
        }
    }
    Ok(SegTarget {
        tile_id: tile_id.into(),
        mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Scanner;
    use proptest::prelude::*;

    fn frame(w: u32, h: u32, annotations: Vec<MitosisAnnotation>) -> HpfFrame {
        let img = RgbImage::from_fn(w, h, |x, y| image::Rgb([(x % 256) as u8, (y % 256) as u8, ((x * 7 + y) % 256) as u8]));
        HpfFrame::new("A01_00", Scanner::Aperio, img, annotations).unwrap()
    }

    #[test]
    fn native_frame_tiles() {
        let g = TileGeometry::new(0, 0, 1539 / 4, 1376 / 4, 1.7);
        assert_eq!((g.crop_width, g.crop_height), (384, 344));
        assert_eq!((g.width, g.height), (653, 585));
    }

    #[test]
    fn unit_scale_four_by_four_reproduces_frame() {
        let f = frame(4, 4, vec![]);
        let cfg = TilingConfig { scale: 1.0, ..TilingConfig::default() };
        let t = tile_frame(&f, &cfg).unwrap();
        assert_eq!(t.tiles.len(), 16);
        for tile in &t.tiles {
            assert_eq!(tile.image.dimensions(), (1, 1));
            let (x, y) = (tile.geometry.offset_x, tile.geometry.offset_y);
            assert_eq!(tile.image.get_pixel(0, 0), f.image.get_pixel(x, y));
        }
    }

    #[test]
    fn too_small_frame_and_bad_scale_are_errors() {
        let f = frame(3, 8, vec![]);
        assert!(matches!(tile_frame(&f, &TilingConfig::default()), Err(Error::FrameTooSmall { .. })));
        let f = frame(8, 8, vec![]);
        let cfg = TilingConfig { scale: 0.5, ..TilingConfig::default() };
        assert!(tile_frame(&f, &cfg).is_err());
    }

    #[test]
    fn annotation_mapping_examples() {
        let g = TileGeometry::new(0, 0, 384, 344, 1.7);
        let (c, _) = map_annotations_to_tile(&[MitosisAnnotation::new(0, 0)], &g, 32.0);
        assert_eq!(c, vec![(0.0, 0.0)]);

        let f = frame(1539, 1376, vec![MitosisAnnotation::new(400, 100), MitosisAnnotation::new(1537, 5)]);
        let cfg = TilingConfig { scale: 1.0, ..TilingConfig::default() };
        let t = tile_frame(&f, &cfg).unwrap();
        let hits: Vec<_> = t.tiles.iter().filter(|t| !t.gt_centroids.is_empty()).collect();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].tile_index, 1);
        assert_eq!(hits[0].gt_centroids[0], (16.0, 100.0));
        assert_eq!(t.dropped, vec![MitosisAnnotation::new(1537, 5)]);
    }

    #[test]
    fn boxes_examples() {
        assert_eq!(centroid_to_box((100.0, 100.0), 54.0), BBox::new(46.0, 46.0, 154.0, 154.0));
        let b = centroid_to_box((0.0, 0.0), 10.0);
        assert_eq!(b, BBox::new(-10.0, -10.0, 10.0, 10.0));
        assert_eq!(clip_box(&b, 100.0, 100.0), BBox::new(0.0, 0.0, 10.0, 10.0));
        assert_eq!(centroid_to_box((50.0, 50.0), 1.0), BBox::new(49.0, 49.0, 51.0, 51.0));
        assert_eq!(TilingConfig::default().tile_half_side(), 54.0);
    }

    #[test]
    fn mask_examples() {
        let m = synth_mask("t", 20, 20, &[], 3.0).unwrap();
        assert_eq!(m.positives(), 0);
        let m = synth_mask("t", 20, 20, &[(10.0, 10.0)], 0.5).unwrap();
        assert_eq!(m.positives(), 1);
        assert_eq!(m.mask[[10, 10]], 1);
        let m = synth_mask("t", 100, 100, &[(50.0, 40.0)], 15.0).unwrap();
        let brute = (0..100)
            .flat_map(|y| (0..100).map(move |x| (x, y)))
            .filter(|&(x, y)| ((x as f64 - 50.0).powi(2) + (y as f64 - 40.0).powi(2)).sqrt() <= 15.0)
            .count();
        assert_eq!(m.positives(), brute);
        assert!(synth_mask("t", 4, 4, &[], 0.0).is_err());
    }

    proptest! {
        #[test]
        fn frame_tile_frame_round_trip(x in 0u32..1539, y in 0u32..1376, scale in 1.0f64..3.0) {
            let (tw, th) = (1539 / 4, 1376 / 4);
            let (col, row) = (x / tw, y / th);
            prop_assume!(col < 4 && row < 4);
            let g = TileGeometry::new(col * tw, row * th, tw, th, scale);
            prop_assert!(g.contains_frame_point(x as f64, y as f64));
            let (lx, ly) = g.frame_to_tile(x as f64, y as f64);
            let (fx, fy) = g.tile_to_frame(lx, ly);
            prop_assert!((fx - x as f64).abs() <= 0.5 && (fy - y as f64).abs() <= 0.5);
        }

        #[test]
        fn mask_matches_brute_force(
            centroids in proptest::collection::vec((0.0f64..40.0, 0.0f64..30.0), 0..5),
            radius in 0.3f64..9.0,
        ) {
            let m = synth_mask("t", 30, 40, &centroids, radius).unwrap();
            for y in 0..30 {
                for x in 0..40 {
                    let inside = centroids.iter().any(|&(cx, cy)| {
                        ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt() <= radius
                    });
                    prop_assert_eq!(m.mask[[y, x]] == 1, inside);
                }
            }
        }

        #[test]
        fn windows_partition_and_annotations_are_conserved(
            w in 8u32..60, h in 8u32..60,
            pts in proptest::collection::vec((0u32..1000, 0u32..1000), 0..12),
        ) {
            let ann: Vec<_> = pts.iter().map(|&(x, y)| MitosisAnnotation::new(x % w, y % h)).collect();
            let f = frame(w, h, ann.clone());
            let cfg = TilingConfig { scale: 1.3, ..TilingConfig::default() };
            let t = tile_frame(&f, &cfg).unwrap();
            let mapped: usize = t.tiles.iter().map(|t| t.gt_centroids.len()).sum();
            prop_assert_eq!(mapped + t.dropped.len(), ann.len());
            let (tw, th) = (w / 4, h / 4);
            for py in 0..4 * th {
                for px in 0..4 * tw {
                    let owners = t.tiles.iter().filter(|t| t.geometry.contains_frame_point(px as f64, py as f64)).count();
                    prop_assert_eq!(owners, 1);
                }
            }
            for tile in &t.tiles {
                for b in &tile.gt_boxes {
                    prop_assert!(b.x1 >= 0.0 && b.y1 >= 0.0);
                    prop_assert!(b.x2 <= tile.geometry.width as f64 && b.y2 <= tile.geometry.height as f64);
                }
            }
        }
    }
}
