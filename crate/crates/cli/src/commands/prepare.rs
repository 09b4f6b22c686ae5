use std::fs;

use mitosis_core::dataset::{
    make_split, parse_annotation_file, synth_mask, tile_frame, FrameMeta, HpfFrame, Scanner, SplitSpec,
};

use super::{list_frames, load_frame_image, Context, FrameIndex, FrameRecord, SplitRecord, TileRecord};
use crate::error::{CliError, Result};
use crate::workdir::{write_gray_png, write_json, write_rgb_png, ManifestBuilder};

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareSummary {
    pub frames: usize,
    pub tiles: usize,
    /// Pre-scaling crop size of the first frame's tiles.
    pub crop_size: Option<(u32, u32)>,
    pub split: SplitSpec,
}

/// Tiles every frame, writes tile images with JSON sidecars, ground-truth
/// masks, the frame index and the split.
pub fn run(ctx: &Context) -> Result<PrepareSummary> {
    let cfg = &ctx.config;
    let work = &ctx.work;
    let _lock = work.lock()?;
    let mut manifest = ManifestBuilder::start(work, "prepare", &ctx.prov)?;
    work.create_layout()?;
    for dir in [work.tiles(), work.masks_gt()] {
        fs::remove_dir_all(&dir).map_err(CliError::io(&dir))?;
        fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
    }

    let sources = list_frames(&cfg.data.frames_dir)?;
    let mut records = Vec::with_capacity(sources.len());
    let mut tiles_written = 0;
    let mut crop_size = None;
    for (frame_id, image_path) in &sources {
        let ann_path = cfg.data.annotations_dir.join(format!("{frame_id}.csv"));
        if !ann_path.is_file() {
            return Err(CliError::MissingAnnotation {
                frame_id: frame_id.clone(),
                path: ann_path,
            });
        }
        let scanner = Scanner::from_frame_id(frame_id).ok_or_else(|| CliError::UnknownScanner(frame_id.clone()))?;
        let text = fs::read_to_string(&ann_path).map_err(CliError::io(&ann_path))?;
        let annotations = parse_annotation_file(&text, frame_id)?;
        let image = load_frame_image(image_path, cfg.data.jpeg_quality)?;
        manifest.input(image_path)?;
        manifest.input(&ann_path)?;
        let frame = HpfFrame::new(frame_id.clone(), scanner, image, annotations)?;
        let tiling = tile_frame(&frame, &cfg.tiling)?;
        for a in &tiling.dropped {
            log::warn!("frame {frame_id}: annotation ({}, {}) lies in a discarded edge strip", a.x, a.y);
        }
        let mut tile_ids = Vec::with_capacity(tiling.tiles.len());
        for tile in &tiling.tiles {
            let id = tile.id();
            crop_size.get_or_insert((tile.geometry.crop_width, tile.geometry.crop_height));
            let (w, h) = tile.image.dimensions();
            let mask = synth_mask(&id, h as usize, w as usize, &tile.gt_centroids, cfg.tiling.tile_mask_radius())?;
            let record = TileRecord {
                tile_id: id.clone(),
                frame_id: frame_id.clone(),
                tile_index: tile.tile_index,
                geometry: tile.geometry,
                gt_boxes: tile.gt_boxes.clone(),
                gt_centroids: tile.gt_centroids.clone(),
                provenance: ctx.prov.clone(),
            };
            write_rgb_png(&work.tile_image(&id), &tile.image, &ctx.prov)?;
            write_json(&work.tile_record(&id), &record)?;
            write_gray_png(&work.gt_mask(&id), &mask.to_image(), &ctx.prov)?;
            for path in [work.tile_image(&id), work.tile_record(&id), work.gt_mask(&id)] {
                manifest.output(&path)?;
            }
            tile_ids.push(id);
            tiles_written += 1;
        }
        let source = image_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        records.push(FrameRecord {
            frame_id: frame_id.clone(),
            scanner,
            width: frame.width(),
            height: frame.height(),
            source,
            annotations: frame.annotations.clone(),
            tile_ids,
            dropped_annotations: tiling.dropped.len(),
        });
        log::info!("prepared {frame_id}: {} tiles, {} mitoses", tiling.tiles.len(), frame.annotations.len());
    }

    let metas: Vec<FrameMeta> = records
        .iter()
        .map(|r| FrameMeta {
            frame_id: r.frame_id.clone(),
            scanner: r.scanner,
            mitoses: r.annotations.len(),
        })
        .collect();
    let split = if cfg.split.hold_out {
        make_split(&metas, &cfg.split.test_group)?
    } else {
        SplitSpec::train_only(&metas)
    };
    let index = FrameIndex {
        provenance: ctx.prov.clone(),
        frames: records,
    };
    write_json(&work.frames_index(), &index)?;
    manifest.output(&work.frames_index())?;
    write_json(
        &work.split(),
        &SplitRecord {
            provenance: ctx.prov.clone(),
            split: split.clone(),
        },
    )?;
    manifest.output(&work.split())?;
    manifest.commit()?;
    Ok(PrepareSummary {
        frames: index.frames.len(),
        tiles: tiles_written,
        crop_size,
        split,
    })
}
