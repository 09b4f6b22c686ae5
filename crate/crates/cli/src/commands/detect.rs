use std::io::Write as _;

use mitosis_core::detector::{detect_tile, format_detection_row, TwoStreamDetector, DETECTION_CSV_HEADER};
use mitosis_core::imaging::gray_to_prob;

use super::{Context, FrameIndex, TileRecord};
use crate::error::{CliError, Result};
use crate::workdir::{read_gray, read_rgb, write_atomic, ManifestBuilder};

#[derive(Debug, Clone, PartialEq)]
pub struct DetectSummary {
    pub frames: usize,
    pub detections: usize,
}

/// Runs the detector over every tile of every frame and writes one CSV of
/// frame-coordinate detections. Score and final-NMS thresholds come from the
/// run configuration, not the checkpoint.
pub fn run(ctx: &Context) -> Result<DetectSummary> {
    let cfg = &ctx.config;
    let work = &ctx.work;
    let _lock = work.lock()?;
    let mut manifest = ManifestBuilder::start(work, "detect", &ctx.prov)?;
    let ckpt = work.detector_checkpoint();
    work.require(&ckpt, "train-det")?;
    let (mut model, _) = TwoStreamDetector::load(&ckpt)?;
    model.config.score_thresh = cfg.detector.score_thresh;
    model.config.final_nms_thresh = cfg.detector.final_nms_thresh;
    manifest.input(&ckpt)?;
    let index = FrameIndex::load(work)?;

    let mut text = format!("{}\n{DETECTION_CSV_HEADER}\n", ctx.prov.csv_comment());
    let mut total = 0;
    for frame in &index.frames {
        let mut count = 0;
        for tile_id in &frame.tile_ids {
            let mask_path = work.pred_mask(tile_id);
            if !mask_path.is_file() {
                return Err(CliError::MissingMask {
                    tile_id: tile_id.clone(),
                    path: mask_path,
                });
            }
            let img_path = work.tile_image(tile_id);
            work.require(&img_path, "prepare")?;
            let record = TileRecord::load(work, tile_id)?;
            let prob = gray_to_prob(&read_gray(&mask_path)?);
            for d in detect_tile(&model, &read_rgb(&img_path)?, &prob, &record.geometry)? {
                text.push_str(&format_detection_row(&frame.frame_id, &d));
                text.push('\n');
                count += 1;
            }
            manifest.input(&img_path)?;
            manifest.input(&mask_path)?;
        }
        log::info!("{}: {count} detections", frame.frame_id);
        total += count;
    }
    let out = work.detections();
    write_atomic(&out, |w| w.write_all(text.as_bytes()))?;
    manifest.output(&out)?;
    manifest.commit()?;
    Ok(DetectSummary {
        frames: index.frames.len(),
        detections: total,
    })
}
