use std::fmt::Write as _;
use std::io::Write as _;

use mitosis_core::detector::{train_detector, DetTile, LossBreakdown};
use mitosis_core::imaging::gray_to_prob;

use super::{Context, FrameIndex, SplitRecord, TileRecord};
use crate::error::{CliError, Result};
use crate::workdir::{read_gray, read_rgb, save_atomic, write_atomic, ManifestBuilder};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainDetSummary {
    pub tiles: usize,
    pub losses: Vec<LossBreakdown>,
}

/// Trains the two-stream detector on the training frames' tiles and their
/// predicted masks; refuses to start if any of those masks is missing.
pub fn run(ctx: &Context) -> Result<TrainDetSummary> {
    let cfg = &ctx.config;
    let work = &ctx.work;
    let _lock = work.lock()?;
    let mut manifest = ManifestBuilder::start(work, "train-det", &ctx.prov)?;
    let split = SplitRecord::load(work)?.split;
    let index = FrameIndex::load(work)?;
    manifest.input(&work.split())?;
    manifest.input(&work.frames_index())?;

    let mut tiles = Vec::new();
    for frame in index.frames.iter().filter(|f| split.train_frame_ids.contains(&f.frame_id)) {
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
            tiles.push(DetTile::new(tile_id.clone(), read_rgb(&img_path)?, prob, record.gt_boxes)?);
            manifest.input(&img_path)?;
            manifest.input(&work.tile_record(tile_id))?;
            manifest.input(&mask_path)?;
        }
    }
    let every = (cfg.detector.steps / 20).max(1);
    log::info!("training detector on {} tiles for {} steps", tiles.len(), cfg.detector.steps);
    let training = train_detector(&tiles, &cfg.detector, |step, l| {
        if step % every == 0 || step + 1 == cfg.detector.steps {
            log::info!(
                "train-det step {} total {:.5} (rpn {:.5}, mitosis {:.5}, bbox {:.5})",
                step + 1,
                l.total,
                l.rpn,
                l.mitosis,
                l.bbox
            );
        }
    })?;

    let log_path = work.report("train_det_log.csv");
    let mut text = format!(
        "{}\nstep,rpn_cls,rpn_reg,rpn,mitosis,bbox,total\n",
        ctx.prov.csv_comment()
    );
    for (i, l) in training.losses.iter().enumerate() {
        let _ = writeln!(
            text,
            "{},{:.8},{:.8},{:.8},{:.8},{:.8},{:.8}",
            i + 1,
            l.rpn_cls,
            l.rpn_reg,
            l.rpn,
            l.mitosis,
            l.bbox,
            l.total
        );
    }
    write_atomic(&log_path, |w| w.write_all(text.as_bytes()))?;
    manifest.output(&log_path)?;

    let ckpt = work.detector_checkpoint();
    let extra = serde_json::json!({
        "config_hash": ctx.prov.config_hash,
        "command": "train-det",
        "tiles": tiles.len(),
    });
    save_atomic(&ckpt, |p| training.model.save(p, extra, training.losses.len()))?;
    manifest.output(&ckpt)?;
    manifest.commit()?;
    Ok(TrainDetSummary {
        tiles: tiles.len(),
        losses: training.losses,
    })
}
