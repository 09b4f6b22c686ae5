use std::fmt::Write as _;
use std::io::Write as _;

use mitosis_core::dataset::SegTarget;
use mitosis_core::unet::{train_unet, UnetSample};

use super::{gray_to_binary, Context, FrameIndex, SplitRecord, TileRecord};
use crate::error::{CliError, Result};
use crate::workdir::{read_gray, read_rgb, save_atomic, write_atomic, ManifestBuilder};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSegSummary {
    pub tiles: usize,
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
}

/// Trains the U-net on the tiles of the U-net training frames.
pub fn run(ctx: &Context) -> Result<TrainSegSummary> {
    let cfg = &ctx.config;
    let work = &ctx.work;
    let _lock = work.lock()?;
    let mut manifest = ManifestBuilder::start(work, "train-seg", &ctx.prov)?;
    let split = SplitRecord::load(work)?.split;
    let index = FrameIndex::load(work)?;
    manifest.input(&work.split())?;
    manifest.input(&work.frames_index())?;

    let mut samples = Vec::new();
    for frame in index.frames.iter().filter(|f| split.unet_train_frame_ids.contains(&f.frame_id)) {
        for tile_id in &frame.tile_ids {
            let (img_path, mask_path) = (work.tile_image(tile_id), work.gt_mask(tile_id));
            work.require(&img_path, "prepare")?;
            work.require(&mask_path, "prepare")?;
            TileRecord::load(work, tile_id)?;
            let target = SegTarget {
                tile_id: tile_id.clone(),
                mask: gray_to_binary(&read_gray(&mask_path)?),
            };
            samples.push(UnetSample::from_tile(&read_rgb(&img_path)?, &target, cfg.unet.depth));
            manifest.input(&img_path)?;
            manifest.input(&mask_path)?;
        }
    }
    if samples.is_empty() {
        return Err(CliError::Config(
            "the U-net training subset is empty (it holds the Aperio frames of the training split)".into(),
        ));
    }
    log::info!("training U-net on {} tiles for {} epochs", samples.len(), cfg.unet.iterations);
    let training = train_unet(&samples, &cfg.unet, |epoch, loss| {
        log::info!("train-seg epoch {} loss {loss:.6}", epoch + 1);
    })?;

    let log_path = work.report("train_seg_log.csv");
    let mut text = format!("{}\n# initial_loss={:.8}\nepoch,loss\n", ctx.prov.csv_comment(), training.initial_loss);
    for (i, l) in training.epoch_losses.iter().enumerate() {
        let _ = writeln!(text, "{},{l:.8}", i + 1);
    }
    write_atomic(&log_path, |w| w.write_all(text.as_bytes()))?;
    manifest.output(&log_path)?;

    let ckpt = work.unet_checkpoint();
    let extra = serde_json::json!({
        "config_hash": ctx.prov.config_hash,
        "command": "train-seg",
        "tiles": samples.len(),
        "initial_loss": training.initial_loss,
        "final_loss": training.epoch_losses.last(),
    });
    save_atomic(&ckpt, |p| training.model.save(p, extra, training.epoch_losses.len()))?;
    manifest.output(&ckpt)?;
    manifest.commit()?;
    Ok(TrainSegSummary {
        tiles: samples.len(),
        initial_loss: training.initial_loss,
        epoch_losses: training.epoch_losses,
    })
}
