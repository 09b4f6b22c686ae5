use std::fmt::Write as _;
use std::io::Write as _;

use mitosis_core::imaging::prob_to_gray;
use mitosis_core::unet::{predict_mask, UNet};

use super::{Context, FrameIndex};
use crate::error::Result;
use crate::workdir::{read_rgb, write_atomic, write_gray_png, ManifestBuilder};

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSummary {
    pub tiles: usize,
}

/// Predicts a probability mask for every tile of every frame, both scanners.
pub fn run(ctx: &Context) -> Result<SegmentSummary> {
    let work = &ctx.work;
    let _lock = work.lock()?;
    let mut manifest = ManifestBuilder::start(work, "segment", &ctx.prov)?;
    let ckpt = work.unet_checkpoint();
    work.require(&ckpt, "train-seg")?;
    let (model, _) = UNet::load(&ckpt)?;
    manifest.input(&ckpt)?;
    let index = FrameIndex::load(work)?;

    let mut log = format!("{}\ntile_id,mean_prob,fraction_above_half\n", ctx.prov.csv_comment());
    let mut tiles = 0;
    for frame in &index.frames {
        for tile_id in &frame.tile_ids {
            let img_path = work.tile_image(tile_id);
            work.require(&img_path, "prepare")?;
            manifest.input(&img_path)?;
            let prob = predict_mask(&model, &read_rgb(&img_path)?)?;
            let out = work.pred_mask(tile_id);
            write_gray_png(&out, &prob_to_gray(&prob), &ctx.prov)?;
            manifest.output(&out)?;
            let n = prob.len().max(1) as f64;
            let above = prob.iter().filter(|&&p| p >= 0.5).count() as f64 / n;
            let _ = writeln!(log, "{tile_id},{:.6},{above:.6}", prob.sum() / n);
            tiles += 1;
        }
        log::info!("segmented {}", frame.frame_id);
    }
    let log_path = work.report("segment_log.csv");
    write_atomic(&log_path, |w| w.write_all(log.as_bytes()))?;
    manifest.output(&log_path)?;
    manifest.commit()?;
    Ok(SegmentSummary { tiles })
}
