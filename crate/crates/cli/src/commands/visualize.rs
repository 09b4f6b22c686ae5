use std::collections::BTreeMap;
use std::fs;

use mitosis_core::detector::{parse_detections_csv, Detection};

use super::{list_frames, load_frame_image, Context, FrameIndex};
use crate::draw::{render_overlay, OverlayStats};
use crate::error::{CliError, Result};
use crate::workdir::{write_rgb_png, ManifestBuilder};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VisualizeOptions {
    /// Frames to render; empty means every prepared frame.
    pub frames: Vec<String>,
    pub ground_truth: bool,
}

/// Renders one overlay PNG per frame: detection boxes with scores and,
/// optionally, ground-truth centroids with their scoring circles.
pub fn run(ctx: &Context, opts: &VisualizeOptions) -> Result<BTreeMap<String, OverlayStats>> {
    let cfg = &ctx.config;
    let work = &ctx.work;
    let _lock = work.lock()?;
    let mut manifest = ManifestBuilder::start(work, "visualize", &ctx.prov)?;
    let det_path = work.detections();
    work.require(&det_path, "detect")?;
    let index = FrameIndex::load(work)?;
    manifest.input(&det_path)?;

    let text = fs::read_to_string(&det_path).map_err(CliError::io(&det_path))?;
    let mut by_frame: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for row in parse_detections_csv(&text)? {
        by_frame.entry(row.frame_id).or_default().push(row.detection);
    }
    for id in &opts.frames {
        if index.get(id).is_none() {
            return Err(CliError::Config(format!("frame `{id}` is not in the prepared frame index")));
        }
    }
    let sources: BTreeMap<String, std::path::PathBuf> = list_frames(&cfg.data.frames_dir)?.into_iter().collect();
    fs::create_dir_all(work.overlays()).map_err(CliError::io(work.overlays()))?;
    let mut stats = BTreeMap::new();
    for frame in &index.frames {
        if !opts.frames.is_empty() && !opts.frames.contains(&frame.frame_id) {
            continue;
        }
        let src = sources.get(&frame.frame_id).ok_or_else(|| {
            CliError::artifact(&cfg.data.frames_dir, format!("source image of frame `{}` not found", frame.frame_id))
        })?;
        let image = load_frame_image(src, cfg.data.jpeg_quality)?;
        let dets = by_frame.get(&frame.frame_id).map(Vec::as_slice).unwrap_or(&[]);
        let gts = frame.centroids();
        let (overlay, s) = render_overlay(
            &image,
            dets,
            opts.ground_truth.then_some(gts.as_slice()),
            cfg.evaluation.radius,
        );
        let out = work.overlay(&frame.frame_id);
        write_rgb_png(&out, &overlay, &ctx.prov)?;
        manifest.output(&out)?;
        stats.insert(frame.frame_id.clone(), s);
    }
    manifest.commit()?;
    Ok(stats)
}
