use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;

use mitosis_core::detector::parse_detections_csv;
use mitosis_core::evaluation::{aggregate, compare_to_published, evaluate_frame, EvalReport, ScoredPoint};
use serde::{Deserialize, Serialize};

use super::{Context, FrameIndex, SplitRecord};
use crate::config::EvalSubset;
use crate::error::{CliError, Result};
use crate::workdir::{write_atomic, write_json, ManifestBuilder};

/// Content of `reports/report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub config_hash: String,
    pub seed: u64,
    pub subset: EvalSubset,
    pub radius: f64,
    pub inclusive: bool,
    #[serde(flatten)]
    pub report: EvalReport,
}

/// Scores the detections of the configured frame subset against the
/// annotated centroids.
pub fn run(ctx: &Context) -> Result<EvalReport> {
    let cfg = &ctx.config;
    let work = &ctx.work;
    let _lock = work.lock()?;
    let mut manifest = ManifestBuilder::start(work, "evaluate", &ctx.prov)?;
    let det_path = work.detections();
    work.require(&det_path, "detect")?;
    let split = SplitRecord::load(work)?.split;
    let index = FrameIndex::load(work)?;
    manifest.input(&det_path)?;
    manifest.input(&work.frames_index())?;
    manifest.input(&work.split())?;

    let text = fs::read_to_string(&det_path).map_err(CliError::io(&det_path))?;
    let mut by_frame: BTreeMap<String, Vec<ScoredPoint>> = BTreeMap::new();
    for row in parse_detections_csv(&text)? {
        by_frame.entry(row.frame_id).or_default().push(ScoredPoint {
            x: row.centroid.0,
            y: row.centroid.1,
            score: row.detection.score,
        });
    }
    for id in by_frame.keys() {
        if index.get(id).is_none() {
            log::warn!("detections for unknown frame `{id}` are ignored");
        }
    }
    let selected = match cfg.evaluation.subset {
        EvalSubset::Test => &split.test_frame_ids,
        EvalSubset::Train => &split.train_frame_ids,
        EvalSubset::All => &index.frames.iter().map(|f| f.frame_id.clone()).collect(),
    };
    if selected.is_empty() {
        return Err(CliError::Config(format!(
            "evaluation.subset = {:?} selects no frames in this split",
            cfg.evaluation.subset
        )));
    }
    let options = cfg.evaluation.match_options();
    let frames = index
        .frames
        .iter()
        .filter(|f| selected.contains(&f.frame_id))
        .map(|f| {
            let dets = by_frame.get(&f.frame_id).map(Vec::as_slice).unwrap_or(&[]);
            evaluate_frame(&f.frame_id, dets, &f.centroids(), options)
        })
        .collect();
    let report = aggregate(frames);

    let json_path = work.report("report.json");
    write_json(
        &json_path,
        &ReportFile {
            config_hash: ctx.prov.config_hash.clone(),
            seed: ctx.prov.seed,
            subset: cfg.evaluation.subset,
            radius: options.radius,
            inclusive: options.inclusive,
            report: report.clone(),
        },
    )?;
    manifest.output(&json_path)?;
    let txt_path = work.report("report.txt");
    let summary = render_summary(ctx, &report);
    write_atomic(&txt_path, |w| w.write_all(summary.as_bytes()))?;
    manifest.output(&txt_path)?;
    manifest.commit()?;
    Ok(report)
}

/// Published-comparison table followed by per-frame counts.
pub fn render_summary(ctx: &Context, report: &EvalReport) -> String {
    let mut out = format!("{}\n\n", ctx.prov.csv_comment());
    out.push_str(&compare_to_published(report));
    let _ = writeln!(out, "\n{:<16} {:>4} {:>4} {:>4} {:>10}", "frame", "TP", "FP", "FN", "optimal TP");
    for f in &report.frames {
        let opt = f.optimal_tp.map_or("-".to_string(), |v| v.to_string());
        let _ = writeln!(out, "{:<16} {:>4} {:>4} {:>4} {:>10}", f.frame_id, f.tp, f.fp, f.fn_, opt);
    }
    if !report.greedy_below_optimal.is_empty() {
        let _ = writeln!(
            out,
            "\ngreedy matching below the exhaustive optimum in: {}",
            report.greedy_below_optimal.join(", ")
        );
    }
    out
}
