use std::path::{Path, PathBuf};

use mitosis_cli::commands::{detect, evaluate, prepare, segment, synth, train_det, train_seg};
use mitosis_cli::{Context, RunConfig};
use mitosis_core::dataset::SyntheticConfig;
use mitosis_core::detector::BackboneKind;

use crate::ensure;

pub fn config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic.toml")
}

fn e<E: std::fmt::Display>(stage: &'static str) -> impl Fn(E) -> String {
    move |err| format!("{stage}: {err}")
}

pub fn run() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(e("tempdir"))?;
    let data = tmp.path().join("synthetic");
    let synthetic = SyntheticConfig::default();
    ensure(synthetic.frames == 8 && synthetic.seed == 0, || "synthetic defaults changed".into())?;
    synth::run(&data, &synthetic).map_err(e("synth"))?;

    let overrides = [
        format!("data.frames_dir='{}'", data.join("frames").display()),
        format!("data.annotations_dir='{}'", data.join("annotations").display()),
        format!("data.work_dir='{}'", tmp.path().join("work").display()),
    ];
    let cfg = RunConfig::load(Some(&config_path()), &overrides).map_err(e("config"))?;
    ensure(
        cfg.seed == 0
            && !cfg.split.hold_out
            && cfg.unet.iterations == 80
            && cfg.detector.steps <= 2000
            && cfg.detector.backbone == BackboneKind::TinyRandom,
        || "configs/synthetic.toml no longer describes the overfit run".into(),
    )?;
    let ctx = Context::new(cfg);

    let prep = prepare::run(&ctx).map_err(e("prepare"))?;
    ensure(prep.split.test_frame_ids.is_empty() && prep.split.train_frame_ids.len() == 8, || {
        "expected all eight frames in training".into()
    })?;
    train_seg::run(&ctx).map_err(e("train-seg"))?;
    segment::run(&ctx).map_err(e("segment"))?;
    let det = train_det::run(&ctx).map_err(e("train-det"))?;
    detect::run(&ctx).map_err(e("detect"))?;
    let report = evaluate::run(&ctx).map_err(e("evaluate"))?;
    ensure(report.frames.len() == 8, || format!("scored {} frames, expected 8", report.frames.len()))?;
    let detail = format!(
        "F {:.3} (TP {}, FP {}, FN {}) after {} detector steps",
        report.f_measure,
        report.tp,
        report.fp,
        report.fn_,
        det.losses.len()
    );
    ensure(report.f_measure >= 0.90, || format!("{detail}; need F >= 0.90"))?;
    Ok(detail)
}
