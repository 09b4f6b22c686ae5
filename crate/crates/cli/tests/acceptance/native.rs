use std::path::PathBuf;

use mitosis_cli::commands::prepare;
use mitosis_cli::{Context, RunConfig};
use mitosis_core::evaluation::{compare_to_published, EvalReport};

use crate::Outcome;

pub const DATA_ENV: &str = "MITOS_DATA_DIR";

fn check(root: PathBuf) -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let overrides = [
        format!("data.frames_dir='{}'", root.join("frames").display()),
        format!("data.annotations_dir='{}'", root.join("annotations").display()),
        format!("data.work_dir='{}'", tmp.path().join("work").display()),
    ];
    let ctx = Context::new(RunConfig::load(None, &overrides).map_err(|e| e.to_string())?);
    let s = prepare::run(&ctx).map_err(|e| format!("prepare: {e}"))?;
    if s.tiles != 16 * s.frames {
        return Err(format!("{} tiles for {} frames", s.tiles, s.frames));
    }
    if s.crop_size != Some((384, 344)) {
        return Err(format!("pre-scaling tile size {:?}, expected 384x344", s.crop_size));
    }
    let (n, m) = (s.split.test_frame_ids.len(), s.split.test_mitoses);
    if (n, m) != (96, 135) {
        return Err(format!("hold-out has {n} frames / {m} mitoses, expected 96 / 135"));
    }
    let empty = EvalReport {
        tp: 0,
        fp: 0,
        fn_: 0,
        precision: 0.0,
        recall: 0.0,
        f_measure: 0.0,
        greedy_below_optimal: Vec::new(),
        frames: Vec::new(),
    };
    let table = compare_to_published(&empty);
    for v in ["0.507", "0.356", "0.437", "0.442"] {
        if !table.contains(v) {
            return Err(format!("comparison table lacks {v}"));
        }
    }
    Ok(format!("{} frames -> {} tiles of 384x344; hold-out 96 frames / 135 mitoses; table renders", s.frames, s.tiles))
}

pub fn run() -> Outcome {
    match std::env::var_os(DATA_ENV) {
        Some(dir) => check(PathBuf::from(dir)).into(),
        None => Outcome::Skip(format!("set {DATA_ENV} to a directory with frames/ and annotations/")),
    }
}
