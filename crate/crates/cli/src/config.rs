//! Run configuration: one TOML file drives every command, and `--set key=value`
//! overrides individual keys by dotted path before the file is validated.

use std::path::{Path, PathBuf};

use mitosis_core::dataset::TilingConfig;
use mitosis_core::detector::DetectorConfig;
use mitosis_core::evaluation::{MatchOptions, CONTEST_RADIUS};
use mitosis_core::unet::UnetConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Frame images (`<frame_id>.tif|tiff|jpg|jpeg`).
    pub frames_dir: PathBuf,
    /// One `<frame_id>.csv` of `x,y[,raters]` rows per frame.
    pub annotations_dir: PathBuf,
    pub work_dir: PathBuf,
    /// TIFF frames are re-encoded as JPEG at this quality before tiling.
    pub jpeg_quality: u8,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            frames_dir: PathBuf::from("data/frames"),
            annotations_dir: PathBuf::from("data/annotations"),
            work_dir: PathBuf::from("work"),
            jpeg_quality: 95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// When false every frame is a training frame.
    pub hold_out: bool,
    pub test_group: String,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            hold_out: true,
            test_group: "A03".into(),
        }
    }
}

/// Which frames `evaluate` scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSubset {
    Test,
    Train,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Match radius in native frame pixels.
    pub radius: f64,
    /// Count a distance exactly equal to the radius as a hit.
    pub inclusive: bool,
    pub subset: EvalSubset,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            radius: CONTEST_RADIUS,
            inclusive: true,
            subset: EvalSubset::Test,
        }
    }
}

impl EvaluationConfig {
    pub fn match_options(&self) -> MatchOptions {
        MatchOptions {
            radius: self.radius,
            inclusive: self.inclusive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds every stochastic stage; copied into `unet.seed` and `detector.seed`.
    pub seed: u64,
    pub data: DataConfig,
    pub split: SplitConfig,
    pub tiling: TilingConfig,
    pub unet: UnetConfig,
    pub detector: DetectorConfig,
    pub evaluation: EvaluationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            split: SplitConfig::default(),
            tiling: TilingConfig::default(),
            unet: UnetConfig::default(),
            detector: DetectorConfig::default(),
            evaluation: EvaluationConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads `path` (defaults when `None`), applies the overrides in order and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(CliError::io(p))?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        for kv in overrides {
            apply_override(&mut table, kv)?;
        }
        let mut cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.unet.seed = cfg.seed;
        cfg.detector.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.unet.validate()?;
        self.detector.validate()?;
        if !(self.evaluation.radius > 0.0) {
            return Err(CliError::Config(format!(
                "evaluation.radius must be > 0, got {}",
                self.evaluation.radius
            )));
        }
        if !(1..=100).contains(&self.data.jpeg_quality) {
            return Err(CliError::Config(format!(
                "data.jpeg_quality must lie in 1..=100, got {}",
                self.data.jpeg_quality
            )));
        }
        if self.split.hold_out && self.split.test_group.is_empty() {
            return Err(CliError::Config("split.test_group is empty while split.hold_out is true".into()));
        }
        Ok(())
    }

    /// The full configuration, defaults included, as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form; embedded in every artifact.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Sets `a.b.c = value` in `table`; the value is read as a TOML literal and
/// falls back to a bare string (`--set data.work_dir=/tmp/w`).
pub fn apply_override(table: &mut toml::Table, kv: &str) -> Result<()> {
    let (key, raw) = kv
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{kv}` is not of the form key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::Config(format!("override `{kv}` has an empty key segment")));
    }
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override `{kv}`: `{part}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use mitosis_core::detector::{BackboneKind, FusionMode};

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::from_toml_str("", &[]).unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn emitted_config_round_trips() {
        let mut c = RunConfig::default();
        c.detector.fusion = FusionMode::CompactProjection { dim: 64 };
        c.unet.input_size = Some([96, 96]);
        let back = RunConfig::from_toml_str(&c.to_toml(), &[]).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn emitted_defaults_are_explicit() {
        let text = RunConfig::default().to_toml();
        for key in [
            "jpeg_quality = 95",
            "test_group = \"A03\"",
            "scale = 1.7",
            "gt_half_side = 32.0",
            "mask_radius = 15.0",
            "iterations = 80",
            "padding = \"same\"",
            "base_channels = 64",
            "pool_size = 7",
            "score_thresh = 0.5",
            "final_nms_thresh = 0.3",
            "fusion_eps = 0.0001",
            "radius = 32.0",
            "inclusive = true",
        ] {
            assert!(text.contains(key), "missing `{key}` in\n{text}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml_str("[detector]\nlambada = 2.0\n", &[]).is_err());
        assert!(RunConfig::from_toml_str("colour = 1\n", &[]).is_err());
        assert!(RunConfig::from_toml_str("", &["unet.depht=3".into()]).is_err());
    }

    #[test]
    fn overrides_apply_in_order() {
        let c = RunConfig::from_toml_str(
            "seed = 4\n[detector]\nsteps = 10\n",
            &[
                "detector.steps=20".into(),
                "detector.backbone=\"tiny_random\"".into(),
                "data.work_dir=/tmp/w".into(),
                "detector.anchors.scales=[8.0, 16.0]".into(),
                "detector.steps=30".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.detector.steps, 30);
        assert_eq!(c.detector.backbone, BackboneKind::TinyRandom);
        assert_eq!(c.data.work_dir, PathBuf::from("/tmp/w"));
        assert_eq!(c.detector.anchors.scales, vec![8.0, 16.0]);
        assert_eq!((c.unet.seed, c.detector.seed), (4, 4));
        assert!(RunConfig::from_toml_str("", &["noequals".into()]).is_err());
        assert!(RunConfig::from_toml_str("", &["seed.x=1".into()]).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::from_toml_str("", &["detector.lambda=0.0".into()]).is_err());
        assert!(RunConfig::from_toml_str("", &["evaluation.radius=-1.0".into()]).is_err());
        assert!(RunConfig::from_toml_str("", &["data.jpeg_quality=0".into()]).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.detector.steps += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
