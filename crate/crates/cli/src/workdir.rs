//! Work-directory layout, the advisory lock, atomic writes, per-command
//! manifests and provenance-tagged artifacts.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const SUBDIRS: [&str; 7] = ["tiles", "masks_gt", "masks_pred", "checkpoints", "detections", "reports", "overlays"];

/// Config hash and seed stamped into every artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn of(config: &RunConfig) -> Self {
        Self {
            config_hash: config.hash(),
            seed: config.seed,
        }
    }

    /// Comment line opening every CSV artifact.
    pub fn csv_comment(&self) -> String {
        format!("# config_hash={} seed={}", self.config_hash, self.seed)
    }
}

#[derive(Debug, Clone)]
pub struct WorkDir {
    root: PathBuf,
}

impl WorkDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn create_layout(&self) -> Result<()> {
        for d in SUBDIRS.iter().chain(["manifests"].iter()) {
            let p = self.root.join(d);
            fs::create_dir_all(&p).map_err(CliError::io(&p))?;
        }
        Ok(())
    }

    pub fn tiles(&self) -> PathBuf {
        self.root.join("tiles")
    }

    pub fn tile_image(&self, tile_id: &str) -> PathBuf {
        self.tiles().join(format!("{tile_id}.png"))
    }

    pub fn tile_record(&self, tile_id: &str) -> PathBuf {
        self.tiles().join(format!("{tile_id}.json"))
    }

    pub fn masks_gt(&self) -> PathBuf {
        self.root.join("masks_gt")
    }

    pub fn gt_mask(&self, tile_id: &str) -> PathBuf {
        self.masks_gt().join(format!("{tile_id}.png"))
    }

    pub fn masks_pred(&self) -> PathBuf {
        self.root.join("masks_pred")
    }

    pub fn pred_mask(&self, tile_id: &str) -> PathBuf {
        self.masks_pred().join(format!("{tile_id}.png"))
    }

    pub fn unet_checkpoint(&self) -> PathBuf {
        self.root.join("checkpoints").join("unet.ckpt")
    }

    pub fn detector_checkpoint(&self) -> PathBuf {
        self.root.join("checkpoints").join("detector.ckpt")
    }

    pub fn detections(&self) -> PathBuf {
        self.root.join("detections").join("detections.csv")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.reports().join(name)
    }

    pub fn overlays(&self) -> PathBuf {
        self.root.join("overlays")
    }

    pub fn overlay(&self, frame_id: &str) -> PathBuf {
        self.overlays().join(format!("{frame_id}.png"))
    }

    pub fn frames_index(&self) -> PathBuf {
        self.root.join("frames.json")
    }

    pub fn split(&self) -> PathBuf {
        self.root.join("split.json")
    }

    pub fn manifest(&self, command: &str) -> PathBuf {
        self.root.join("manifests").join(format!("{command}.json"))
    }

    /// Takes the advisory lock; it is released when the guard drops.
    pub fn lock(&self) -> Result<LockGuard> {
        fs::create_dir_all(&self.root).map_err(CliError::io(&self.root))?;
        let path = self.root.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(LockGuard { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Locked(path)),
            Err(e) => Err(CliError::Io { path, source: e }),
        }
    }

    /// Relative path used as the manifest key.
    pub fn rel(&self, path: &Path) -> String {
        path.strip_prefix(&self.root)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/")
    }

    /// Errors with the producing command when `path` is absent.
    pub fn require(&self, path: &Path, producer: &'static str) -> Result<()> {
        if path.exists() {
            Ok(())
        } else {
            Err(CliError::MissingArtifact {
                path: path.to_path_buf(),
                producer,
            })
        }
    }
}

#[derive(Debug)]
pub struct LockGuard {
    path: PathBuf,
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Writes through a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(CliError::io(parent))?;
    }
    let tmp = temp_path(path);
    let result = (|| {
        let mut w = BufWriter::new(File::create(&tmp)?);
        write(&mut w)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(CliError::Io { path: path.to_path_buf(), source: e });
    }
    fs::rename(&tmp, path).map_err(CliError::io(path))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, |w| w.write_all(bytes))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::artifact(path, e))
}

/// Writes a checkpoint through a temp file, using the model's own writer.
pub fn save_atomic(path: &Path, save: impl FnOnce(&Path) -> mitosis_core::Result<()>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(CliError::io(parent))?;
    }
    let tmp = temp_path(path);
    if let Err(e) = save(&tmp) {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    fs::rename(&tmp, path).map_err(CliError::io(path))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(CliError::io(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn png_bytes(width: u32, height: u32, color: png::ColorType, data: &[u8], prov: &Provenance) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        enc.add_text_chunk("config_hash".into(), prov.config_hash.clone())
            .expect("latin-1 text");
        enc.add_text_chunk("seed".into(), prov.seed.to_string()).expect("latin-1 text");
        let mut w = enc.write_header().expect("in-memory PNG header");
        w.write_image_data(data).expect("in-memory PNG data");
    }
    out
}

/// PNG with `config_hash` and `seed` tEXt chunks.
pub fn write_rgb_png(path: &Path, img: &RgbImage, prov: &Provenance) -> Result<()> {
    write_bytes(path, &png_bytes(img.width(), img.height(), png::ColorType::Rgb, img.as_raw(), prov))
}

pub fn write_gray_png(path: &Path, img: &GrayImage, prov: &Provenance) -> Result<()> {
    write_bytes(path, &png_bytes(img.width(), img.height(), png::ColorType::Grayscale, img.as_raw(), prov))
}

/// The tEXt chunks of a PNG file, keyword to text.
pub fn png_text(path: &Path) -> Result<BTreeMap<String, String>> {
    let file = File::open(path).map_err(CliError::io(path))?;
    let reader = png::Decoder::new(std::io::BufReader::new(file))
        .read_info()
        .map_err(|e| CliError::artifact(path, e))?;
    Ok(reader
        .info()
        .uncompressed_latin1_text
        .iter()
        .map(|t| (t.keyword.clone(), t.text.clone()))
        .collect())
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)
        .map_err(|source| CliError::ImageRead {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8())
}

pub fn read_gray(path: &Path) -> Result<GrayImage> {
    Ok(image::open(path)
        .map_err(|source| CliError::ImageRead {
            path: path.to_path_buf(),
            source,
        })?
        .to_luma8())
}

/// What a command consumed and produced, keyed by path with SHA-256 values.
/// No timestamps, so unchanged reruns reproduce the file byte for byte.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

/// Collects artifacts during a command; nothing reaches disk until `commit`.
pub struct ManifestBuilder {
    work: WorkDir,
    manifest: Manifest,
}

impl ManifestBuilder {
    /// Removes any manifest left by an earlier run of `command`, so a failure
    /// leaves none behind.
    pub fn start(work: &WorkDir, command: &str, prov: &Provenance) -> Result<Self> {
        let path = work.manifest(command);
        match fs::remove_file(&path) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(CliError::Io { path, source: e }),
        }
        Ok(Self {
            work: work.clone(),
            manifest: Manifest {
                command: command.to_string(),
                config_hash: prov.config_hash.clone(),
                seed: prov.seed,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
            },
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let hash = sha256_file(path)?;
        self.manifest.inputs.insert(self.work.rel(path), hash);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        let hash = sha256_file(path)?;
        self.manifest.outputs.insert(self.work.rel(path), hash);
        Ok(())
    }

    pub fn commit(self) -> Result<Manifest> {
        write_json(&self.work.manifest(&self.manifest.command), &self.manifest)?;
        Ok(self.manifest)
    }
}
