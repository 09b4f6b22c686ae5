//! Versioned binary checkpoints.
//!
//! Layout:
//!
//! ```text
//! <magic>\n                 e.g. "unet-v1\n"
//! u64 LE                    length of the JSON metadata block
//! JSON metadata             caller metadata + tensor directory
//! f64 LE * N                tensor values, in directory order
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::Param;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

pub fn encode(magic: &str, meta: &serde_json::Value, params: &[&Param]) -> Result<Vec<u8>> {
    let header = Header {
        meta: meta.clone(),
        tensors: params
            .iter()
            .map(|p| TensorEntry {
                name: p.name.clone(),
                shape: p.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let total: usize = params.iter().map(|p| p.len()).sum();
    let mut buf = Vec::with_capacity(magic.len() + 9 + json.len() + total * 8);
    buf.extend_from_slice(magic.as_bytes());
    buf.push(b'\n');
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for p in params {
        for v in p.value.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn write(path: &Path, magic: &str, meta: &serde_json::Value, params: &[&Param]) -> Result<()> {
    let bytes = encode(magic, meta, params)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

/// A decoded checkpoint: caller metadata plus named tensors in file order.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, ArrayD<f64>)>,
}

impl Loaded {
    /// Copies the stored tensors into `params`, checking names and shapes.
    pub fn restore_into(&self, path: &Path, params: Vec<&mut Param>) -> Result<()> {
        if params.len() != self.tensors.len() {
            return Err(bad(path, format!(
                "expected {} tensors, file has {}",
                params.len(),
                self.tensors.len()
            )));
        }
        for (p, (name, value)) in params.into_iter().zip(&self.tensors) {
            if &p.name != name || p.value.shape() != value.shape() {
                return Err(bad(path, format!(
                    "tensor `{name}` {:?} does not match model tensor `{}` {:?}",
                    value.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            p.value.assign(value);
        }
        Ok(())
    }
}

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn decode(path: &Path, magic: &str, bytes: &[u8]) -> Result<Loaded> {
    let prefix = format!("{magic}\n");
    if !bytes.starts_with(prefix.as_bytes()) {
        return Err(bad(path, format!("missing `{magic}` header")));
    }
    let mut at = prefix.len();
    let len_bytes: [u8; 8] = bytes
        .get(at..at + 8)
        .and_then(|s| s.try_into().ok())
        .ok_or_else(|| bad(path, "truncated header"))?;
    let json_len = u64::from_le_bytes(len_bytes) as usize;
    at += 8;
    let json = bytes
        .get(at..at + json_len)
        .ok_or_else(|| bad(path, "truncated metadata"))?;
    let header: Header = serde_json::from_slice(json)?;
    at += json_len;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for t in header.tensors {
        let n: usize = t.shape.iter().product();
        let raw = bytes
            .get(at..at + n * 8)
            .ok_or_else(|| bad(path, format!("truncated tensor `{}`", t.name)))?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        at += n * 8;
        let arr = ArrayD::from_shape_vec(IxDyn(&t.shape), values)
            .map_err(|e| bad(path, e.to_string()))?;
        tensors.push((t.name, arr));
    }
    if at != bytes.len() {
        return Err(bad(path, "trailing bytes after last tensor"));
    }
    Ok(Loaded {
        meta: header.meta,
        tensors,
    })
}

pub fn read(path: &Path, magic: &str) -> Result<Loaded> {
    let bytes = fs::read(path).map_err(|e| bad(path, e.to_string()))?;
    decode(path, magic, &bytes)
}
