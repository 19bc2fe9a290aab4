//! Checkpoints: `<stem>.json` metadata with a named-tensor index and a
//! `<stem>.bin` blob of little-endian float32 values.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ParamSet, Tensor};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in float32 elements from the start of the blob.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Model family, e.g. `mlp` or `char_lstm`.
    pub kind: String,
    pub config: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

pub fn save_checkpoint<T: Scalar>(stem: &Path, kind: &str, config: serde_json::Value, params: &ParamSet<T>) -> Result<(), CheckpointError> {
    let mut blob = Vec::with_capacity(params.n_scalars() * 4);
    let mut tensors = Vec::new();
    for t in &params.tensors {
        tensors.push(TensorEntry { name: t.name.clone(), shape: t.shape.clone(), offset: blob.len() / 4 });
        for v in &t.data {
            blob.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    let meta = Checkpoint { kind: kind.to_string(), config, tensors };
    let (json, bin) = (with_ext(stem, ".json"), with_ext(stem, ".bin"));
    fs::write(&bin, blob).map_err(|source| CheckpointError::Io { path: bin, source })?;
    let text = serde_json::to_vec_pretty(&meta).expect("checkpoint metadata serializes");
    fs::write(&json, text).map_err(|source| CheckpointError::Io { path: json, source })
}

pub fn load_checkpoint<T: Scalar>(stem: &Path) -> Result<(Checkpoint, ParamSet<T>), CheckpointError> {
    let (json, bin) = (with_ext(stem, ".json"), with_ext(stem, ".bin"));
    let text = fs::read(&json).map_err(|source| CheckpointError::Io { path: json.clone(), source })?;
    let meta: Checkpoint =
        serde_json::from_slice(&text).map_err(|e| CheckpointError::Format { path: json.clone(), reason: e.to_string() })?;
    let blob = fs::read(&bin).map_err(|source| CheckpointError::Io { path: bin.clone(), source })?;
    let bad = |reason: String| CheckpointError::Format { path: bin.clone(), reason };
    if blob.len() % 4 != 0 {
        return Err(bad(format!("{} bytes is not a whole number of float32 values", blob.len())));
    }
    let values: Vec<f32> = blob.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let mut params = ParamSet::new();
    let mut expected_offset = 0;
    for e in &meta.tensors {
        let len: usize = e.shape.iter().product();
        if e.offset != expected_offset || e.offset + len > values.len() {
            return Err(bad(format!("tensor {} at offset {} (length {len}) does not fit the blob", e.name, e.offset)));
        }
        let data = values[e.offset..e.offset + len].iter().map(|&v| T::of_f32(v)).collect();
        params.tensors.push(Tensor { name: e.name.clone(), shape: e.shape.clone(), data });
        expected_offset += len;
    }
    if expected_offset != values.len() {
        return Err(bad(format!("{} trailing values", values.len() - expected_offset)));
    }
    Ok((meta, params))
}
