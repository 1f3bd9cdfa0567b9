//! PFCK parameter checkpoints.
//!
//! Little-endian: magic `PFCK`, u32 format version, u32 manifest length,
//! the manifest as UTF-8 JSON, then every tensor as raw `f32` values in
//! manifest order. The manifest also carries everything needed to rebuild
//! the model and run it on new circuits: model and training configuration,
//! target spec, schema and both fitted scalers.

use std::path::Path;

use pingnn_core::graph::{FeatureScaler, TargetScaler};
use pingnn_core::model::{Model, ModelConfig};
use pingnn_core::target::TargetSpec;
use pingnn_core::train::TrainConfig;
use pingnn_core::Scalar;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{io, Result};
use crate::schema::SchemaFile;

pub const MAGIC: &[u8; 4] = b"PFCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CheckpointError {
    #[error("not a PFCK checkpoint")]
    BadMagic,
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    FormatVersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("checkpoint has {0} bytes after the last tensor")]
    TrailingBytes(usize),
    #[error("checkpoint manifest: {0}")]
    Manifest(String),
    #[error("checkpoint tensor `{name}` does not match the model layout")]
    TensorMismatch { name: String },
    #[error("checkpoint tensor `{0}` holds a non-finite value")]
    NonFinite(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub in_dim: usize,
    pub targets: TargetSpec,
    pub schema: SchemaFile,
    pub schema_hash: u32,
    pub feature_scaler: FeatureScaler,
    pub target_scaler: TargetScaler,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

pub fn encode<T: Scalar>(model: &Model<T>, meta: &CheckpointMeta) -> Vec<u8> {
    let tensors = model.tensor_specs().into_iter().map(|t| TensorEntry { name: t.name, shape: t.shape }).collect();
    let manifest = serde_json::to_vec(&Manifest { meta: meta.clone(), tensors }).expect("manifest serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&u32::try_from(manifest.len()).expect("manifest under 4 GiB").to_le_bytes());
    out.extend_from_slice(&manifest);
    for data in model.param_slices() {
        for v in data {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<(Model<T>, CheckpointMeta), CheckpointError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(if bytes.len() < 4 { CheckpointError::Truncated } else { CheckpointError::BadMagic });
    }
    if bytes.len() < 12 {
        return Err(CheckpointError::Truncated);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(CheckpointError::FormatVersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let json = bytes.get(12..12 + len).ok_or(CheckpointError::Truncated)?;
    let manifest: Manifest = serde_json::from_slice(json).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    let meta = manifest.meta;
    let mut model = Model::<T>::init(meta.model, meta.in_dim, meta.targets.clone(), 0);
    let layout = model.tensor_specs();
    if layout.len() != manifest.tensors.len() {
        return Err(CheckpointError::Manifest(format!(
            "{} tensors listed, the model has {}",
            manifest.tensors.len(),
            layout.len()
        )));
    }
    for (want, got) in layout.iter().zip(&manifest.tensors) {
        if want.name != got.name || want.shape != got.shape {
            return Err(CheckpointError::TensorMismatch { name: got.name.clone() });
        }
    }
    let mut pos = 12 + len;
    for (slot, entry) in model.param_slices_mut().into_iter().zip(&manifest.tensors) {
        let n = slot.len() * 4;
        let raw = bytes.get(pos..pos + n).ok_or(CheckpointError::Truncated)?;
        for (dst, b) in slot.iter_mut().zip(raw.chunks_exact(4)) {
            let v = f32::from_le_bytes(b.try_into().unwrap());
            if !v.is_finite() {
                return Err(CheckpointError::NonFinite(entry.name.clone()));
            }
            *dst = T::lit(v as f64);
        }
        pos += n;
    }
    if pos != bytes.len() {
        return Err(CheckpointError::TrailingBytes(bytes.len() - pos));
    }
    Ok((model, meta))
}

pub fn save_checkpoint<T: Scalar>(path: &Path, model: &Model<T>, meta: &CheckpointMeta) -> Result<()> {
    std::fs::write(path, encode(model, meta)).map_err(io(path))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(Model<T>, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(io(path))?;
    Ok(decode(&bytes)?)
}
