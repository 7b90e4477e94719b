//! Versioned binary checkpoints.
//!
//! Layout: the 8-byte magic `TOPOCKPT`, a little-endian `u32` format
//! version, a `u32` header length, a JSON header describing the model and
//! every tensor (name, group, shape), then all tensor values as
//! little-endian `f64` in header order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::models::{Model, ModelSpec};
use crate::params::ParamGroup;
use crate::train::{Normalization, Scaler};

pub const MAGIC: &[u8; 8] = b"TOPOCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("truncated checkpoint")]
    Truncated,
    #[error("malformed header: {0}")]
    Header(String),
    #[error("tensor {name:?} does not match the model: {reason}")]
    Mismatch { name: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    group: ParamGroup,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    normalization: Normalization,
    scalers: BTreeMap<String, Scaler>,
    tensors: Vec<TensorEntry>,
}

/// A trained model with the normalization fitted to its training series.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub normalization: Normalization,
    /// Fitted scaler per training series id.
    pub scalers: BTreeMap<String, Scaler>,
}

impl Checkpoint {
    /// Scaler for `series_id`, refitted on `history` when the series was not
    /// part of training.
    pub fn scaler_for(&self, series_id: &str, history: &[f64]) -> Scaler {
        self.scalers.get(series_id).copied().unwrap_or_else(|| Scaler::fit(self.normalization, history))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            spec: self.model.spec,
            normalization: self.normalization,
            scalers: self.scalers.clone(),
            tensors: self
                .model
                .params
                .params()
                .iter()
                .map(|p| TensorEntry { name: p.name.clone(), group: p.group, shape: p.value.shape().to_vec() })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + 8 * self.model.params.scalar_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for p in self.model.params.params() {
            for x in p.value.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 16 {
            return Err(if bytes.starts_with(&MAGIC[..bytes.len().min(8)]) { CheckpointError::Truncated } else { CheckpointError::BadMagic });
        }
        if &bytes[..8] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
        let version = word(8);
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let header_len = word(12) as usize;
        let body = bytes.get(16..16 + header_len).ok_or(CheckpointError::Truncated)?;
        let header: Header = serde_json::from_slice(body).map_err(|e| CheckpointError::Header(e.to_string()))?;
        let mut model = Model::skeleton(header.spec).map_err(|e| CheckpointError::Header(e.to_string()))?;
        if header.tensors.len() != model.params.len() {
            return Err(CheckpointError::Header(format!(
                "{} tensors stored, model has {}",
                header.tensors.len(),
                model.params.len()
            )));
        }
        let mut cursor = 16 + header_len;
        for (entry, param) in header.tensors.iter().zip(model.params.params_mut()) {
            let mismatch = |reason: String| CheckpointError::Mismatch { name: entry.name.clone(), reason };
            if entry.name != param.name || entry.group != param.group {
                return Err(mismatch(format!("expected {} ({})", param.name, param.group.name())));
            }
            if entry.shape != param.value.shape() {
                return Err(mismatch(format!("shape {:?}, expected {:?}", entry.shape, param.value.shape())));
            }
            let len = param.value.len();
            let raw = bytes.get(cursor..cursor + 8 * len).ok_or(CheckpointError::Truncated)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            param.value = Tensor::new(entry.shape.clone(), data).map_err(|e| mismatch(e.to_string()))?;
            cursor += 8 * len;
        }
        if cursor != bytes.len() {
            return Err(CheckpointError::Header(format!("{} trailing bytes", bytes.len() - cursor)));
        }
        Ok(Self { model, normalization: header.normalization, scalers: header.scalers })
    }
}
