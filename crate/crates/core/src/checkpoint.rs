//! Checkpoint persistence.
//!
//! File layout: an 8-byte little-endian manifest length, the manifest
//! JSON, then the raw tensor payload as little-endian 32-bit floats in
//! manifest order. Training math is 64-bit; storage narrows to 32-bit.
//! Save -> load -> save reproduces the payload bit for bit.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{ModelConfig, ModelParams};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::vocab::Vocab;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum CheckpointError {
    Io(String),
    Format(String),
    VersionMismatch { found: u32, expected: u32 },
    Vocab(crate::vocab::VocabError),
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Io(e) => write!(f, "checkpoint io error: {e}"),
            Self::Format(e) => write!(f, "bad checkpoint format: {e}"),
            Self::VersionMismatch { found, expected } => {
                write!(f, "checkpoint format version {found}, this build reads {expected}")
            }
            Self::Vocab(e) => write!(f, "checkpoint vocabulary: {e}"),
        }
    }
}

impl std::error::Error for CheckpointError {}

impl From<crate::vocab::VocabError> for CheckpointError {
    fn from(e: crate::vocab::VocabError) -> Self {
        CheckpointError::Vocab(e)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    byte_offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    model: ModelConfig,
    vocab: BTreeMap<String, u32>,
    label_set: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    markers: Option<Vec<(String, String)>>,
    step: u64,
    validation_score: f64,
    rng_state: u64,
    tensors: Vec<TensorEntry>,
}

/// A saved (or saveable) model state: parameters plus everything
/// needed to run inference and resume deterministically.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub vocab: Vocab,
    pub label_set: Vec<String>,
    /// Label-to-marker table for the consistency metric, when the
    /// training corpus was synthetic.
    pub markers: Option<Vec<(String, String)>>,
    pub step: u64,
    pub validation_score: f64,
    pub rng_state: u64,
    pub store: ParamStore,
}

impl Checkpoint {
    /// Reconstructs runnable model parameters.
    pub fn model(&self) -> Result<ModelParams, crate::model::ModelError> {
        ModelParams::from_store(self.model_config, self.store.clone())
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut tensors = Vec::with_capacity(self.store.len());
        let mut payload: Vec<u8> = Vec::new();
        for (name, t) in self.store.iter() {
            tensors.push(TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                dtype: "f32".to_string(),
                byte_offset: payload.len(),
            });
            for &v in t.data() {
                payload.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            model: self.model_config,
            vocab: self.vocab.to_map(),
            label_set: self.label_set.clone(),
            markers: self.markers.clone(),
            step: self.step,
            validation_score: self.validation_score,
            rng_state: self.rng_state,
            tensors,
        };
        let manifest_json =
            serde_json::to_vec(&manifest).map_err(|e| CheckpointError::Format(e.to_string()))?;

        let io = |e: std::io::Error| CheckpointError::Io(format!("{}: {e}", path.display()));
        let mut file = std::fs::File::create(path).map_err(io)?;
        file.write_all(&(manifest_json.len() as u64).to_le_bytes()).map_err(io)?;
        file.write_all(&manifest_json).map_err(io)?;
        file.write_all(&payload).map_err(io)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
        let io = |e: std::io::Error| CheckpointError::Io(format!("{}: {e}", path.display()));
        let mut file = std::fs::File::open(path).map_err(io)?;
        let mut len_bytes = [0u8; 8];
        file.read_exact(&mut len_bytes).map_err(io)?;
        let manifest_len = u64::from_le_bytes(len_bytes) as usize;
        let mut manifest_json = vec![0u8; manifest_len];
        file.read_exact(&mut manifest_json).map_err(io)?;
        let manifest: Manifest = serde_json::from_slice(&manifest_json)
            .map_err(|e| CheckpointError::Format(e.to_string()))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: manifest.format_version,
                expected: FORMAT_VERSION,
            });
        }
        let mut payload = Vec::new();
        file.read_to_end(&mut payload).map_err(io)?;

        let mut store = ParamStore::new();
        for entry in &manifest.tensors {
            if entry.dtype != "f32" {
                return Err(CheckpointError::Format(format!(
                    "tensor '{}' has unsupported dtype '{}'",
                    entry.name, entry.dtype
                )));
            }
            let count: usize = entry.shape.iter().product();
            let end = entry.byte_offset + count * 4;
            if end > payload.len() {
                return Err(CheckpointError::Format(format!(
                    "tensor '{}' extends past payload ({} > {})",
                    entry.name,
                    end,
                    payload.len()
                )));
            }
            let mut data = Vec::with_capacity(count);
            for i in 0..count {
                let at = entry.byte_offset + i * 4;
                let bits = [payload[at], payload[at + 1], payload[at + 2], payload[at + 3]];
                data.push(f32::from_le_bytes(bits) as f64);
            }
            store.add(entry.name.clone(), Tensor::from_raw(entry.shape.clone(), data));
        }

        Ok(Checkpoint {
            model_config: manifest.model,
            vocab: Vocab::from_map(manifest.vocab)?,
            label_set: manifest.label_set,
            markers: manifest.markers,
            step: manifest.step,
            validation_score: manifest.validation_score,
            rng_state: manifest.rng_state,
            store,
        })
    }
}
