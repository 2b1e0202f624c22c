//! Binary checkpoint files holding a model, its vocabulary, and where the
//! weights came from.
//!
//! Layout: the magic bytes `DFS1`, a little-endian u32 header length, a
//! UTF-8 JSON header (model config, provenance, vocabulary tokens, and a
//! tensor manifest of name, shape, and payload offset), then the raw
//! little-endian f32 tensor payloads concatenated in manifest order. The
//! manifest is sorted by parameter name, and loading verifies it against
//! the parameter set the config implies, so a round trip is bitwise exact
//! or fails loudly.

use std::collections::BTreeMap;
use std::error::Error;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Phase, Provenance};
use crate::data::Vocab;
use crate::model::{expected_shapes, EncoderModel, ModelConfig, ModelError};
use crate::tensor::Tensor;

/// File magic identifying a checkpoint.
pub const MAGIC: [u8; 4] = *b"DFS1";

/// Errors from checkpoint serialization.
#[derive(Debug)]
pub enum CheckpointError {
    /// Reading or writing the file failed.
    Io { path: PathBuf, source: std::io::Error },
    /// The file does not start with the checkpoint magic.
    BadMagic { found: [u8; 4] },
    /// The file ends before the data it declares.
    Truncated { detail: String },
    /// The JSON header cannot be decoded or reassembled.
    BadHeader { detail: String },
    /// The tensor manifest disagrees with the model configuration.
    ManifestMismatch { detail: String },
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointError::Io { path, source } => {
                write!(f, "checkpoint I/O failed for {}: {source}", path.display())
            }
            CheckpointError::BadMagic { found } => {
                write!(f, "bad magic {found:?}, not a checkpoint file")
            }
            CheckpointError::Truncated { detail } => write!(f, "truncated checkpoint: {detail}"),
            CheckpointError::BadHeader { detail } => write!(f, "bad checkpoint header: {detail}"),
            CheckpointError::ManifestMismatch { detail } => {
                write!(f, "checkpoint manifest mismatch: {detail}")
            }
        }
    }
}

impl Error for CheckpointError {
    fn source(&self) -> Option<&(dyn Error + 'static)> {
        match self {
            CheckpointError::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

/// A trained model with everything needed to reproduce or reuse it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub vocab: Vocab,
    pub params: BTreeMap<String, Tensor<f32>>,
    pub provenance: Provenance,
}

impl Checkpoint {
    /// Snapshots a model's parameters together with its vocabulary.
    pub fn from_model(model: &EncoderModel, vocab: &Vocab, provenance: Provenance) -> Checkpoint {
        Checkpoint {
            model_config: model.config().clone(),
            vocab: vocab.clone(),
            params: model.params().clone(),
            provenance,
        }
    }

    /// Rebuilds the model. Every parameter comes back trainable; freezing
    /// is a property of a training run, not of stored weights.
    pub fn to_model(&self) -> Result<EncoderModel, ModelError> {
        let params = self
            .params
            .iter()
            .map(|(name, tensor)| (name.clone(), tensor.clone().with_requires_grad(true)))
            .collect();
        EncoderModel::from_parts(self.model_config.clone(), params)
    }

    pub fn phase(&self) -> Phase {
        self.provenance.phase
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    model_config: ModelConfig,
    provenance: Provenance,
    vocab: Vec<String>,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset of this tensor inside the payload region.
    offset: u64,
}

/// Writes a checkpoint file; see the module docs for the layout.
pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    let io_err = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };

    let mut tensors = Vec::with_capacity(checkpoint.params.len());
    let mut offset = 0u64;
    for (name, tensor) in &checkpoint.params {
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: tensor.shape().to_vec(),
            offset,
        });
        offset += 4 * tensor.len() as u64;
    }
    let header = Header {
        model_config: checkpoint.model_config.clone(),
        provenance: checkpoint.provenance.clone(),
        vocab: checkpoint.vocab.tokens().to_vec(),
        tensors,
    };
    let header_bytes = serde_json::to_vec(&header).map_err(|e| CheckpointError::BadHeader {
        detail: e.to_string(),
    })?;

    let mut out = Vec::with_capacity(8 + header_bytes.len() + offset as usize);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for tensor in checkpoint.params.values() {
        for &x in tensor.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path).map_err(io_err)?;
    file.write_all(&out).map_err(io_err)?;
    Ok(())
}

/// Reads a checkpoint file back, verifying magic, header, manifest, and
/// payload bounds.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.len() < 8 {
        return Err(CheckpointError::Truncated {
            detail: format!("{} bytes cannot hold magic and header length", bytes.len()),
        });
    }
    if bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic {
            found: [bytes[0], bytes[1], bytes[2], bytes[3]],
        });
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let payload_start = 8 + header_len;
    if bytes.len() < payload_start {
        return Err(CheckpointError::Truncated {
            detail: format!(
                "header declares {header_len} bytes but only {} remain",
                bytes.len() - 8
            ),
        });
    }
    let header: Header =
        serde_json::from_slice(&bytes[8..payload_start]).map_err(|e| CheckpointError::BadHeader {
            detail: e.to_string(),
        })?;
    let payload = &bytes[payload_start..];

    let expected = expected_shapes(&header.model_config);
    if header.tensors.len() != expected.len() {
        return Err(CheckpointError::ManifestMismatch {
            detail: format!(
                "manifest lists {} tensors, config calls for {}",
                header.tensors.len(),
                expected.len()
            ),
        });
    }
    let mut params = BTreeMap::new();
    let mut total_bytes = 0u64;
    for entry in &header.tensors {
        let Some(shape) = expected.get(&entry.name) else {
            return Err(CheckpointError::ManifestMismatch {
                detail: format!("unexpected tensor '{}'", entry.name),
            });
        };
        if shape != &entry.shape {
            return Err(CheckpointError::ManifestMismatch {
                detail: format!(
                    "tensor '{}' has shape {:?}, config calls for {:?}",
                    entry.name, entry.shape, shape
                ),
            });
        }
        let n: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start + 4 * n;
        if end > payload.len() {
            return Err(CheckpointError::Truncated {
                detail: format!(
                    "tensor '{}' needs payload bytes {start}..{end}, file has {}",
                    entry.name,
                    payload.len()
                ),
            });
        }
        let data: Vec<f32> = payload[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(entry.shape.clone(), data).map_err(|e| {
            CheckpointError::ManifestMismatch {
                detail: format!("tensor '{}' payload is invalid: {e}", entry.name),
            }
        })?;
        params.insert(entry.name.clone(), tensor);
        total_bytes += 4 * n as u64;
    }
    if total_bytes != payload.len() as u64 {
        return Err(CheckpointError::ManifestMismatch {
            detail: format!(
                "manifest accounts for {total_bytes} payload bytes, file carries {}",
                payload.len()
            ),
        });
    }
    let vocab = Vocab::from_tokens(header.vocab).map_err(|e| CheckpointError::BadHeader {
        detail: format!("stored vocabulary is invalid: {e}"),
    })?;
    if vocab.size() != header.model_config.vocab_size {
        return Err(CheckpointError::ManifestMismatch {
            detail: format!(
                "vocabulary has {} tokens, config declares {}",
                vocab.size(),
                header.model_config.vocab_size
            ),
        });
    }
    Ok(Checkpoint {
        model_config: header.model_config,
        vocab,
        params,
        provenance: header.provenance,
    })
}
