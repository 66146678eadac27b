//! Versioned model files: one JSON header line, then the tensors as a
//! little-endian `f32` blob in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::nn::HasParams;
use crate::tokenizer::Vocabulary;

pub const CHECKPOINT_FORMAT: &str = "nuer-ckpt-v1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in floats.
    pub offset: usize,
    /// Length in floats.
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format: String,
    pub config: ModelConfig,
    pub vocab_sha256: String,
    /// sha256 of the tensor blob.
    pub blob_sha256: String,
    pub tensors: Vec<TensorEntry>,
}

/// Serializes `model` with the hash of the vocabulary it was trained with.
pub fn checkpoint_bytes(model: &Model, vocab_sha256: &str) -> Vec<u8> {
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (name, p) in model.params() {
        for v in &p.value {
            blob.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        tensors.push(TensorEntry {
            name,
            shape: p.shape().to_vec(),
            offset,
            len: p.len(),
        });
        offset += p.len();
    }
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        config: model.config(),
        vocab_sha256: vocab_sha256.into(),
        blob_sha256: hex::encode(Sha256::digest(&blob)),
        tensors,
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.extend_from_slice(&blob);
    out
}

pub fn save_checkpoint(model: &Model, vocab: &Vocabulary, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint_bytes(model, &vocab.sha256())).map_err(|e| Error::io(path, e))
}

/// Parses a checkpoint. When `vocab` is given its hash must match the one
/// recorded in the file.
pub fn checkpoint_from_bytes(bytes: &[u8], vocab: Option<&Vocabulary>) -> Result<(Model, CheckpointHeader)> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or(Error::Truncated {
            expected: 1,
            found: 0,
        })?;
    let raw: serde_json::Value = serde_json::from_slice(&bytes[..nl])
        .map_err(|e| Error::invalid(format!("checkpoint header is not JSON: {e}")))?;
    let found = raw.get("format").and_then(|f| f.as_str()).unwrap_or("");
    if found != CHECKPOINT_FORMAT {
        return Err(Error::Version {
            expected: CHECKPOINT_FORMAT.into(),
            found: found.into(),
        });
    }
    let header: CheckpointHeader =
        serde_json::from_value(raw).map_err(|e| Error::invalid(format!("bad checkpoint header: {e}")))?;
    if let Some(v) = vocab {
        let h = v.sha256();
        if h != header.vocab_sha256 {
            return Err(Error::VocabHash {
                expected: header.vocab_sha256,
                found: h,
            });
        }
    }
    let blob = &bytes[nl + 1..];
    let n_floats: usize = header.tensors.iter().map(|t| t.len).sum();
    if blob.len() != 4 * n_floats {
        return Err(Error::Truncated {
            expected: 4 * n_floats,
            found: blob.len(),
        });
    }
    if hex::encode(Sha256::digest(blob)) != header.blob_sha256 {
        return Err(Error::Checksum);
    }
    let mut model = Model::new(header.config.clone())?;
    {
        let mut params = model.params_mut();
        if params.len() != header.tensors.len() {
            return Err(Error::invalid(format!(
                "checkpoint has {} tensors, model expects {}",
                header.tensors.len(),
                params.len()
            )));
        }
        for ((name, p), t) in params.iter_mut().zip(&header.tensors) {
            if *name != t.name || p.shape() != t.shape.as_slice() || p.len() != t.len {
                return Err(Error::invalid(format!("checkpoint tensor `{}` does not match model `{name}`", t.name)));
            }
            if t.offset + t.len > n_floats {
                return Err(Error::invalid(format!("tensor `{}` lies outside the blob", t.name)));
            }
            for (k, v) in p.value.iter_mut().enumerate() {
                let at = 4 * (t.offset + k);
                *v = f32::from_le_bytes(blob[at..at + 4].try_into().unwrap()) as f64;
            }
        }
    }
    Ok((model, header))
}

pub fn load_checkpoint(path: impl AsRef<Path>, vocab: Option<&Vocabulary>) -> Result<(Model, CheckpointHeader)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes, vocab)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::model::Task;

    fn tiny() -> Model {
        let enc = EncoderConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ffn: 16,
            max_len: 12,
            vocab_size: 20,
            dropout: 0.0,
            seed: 3,
        };
        let mut m = Model::new(ModelConfig {
            encoder: enc,
            task: Task::Tagger,
        })
        .unwrap();
        m.round_to_f32();
        m
    }

    #[test]
    fn round_trip_is_exact() {
        let m = tiny();
        let bytes = checkpoint_bytes(&m, "abc");
        let (back, header) = checkpoint_from_bytes(&bytes, None).unwrap();
        assert_eq!(back, m);
        assert_eq!(header.vocab_sha256, "abc");
        assert_eq!(checkpoint_bytes(&back, "abc"), bytes);
    }

    #[test]
    fn corrupt_and_truncated_blobs() {
        let bytes = checkpoint_bytes(&tiny(), "abc");
        let mut bad = bytes.clone();
        let last = bad.len() - 3;
        bad[last] ^= 0x40;
        assert!(matches!(checkpoint_from_bytes(&bad, None), Err(Error::Checksum)));
        let short = &bytes[..bytes.len() - 4];
        assert!(matches!(checkpoint_from_bytes(short, None), Err(Error::Truncated { .. })));
    }

    #[test]
    fn version_mismatch() {
        let bytes = checkpoint_bytes(&tiny(), "abc");
        let text = String::from_utf8_lossy(&bytes).replacen("nuer-ckpt-v1", "nuer-ckpt-v9", 1);
        let r = checkpoint_from_bytes(text.as_bytes(), None);
        assert!(matches!(r, Err(Error::Version { .. })));
    }
}
