//! Self-describing checkpoint container.
//!
//! Layout: the 8-byte magic `CVTDCKPT`, a little-endian `u64` header
//! length, a JSON header, then every tensor as row-major little-endian
//! `f32`. Tensor offsets in the header are relative to the start of the
//! data section.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelConfig, ModelError, ModelParameters};

pub const MAGIC: &[u8; 8] = b"CVTDCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("truncated checkpoint: needed {needed} bytes at offset {offset}, file has {available}")]
    Truncated { offset: u64, needed: u64, available: u64 },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("tensor {tensor}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        tensor: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("tensor {0} missing from checkpoint")]
    MissingTensor(String),
    #[error("unexpected tensor {0} in checkpoint")]
    UnexpectedTensor(String),
    #[error("vocabulary mismatch: checkpoint {found}, current {expected}")]
    VocabMismatch { expected: String, found: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset within the data section.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub version: u32,
    pub config: ModelConfig,
    /// Fingerprint of the training vocabulary, if known.
    pub vocab_hash: Option<String>,
    pub tensors: Vec<TensorEntry>,
}

/// Parameters with the configuration they were trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab_hash: Option<String>,
    pub params: ModelParameters,
}

pub fn encode(params: &ModelParameters, config: &ModelConfig, vocab_hash: Option<&str>) -> Vec<u8> {
    let mut tensors = Vec::new();
    let mut offset = 0u64;
    for (name, shape, values) in params.tensors() {
        tensors.push(TensorEntry { name, shape, offset });
        offset += 4 * values.len() as u64;
    }
    let header = Header {
        version: FORMAT_VERSION,
        config: config.clone(),
        vocab_hash: vocab_hash.map(str::to_owned),
        tensors,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, values) in params.tensors() {
        for &v in values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

fn take(bytes: &[u8], offset: u64, len: u64) -> Result<&[u8], CheckpointError> {
    let available = bytes.len() as u64;
    match offset.checked_add(len) {
        Some(end) if end <= available => Ok(&bytes[offset as usize..end as usize]),
        _ => Err(CheckpointError::Truncated {
            offset,
            needed: len,
            available,
        }),
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if take(bytes, 0, 8)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let header_len = u64::from_le_bytes(take(bytes, 8, 8)?.try_into().expect("8 bytes"));
    let header: Header =
        serde_json::from_slice(take(bytes, 16, header_len)?).map_err(|e| CheckpointError::Header(e.to_string()))?;
    if header.version != FORMAT_VERSION {
        return Err(CheckpointError::Version(header.version));
    }
    header.config.validate()?;
    let data_start = 16 + header_len;

    let mut params = ModelParameters::zeros(&header.config);
    let expected: Vec<(String, Vec<usize>)> = params.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
    for entry in &header.tensors {
        if !expected.iter().any(|(n, _)| n == &entry.name) {
            return Err(CheckpointError::UnexpectedTensor(entry.name.clone()));
        }
    }
    for ((name, shape), (_, slot)) in expected.iter().zip(params.tensors_mut()) {
        let entry = header
            .tensors
            .iter()
            .find(|e| &e.name == name)
            .ok_or_else(|| CheckpointError::MissingTensor(name.clone()))?;
        if &entry.shape != shape {
            return Err(CheckpointError::ShapeMismatch {
                tensor: name.clone(),
                expected: shape.clone(),
                found: entry.shape.clone(),
            });
        }
        let raw = take(bytes, data_start + entry.offset, 4 * slot.len() as u64)?;
        for (v, chunk) in slot.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f64::from(f32::from_le_bytes(chunk.try_into().expect("4 bytes")));
        }
    }
    Ok(Checkpoint {
        config: header.config,
        vocab_hash: header.vocab_hash,
        params,
    })
}

pub fn save_checkpoint(
    path: &Path,
    params: &ModelParameters,
    config: &ModelConfig,
    vocab_hash: Option<&str>,
) -> Result<(), CheckpointError> {
    fs::write(path, encode(params, config, vocab_hash)).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}

impl Checkpoint {
    /// Check every tensor against the shapes `config` implies, and the
    /// vocabulary fingerprint when both sides have one.
    pub fn verify(&self, config: &ModelConfig, vocab_hash: Option<&str>) -> Result<(), CheckpointError> {
        let want = ModelParameters::zeros(config);
        let have = self.params.tensors();
        for (name, shape, _) in want.tensors() {
            match have.iter().find(|(n, _, _)| *n == name) {
                None => return Err(CheckpointError::MissingTensor(name)),
                Some((_, found, _)) if *found != shape => {
                    return Err(CheckpointError::ShapeMismatch {
                        tensor: name,
                        expected: shape,
                        found: found.clone(),
                    })
                }
                Some(_) => {}
            }
        }
        if let Some((name, _, _)) = have.iter().find(|(n, _, _)| !want.tensors().iter().any(|(w, _, _)| w == n)) {
            return Err(CheckpointError::UnexpectedTensor(name.clone()));
        }
        if let (Some(expected), Some(found)) = (vocab_hash, self.vocab_hash.as_deref()) {
            if expected != found {
                return Err(CheckpointError::VocabMismatch {
                    expected: expected.to_string(),
                    found: found.to_string(),
                });
            }
        }
        Ok(())
    }
}

/// Load and verify against an expected configuration.
pub fn load_checkpoint_for(path: &Path, config: &ModelConfig, vocab_hash: Option<&str>) -> Result<Checkpoint, CheckpointError> {
    let ckpt = load_checkpoint(path)?;
    ckpt.verify(config, vocab_hash)?;
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rounded(p: &ModelParameters) -> ModelParameters {
        let mut out = p.clone();
        for (_, t) in out.tensors_mut() {
            t.iter_mut().for_each(|v| *v = f64::from(*v as f32));
        }
        out
    }

    #[test]
    fn round_trip_is_exact_at_f32() {
        let cfg = ModelConfig::new(3, 2, 17);
        let params = ModelParameters::init(&cfg, 5);
        let bytes = encode(&params, &cfg, Some("abc"));
        let back = decode(&bytes).unwrap();
        assert_eq!(back.params, rounded(&params));
        assert_eq!(back.config, cfg);
        assert_eq!(back.vocab_hash.as_deref(), Some("abc"));
        assert_eq!(encode(&back.params, &cfg, Some("abc")), bytes);
    }

    #[test]
    fn truncation_reports_offset() {
        let cfg = ModelConfig::new(2, 2, 5);
        let bytes = encode(&ModelParameters::init(&cfg, 0), &cfg, None);
        let cut = &bytes[..bytes.len() - 3];
        match decode(cut) {
            Err(CheckpointError::Truncated { offset, needed, available }) => {
                assert_eq!(available, cut.len() as u64);
                assert!(offset + needed > available);
            }
            other => panic!("expected truncation, got {other:?}"),
        }
        assert!(matches!(decode(&bytes[..4]), Err(CheckpointError::Truncated { offset: 0, .. })));
    }

    #[test]
    fn wrong_topic_count_names_tensor() {
        let k5 = ModelConfig::new(5, 3, 20);
        let ckpt = decode(&encode(&ModelParameters::init(&k5, 1), &k5, None)).unwrap();
        let k10 = ModelConfig::new(10, 3, 20);
        match ckpt.verify(&k10, None) {
            Err(CheckpointError::ShapeMismatch { tensor, expected, found }) => {
                assert_eq!(tensor, "topic_encoder.mu.weight");
                assert_eq!(expected, vec![200, 10]);
                assert_eq!(found, vec![200, 5]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn vocab_hash_checked() {
        let cfg = ModelConfig::new(2, 2, 4);
        let ckpt = decode(&encode(&ModelParameters::init(&cfg, 1), &cfg, Some("aa"))).unwrap();
        assert!(ckpt.verify(&cfg, Some("aa")).is_ok());
        assert!(matches!(ckpt.verify(&cfg, Some("bb")), Err(CheckpointError::VocabMismatch { .. })));
    }

    #[test]
    fn bad_magic() {
        assert!(matches!(decode(b"NOTACKPT\0\0\0\0\0\0\0\0"), Err(CheckpointError::BadMagic)));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let cfg = ModelConfig::new(2, 2, 6);
        let p = ModelParameters::init(&cfg, 2);
        save_checkpoint(&path, &p, &cfg, None).unwrap();
        let back = load_checkpoint_for(&path, &cfg, None).unwrap();
        assert_eq!(back.params, rounded(&p));
    }
}
