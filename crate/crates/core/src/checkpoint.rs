//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! offset  size  content
//! 0       8     magic "SGNWSCK1"
//! 8       8     u64 metadata length n
//! 16      n     metadata, UTF-8 JSON
//! 16+n    ...   tensor data, f64 little-endian, in directory order
//! ```
//!
//! The metadata object has the keys `format_version`, `config`,
//! `vocab_hash`, `training` (`epoch`, `dev_f`) and `tensors`, a list of
//! `{name, shape, offset}` where `offset` is the byte offset of the tensor
//! inside the data section. Tensors are packed back to back with no gaps.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::nncore::Tensor;

pub const MAGIC: &[u8; 8] = b"SGNWSCK1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: {0}")]
    BadMagic(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unsupported checkpoint format version {0}")]
    UnsupportedVersion(u32),
    #[error("bad checkpoint metadata: {0}")]
    BadMetadata(String),
    #[error("tensor {0} contains non-finite values")]
    NonFinite(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingInfo {
    pub epoch: usize,
    pub dev_f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Metadata {
    format_version: u32,
    config: Value,
    vocab_hash: String,
    training: TrainingInfo,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: Value,
    pub vocab_hash: String,
    pub training: TrainingInfo,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0u64;
        let entries = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let e = TensorEntry { name: name.clone(), shape: t.shape().to_vec(), offset };
                offset += 8 * t.len() as u64;
                e
            })
            .collect();
        let meta = Metadata {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            vocab_hash: self.vocab_hash.clone(),
            training: self.training,
            tensors: entries,
        };
        let json = serde_json::to_vec(&meta).expect("metadata serializes");
        let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses and fully validates a checkpoint before returning anything.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(CheckpointError::BadMagic("missing SGNWSCK1 header".into()));
        }
        let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let data_start = 16u64
            .checked_add(n)
            .filter(|&end| end <= bytes.len() as u64)
            .ok_or_else(|| CheckpointError::BadMagic("metadata length exceeds file size".into()))?
            as usize;
        let meta: Metadata = serde_json::from_slice(&bytes[16..data_start])
            .map_err(|e| CheckpointError::BadMetadata(e.to_string()))?;
        if meta.format_version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(meta.format_version));
        }
        let data = &bytes[data_start..];
        let mut expected = 0u64;
        let mut tensors = Vec::with_capacity(meta.tensors.len());
        for e in &meta.tensors {
            if e.offset != expected {
                return Err(CheckpointError::ShapeMismatch(format!(
                    "tensor {} at offset {}, expected {expected}",
                    e.name, e.offset
                )));
            }
            let len = e
                .shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| CheckpointError::ShapeMismatch(format!("tensor {} shape overflows", e.name)))?;
            let end = expected + 8 * len as u64;
            if end > data.len() as u64 {
                return Err(CheckpointError::ShapeMismatch(format!(
                    "tensor {} needs {} bytes of data, file has {}",
                    e.name,
                    end,
                    data.len()
                )));
            }
            let values: Vec<f64> = data[expected as usize..end as usize]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::from_vec(&e.shape, values).expect("length matches shape");
            if !t.is_finite() {
                return Err(CheckpointError::NonFinite(e.name.clone()));
            }
            tensors.push((e.name.clone(), t));
            expected = end;
        }
        if expected != data.len() as u64 {
            return Err(CheckpointError::ShapeMismatch(format!(
                "{} trailing bytes after tensor data",
                data.len() as u64 - expected
            )));
        }
        Ok(Checkpoint { config: meta.config, vocab_hash: meta.vocab_hash, training: meta.training, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Checkpoint {
        Checkpoint {
            config: serde_json::json!({}),
            vocab_hash: "ab".into(),
            training: TrainingInfo { epoch: 3, dev_f: 0.5 },
            tensors: vec![("w".into(), Tensor::from_vec(&[1], vec![1.5]).unwrap())],
        }
    }

    #[test]
    fn one_parameter_layout() {
        let meta = br#"{"format_version":1,"config":{},"vocab_hash":"ab","training":{"epoch":3,"dev_f":0.5},"tensors":[{"name":"w","shape":[1],"offset":0}]}"#;
        let mut expected = b"SGNWSCK1".to_vec();
        expected.extend_from_slice(&[meta.len() as u8, 0, 0, 0, 0, 0, 0, 0]);
        expected.extend_from_slice(meta);
        // 1.5 = 0x3FF8000000000000
        expected.extend_from_slice(&[0, 0, 0, 0, 0, 0, 0xF8, 0x3F]);
        assert_eq!(toy().to_bytes(), expected);
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let bytes = toy().to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, toy());
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn truncation_is_rejected() {
        let bytes = toy().to_bytes();
        for cut in [0, 7, 15, 20, bytes.len() - 1] {
            let err = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(
                matches!(err, CheckpointError::BadMagic(_) | CheckpointError::ShapeMismatch(_)),
                "cut {cut}: {err:?}"
            );
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::BadMagic(_))));
    }

    #[test]
    fn non_finite_rejected() {
        let mut c = toy();
        c.tensors[0].1.data_mut()[0] = f64::NAN;
        assert!(matches!(Checkpoint::from_bytes(&c.to_bytes()), Err(CheckpointError::NonFinite(_))));
    }
}
