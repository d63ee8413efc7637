//! Checkpoint file: magic `MGCK`, `u16` version, `u8` scalar tag, a
//! length-prefixed JSON block with the configs, then named tensors
//! (`u16` name length, name, `u8` rank, `u32` extents, little-endian
//! values) and a trailing FNV-1a digest of everything before it.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::TrainConfig;
use crate::codec::{verify_trailer, ByteReader, ByteWriter};
use crate::model::{ModelConfig, ModelParams};
use crate::numerics::Tensor;
use crate::scalar::{DType, Scalar};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MGCK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {CHECKPOINT_VERSION})")]
    VersionMismatch { found: u16 },
    #[error("checkpoint digest mismatch (truncated or corrupted file)")]
    DigestMismatch,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    epoch: usize,
    rng_digest: u64,
}

/// Trained weights plus everything needed to rebuild the embedder.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub model: ModelConfig,
    pub params: ModelParams<T>,
    pub train: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    /// Digest of the sampling RNG state at the end of training.
    pub rng_digest: u64,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::default();
        w.bytes(CHECKPOINT_MAGIC);
        w.u16(CHECKPOINT_VERSION);
        w.u8(T::DTYPE as u8);
        let header = Header {
            model: self.model.clone(),
            train: self.train.clone(),
            epoch: self.epoch,
            rng_digest: self.rng_digest,
        };
        let json = serde_json::to_vec(&header).expect("config serializes");
        w.u32(json.len() as u32);
        w.bytes(&json);
        let tensors = self.params.tensors();
        w.u32(tensors.len() as u32);
        for (name, t) in tensors {
            w.short_str(name);
            w.u8(t.shape().len() as u8);
            for &extent in t.shape() {
                w.u32(extent as u32);
            }
            for &v in t.data() {
                v.write_le(&mut w.buf);
            }
        }
        w.finish()
    }

    /// Parses a checkpoint; values stored in another precision are cast.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() >= 4 && &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        if bytes.len() >= 6 {
            let found = u16::from_le_bytes([bytes[4], bytes[5]]);
            if found != CHECKPOINT_VERSION {
                return Err(CheckpointError::VersionMismatch { found });
            }
        }
        let (body, _) = verify_trailer(bytes).ok_or(CheckpointError::DigestMismatch)?;
        let malformed = |m: &str| CheckpointError::Malformed(m.to_string());
        let mut r = ByteReader::new(body);
        r.take(6).ok_or_else(|| malformed("short header"))?;
        let dtype = r
            .u8()
            .and_then(DType::from_tag)
            .ok_or_else(|| malformed("unknown scalar tag"))?;
        let json_len = r.u32().ok_or_else(|| malformed("missing config block"))? as usize;
        let json = r
            .take(json_len)
            .ok_or_else(|| malformed("short config block"))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| malformed(&e.to_string()))?;
        let count = r.u32().ok_or_else(|| malformed("missing tensor count"))?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name = r
                .short_str()
                .ok_or_else(|| malformed("bad tensor name"))?
                .to_string();
            let rank = r.u8().ok_or_else(|| malformed("missing rank"))? as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|v| v as usize))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| malformed("short shape"))?;
            let len: usize = shape.iter().product();
            let raw = r
                .take(len * dtype.size())
                .ok_or_else(|| malformed("short tensor payload"))?;
            let data: Vec<T> = match dtype {
                DType::F32 => raw
                    .chunks_exact(4)
                    .map(|c| T::lit(f32::read_le(c) as f64))
                    .collect(),
                DType::F64 => raw
                    .chunks_exact(8)
                    .map(|c| T::lit(f64::read_le(c)))
                    .collect(),
            };
            let t = Tensor::new(shape, data).map_err(|e| malformed(&e.to_string()))?;
            tensors.insert(name, t);
        }
        if !r.is_done() {
            return Err(malformed("trailing bytes after tensors"));
        }
        Ok(Checkpoint {
            model: header.model,
            params: ModelParams::from_tensors(tensors),
            train: header.train,
            epoch: header.epoch,
            rng_digest: header.rng_digest,
        })
    }

    /// Digest identifying this checkpoint's exact bytes.
    pub fn digest(&self) -> u64 {
        let bytes = self.to_bytes();
        u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().expect("8 bytes"))
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}
