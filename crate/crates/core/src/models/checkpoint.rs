//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8 | magic `HREDCKPT` |
//! | 4 | format version (`u32`) |
//! | 8 | header length `n` (`u64`) |
//! | n | JSON [`CheckpointHeader`] |
//! | … | every tensor listed in the header, row-major `f64` |
//! | … | optimizer accumulators, same order as the trainable tensors |
//! | 32 | SHA-256 of everything above |
//!
//! Values are stored as `f64`, so an `f64` model round-trips bit for bit.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embeddings::{EmbeddingMatrix, Vocabulary};
use crate::error::{Error, Result};
use crate::models::config::ModelConfig;
use crate::models::model::{DialogueModel, ModelParams};
use crate::numerics::{Matrix, OptimizerConfig, RmsPropState};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"HREDCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerInfo {
    pub config: OptimizerConfig,
    pub step_count: u64,
    pub tensors: Vec<TensorInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub vocabulary: Vec<String>,
    pub vocabulary_sha256: String,
    pub tensors: Vec<TensorInfo>,
    pub optimizer: Option<OptimizerInfo>,
}

/// Optimizer settings and accumulators saved alongside a model.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSnapshot<T> {
    pub config: OptimizerConfig,
    pub state: RmsPropState<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCheckpoint<T> {
    pub model: DialogueModel<T>,
    pub optimizer: Option<OptimizerSnapshot<T>>,
}

fn info(name: String, m: &Matrix<impl Scalar>) -> TensorInfo {
    TensorInfo {
        name,
        rows: m.rows(),
        cols: m.cols(),
    }
}

pub fn write_checkpoint<T: Scalar, W: Write>(
    model: &DialogueModel<T>,
    optimizer: Option<&OptimizerSnapshot<T>>,
    mut out: W,
) -> Result<()> {
    let tensors = model.params.named_tensors();
    let optimizer_info = optimizer.map(|o| OptimizerInfo {
        config: o.config,
        step_count: o.state.step_count,
        tensors: o
            .state
            .cache
            .iter()
            .enumerate()
            .map(|(i, m)| info(format!("cache.{i}"), m))
            .collect(),
    });
    let header = CheckpointHeader {
        config: model.config,
        vocabulary: model.vocab.tokens().to_vec(),
        vocabulary_sha256: model.vocab.fingerprint(),
        tensors: tensors.iter().map(|(n, m)| info(n.clone(), m)).collect(),
        optimizer: optimizer_info,
    };
    let header = serde_json::to_vec(&header)?;

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    let caches = optimizer.map(|o| o.state.cache.iter().collect::<Vec<_>>()).unwrap_or_default();
    for m in tensors.iter().map(|(_, m)| *m).chain(caches) {
        for v in m.as_slice() {
            buf.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    out.write_all(&buf)?;
    out.write_all(&digest)?;
    out.flush()?;
    Ok(())
}

/// Writes to a sibling temporary file and renames it into place.
pub fn save_checkpoint<T: Scalar>(
    model: &DialogueModel<T>,
    optimizer: Option<&OptimizerSnapshot<T>>,
    path: &Path,
) -> Result<()> {
    let tmp = path.with_extension("partial");
    let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    write_checkpoint(model, optimizer, BufWriter::new(file))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated: needed {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn matrix<T: Scalar>(&mut self, t: &TensorInfo) -> Result<Matrix<T>> {
        let n = t
            .rows
            .checked_mul(t.cols)
            .ok_or_else(|| Error::Checkpoint(format!("tensor {} is too large", t.name)))?;
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        Matrix::from_vec(t.rows, t.cols, data)
    }
}

pub fn read_checkpoint<T: Scalar, R: Read>(mut input: R) -> Result<LoadedCheckpoint<T>> {
    let mut data = Vec::new();
    input.read_to_end(&mut data)?;
    if data.len() < MAGIC.len() + 12 + 32 {
        return Err(Error::Checkpoint("file is too short".into()));
    }
    if &data[..8] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(data[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version}, this build reads {FORMAT_VERSION}"
        )));
    }
    let (body, digest) = data.split_at(data.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checkpoint("checksum mismatch (truncated or corrupted)".into()));
    }
    let mut cur = Cursor { data: body, pos: 12 };
    let header_len = u64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes"));
    let header: CheckpointHeader = serde_json::from_slice(cur.take(header_len as usize)?)
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;

    let vocab = Vocabulary::from_tokens(header.vocabulary.clone())?;
    if vocab.fingerprint() != header.vocabulary_sha256 {
        return Err(Error::Checkpoint("vocabulary hash mismatch".into()));
    }
    let mut params = ModelParams::<T>::zeros(&header.config);
    let expected: Vec<TensorInfo> = params
        .named_tensors()
        .into_iter()
        .map(|(n, m)| info(n, m))
        .collect();
    if expected != header.tensors {
        return Err(Error::Checkpoint("tensor list does not match the config".into()));
    }
    for (slot, t) in params.tensors_mut().into_iter().zip(&header.tensors) {
        *slot = cur.matrix(t)?;
    }
    params.embedding = EmbeddingMatrix::new(params.embedding.vectors, header.config.embedding_mode);

    let optimizer = match &header.optimizer {
        None => None,
        Some(o) => {
            let cache = o.tensors.iter().map(|t| cur.matrix(t)).collect::<Result<Vec<_>>>()?;
            let trainable = params.trainable();
            if cache.len() != trainable.len() || cache.iter().zip(&trainable).any(|(c, p)| !c.same_shape(p)) {
                return Err(Error::Checkpoint("optimizer state does not match the model".into()));
            }
            Some(OptimizerSnapshot {
                config: o.config,
                state: RmsPropState {
                    cache,
                    step_count: o.step_count,
                },
            })
        }
    };
    if cur.pos != body.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", body.len() - cur.pos)));
    }
    let model = DialogueModel {
        config: header.config,
        vocab,
        params,
    };
    model.validate()?;
    Ok(LoadedCheckpoint { model, optimizer })
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<LoadedCheckpoint<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file))
}

/// Reads only the JSON header.
pub fn read_header(path: &Path) -> Result<CheckpointHeader> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut prefix = [0u8; 20];
    file.read_exact(&mut prefix)
        .map_err(|_| Error::Checkpoint("file is too short".into()))?;
    if &prefix[..8] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let len = u64::from_le_bytes(prefix[12..20].try_into().expect("8 bytes"));
    let size = file.metadata().map_err(|e| Error::io(path, e))?.len();
    if len > size {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    let mut header = vec![0u8; len as usize];
    file.read_exact(&mut header)
        .map_err(|_| Error::Checkpoint("truncated header".into()))?;
    serde_json::from_slice(&header).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))
}
