//! Single-file checkpoints.
//!
//! Layout: the magic `VACKPT\0\0`, a little-endian `u32` format version, a
//! little-endian `u32` header length, a JSON header (config echo, seed,
//! dtype, ordered parameter names and shapes), then every parameter's values
//! as raw little-endian floats in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, VideoTransformer};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"VACKPT\0\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub dtype: String,
    pub seed: u64,
    pub model: ModelConfig,
    /// Free-form provenance (experiment config echo, phase, method).
    pub meta: serde_json::Value,
    pub params: Vec<ParamEntry>,
}

pub fn encode<T: Scalar>(model: &VideoTransformer<T>, seed: u64, meta: serde_json::Value) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        dtype: T::DTYPE.to_string(),
        seed,
        model: model.config.clone(),
        meta,
        params: model
            .params
            .iter()
            .map(|(n, t)| ParamEntry {
                name: n.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in model.params.iter() {
        for &v in t.data().iter() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

/// The header and the offset where parameter data starts.
pub fn read_header(bytes: &[u8]) -> Result<(CheckpointHeader, usize)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header = serde_json::from_slice(body).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    Ok((header, 16 + hlen))
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<(VideoTransformer<T>, CheckpointHeader)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    let (header, mut cursor) = read_header(bytes)?;
    if header.dtype != T::DTYPE {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} values, requested {}",
            header.dtype,
            T::DTYPE
        )));
    }
    let model = VideoTransformer::<T>::new(header.model.clone(), header.seed)?;
    for entry in &header.params {
        let t = model
            .params
            .try_get(&entry.name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {}", entry.name)))?;
        if t.shape() != entry.shape.as_slice() {
            return Err(Error::Checkpoint(format!("shape mismatch for {}", entry.name)));
        }
        let n = t.numel();
        let raw = bytes
            .get(cursor..cursor + n * T::WIDTH)
            .ok_or_else(|| bad("truncated parameter data"))?;
        t.set_data(raw.chunks_exact(T::WIDTH).map(T::read_le).collect())?;
        cursor += n * T::WIDTH;
    }
    if header.params.len() != model.params.len() {
        return Err(bad("parameter count mismatch"));
    }
    if cursor != bytes.len() {
        return Err(bad("trailing bytes after parameter data"));
    }
    Ok((model, header))
}

pub fn save<T: Scalar>(path: &Path, model: &VideoTransformer<T>, seed: u64, meta: serde_json::Value) -> Result<()> {
    std::fs::write(path, encode(model, seed, meta)?)?;
    Ok(())
}

pub fn load<T: Scalar>(path: &Path) -> Result<(VideoTransformer<T>, CheckpointHeader)> {
    decode(&std::fs::read(path)?)
}
