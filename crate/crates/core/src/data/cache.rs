//! One file per (domain, split): `VASYN\0\0\0`, `u32` format version, `u32`
//! header length, JSON header (config hash, seed, counts), then per sample a
//! `u32` label, a `u32` id and the frames as little-endian `f32`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{generate_split, Dataset, Domain, Split, SynthConfig, VideoSample};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"VASYN\0\0\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheHeader {
    pub format_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub domain: Domain,
    pub split: Split,
    pub count: usize,
    pub video_len: usize,
    pub num_classes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheStatus {
    Valid,
    Regenerated,
}

pub fn split_path(dir: &Path, domain: Domain, split: Split) -> PathBuf {
    dir.join(format!("{}_{}.bin", domain.as_str(), split.as_str()))
}

fn header_for(cfg: &SynthConfig, data: &Dataset) -> CacheHeader {
    CacheHeader {
        format_version: FORMAT_VERSION,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        domain: data.domain,
        split: data.split,
        count: data.len(),
        video_len: cfg.video_len(),
        num_classes: cfg.num_classes,
    }
}

pub fn encode(cfg: &SynthConfig, data: &Dataset) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&header_for(cfg, data))?;
    let mut out = Vec::with_capacity(16 + header.len() + data.len() * (8 + 4 * cfg.video_len()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for s in &data.samples {
        out.extend_from_slice(&(s.label as u32).to_le_bytes());
        out.extend_from_slice(&(s.id as u32).to_le_bytes());
        for v in &s.frames {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_header(bytes: &[u8]) -> Result<(CacheHeader, usize)> {
    let bad = |m: &str| Error::Config(format!("data cache: {m}"));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(bad("format version mismatch"));
    }
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: CacheHeader = serde_json::from_slice(body).map_err(|e| bad(&e.to_string()))?;
    Ok((header, 16 + hlen))
}

/// Decodes a cache file, or `None` when it does not match `cfg`.
pub fn decode(cfg: &SynthConfig, domain: Domain, split: Split, bytes: &[u8]) -> Option<Dataset> {
    let (header, mut cursor) = read_header(bytes).ok()?;
    let n = cfg.num_classes * cfg.per_class(split);
    let expected = CacheHeader {
        format_version: FORMAT_VERSION,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        domain,
        split,
        count: n,
        video_len: cfg.video_len(),
        num_classes: cfg.num_classes,
    };
    if header != expected || bytes.len() != cursor + n * (8 + 4 * cfg.video_len()) {
        return None;
    }
    let mut samples = Vec::with_capacity(n);
    let word = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes"));
    for _ in 0..n {
        let label = word(&bytes[cursor..cursor + 4]) as usize;
        let id = word(&bytes[cursor + 4..cursor + 8]) as usize;
        cursor += 8;
        let end = cursor + 4 * cfg.video_len();
        let frames = bytes[cursor..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        cursor = end;
        if label >= cfg.num_classes {
            return None;
        }
        samples.push(VideoSample { frames, label, domain, id });
    }
    Some(Dataset {
        domain,
        split,
        num_classes: cfg.num_classes,
        samples,
    })
}

/// Reads the cached split when its header matches, otherwise regenerates
/// and rewrites it.
pub fn load_or_generate(dir: &Path, cfg: &SynthConfig, domain: Domain, split: Split) -> Result<(Dataset, CacheStatus)> {
    let path = split_path(dir, domain, split);
    if let Ok(bytes) = std::fs::read(&path) {
        if let Some(data) = decode(cfg, domain, split, &bytes) {
            return Ok((data, CacheStatus::Valid));
        }
    }
    let data = generate_split(cfg, domain, split)?;
    std::fs::create_dir_all(dir)?;
    std::fs::write(&path, encode(cfg, &data)?)?;
    Ok((data, CacheStatus::Regenerated))
}
