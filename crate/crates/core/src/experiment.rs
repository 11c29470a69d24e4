//! File-based experiment configuration and the pieces the command line
//! glues together: data loading and temporal-attention export.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::align::pseudo_label;
use crate::data::cache::{load_or_generate, CacheStatus};
use crate::data::{Dataset, Domain, Split, SynthConfig};
use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, VideoTransformer};
use crate::scalar::Scalar;
use crate::tensor::no_grad;
use crate::train::{DomainData, Phase1Config, Phase2Config, Variant, ARTIFACT_VERSION};

/// Version of the config file layout this build reads.
pub const CONFIG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub seeds: Vec<u64>,
    pub precision: Precision,
    /// Matrix worker threads.
    pub workers: usize,
    /// Matrix rows, by variant name.
    pub variants: Vec<Variant>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            seeds: vec![0, 1, 2],
            precision: Precision::F32,
            workers: 1,
            variants: Variant::ALL.to_vec(),
        }
    }
}

/// Every section and key is optional; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub format_version: u32,
    pub experiment: ExperimentSection,
    pub data: SynthConfig,
    pub model: ModelConfig,
    pub phase1: Phase1Config,
    pub phase2: Phase2Config,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            format_version: CONFIG_FORMAT_VERSION,
            experiment: ExperimentSection::default(),
            data: SynthConfig::default(),
            model: ModelConfig::default(),
            phase1: Phase1Config::default(),
            phase2: Phase2Config::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates. Syntax errors and unknown keys carry the line
    /// and key from the parser.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != CONFIG_FORMAT_VERSION {
            return Err(Error::config(format!(
                "format_version {} is not supported (expected {CONFIG_FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.experiment.seeds.is_empty() {
            return Err(Error::config("experiment.seeds must not be empty"));
        }
        if self.experiment.workers == 0 {
            return Err(Error::config("experiment.workers must be at least 1"));
        }
        self.data.validate()?;
        self.model.validate()?;
        self.phase1.validate()?;
        self.phase2.validate()?;
        let (d, m) = (&self.data, &self.model);
        let pairs = [
            ("data.num_classes", d.num_classes, "model.num_classes", m.num_classes),
            ("data.frame_size", d.frame_size, "model.frame_size", m.frame_size),
            ("data.channels", d.channels, "model.channels", m.channels),
            ("data.frames", d.frames, "model.frames_per_video", m.frames_per_video),
        ];
        for (a, x, b, y) in pairs {
            if x != y {
                return Err(Error::config(format!("{a} = {x} disagrees with {b} = {y}")));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form; echoed into every artifact.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

/// The four splits, from the on-disk cache when `cache_dir` is given.
pub fn load_data(cfg: &SynthConfig, cache_dir: Option<&Path>) -> Result<(DomainData, Vec<(String, CacheStatus)>)> {
    let mut status = Vec::new();
    let mut get = |domain: Domain, split: Split| -> Result<Dataset> {
        match cache_dir {
            Some(dir) => {
                let (ds, st) = load_or_generate(dir, cfg, domain, split)?;
                status.push((format!("{}_{}", domain.as_str(), split.as_str()), st));
                Ok(ds)
            }
            None => crate::data::generate_split(cfg, domain, split),
        }
    };
    let data = DomainData {
        source_train: get(Domain::Source, Split::Train)?,
        source_test: get(Domain::Source, Split::Test)?,
        target_train: get(Domain::Target, Split::Train)?,
        target_test: get(Domain::Target, Split::Test)?,
    };
    Ok((data, status))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub id: usize,
    pub label: usize,
    pub predicted: usize,
    /// Class-token attention over the frames; sums to one.
    pub weights: Vec<f64>,
    /// Most and second most attended frames.
    pub top2: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionExport {
    pub artifact_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub dataset: String,
    pub records: Vec<AttentionRecord>,
}

/// Indices of the largest and second largest weights, lowest index first on ties.
pub fn top2(weights: &[f64]) -> [usize; 2] {
    let argmax = |skip: Option<usize>| {
        let mut best: Option<usize> = None;
        for (i, &w) in weights.iter().enumerate() {
            if Some(i) == skip {
                continue;
            }
            if best.is_none_or(|b| w > weights[b]) {
                best = Some(i);
            }
        }
        best.unwrap_or(0)
    };
    let first = argmax(None);
    [first, argmax(Some(first))]
}

/// Attention traces for the first `samples` videos of `data`.
pub fn export_attention<T: Scalar>(model: &VideoTransformer<T>, data: &Dataset, samples: usize) -> Result<Vec<AttentionRecord>> {
    let n = samples.min(data.len());
    let mut out = Vec::with_capacity(n);
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(32) {
        let feats = no_grad(|| model.forward(&data.videos(chunk)))?;
        let (pred, _) = pseudo_label(&feats.logits);
        for (k, &i) in chunk.iter().enumerate() {
            let raw: Vec<f64> = feats.attention[k].iter().map(|w| w.as_f64()).collect();
            let total: f64 = raw.iter().sum();
            let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
            let sample = &data.samples[i];
            out.push(AttentionRecord {
                id: sample.id,
                label: sample.label,
                predicted: pred[k],
                top2: top2(&weights),
                weights,
            });
        }
    }
    Ok(out)
}

impl AttentionExport {
    pub fn new(config_hash: &str, seed: u64, dataset: &str, records: Vec<AttentionRecord>) -> Self {
        AttentionExport {
            artifact_version: ARTIFACT_VERSION,
            config_hash: config_hash.to_string(),
            seed,
            dataset: dataset.to_string(),
            records,
        }
    }
}
