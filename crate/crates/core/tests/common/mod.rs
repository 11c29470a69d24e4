//! Brute-force oracles shared by the integration suites.
#![allow(dead_code)]

use vidalign::align::SourceRef;
use vidalign::rng::SeededRng;
use vidalign::Tensor64;

pub fn randn(rng: &mut SeededRng, rows: usize, cols: usize) -> Tensor64 {
    Tensor64::from_vec(&[rows, cols], rng.normal_vec(rows * cols, 1.0)).unwrap()
}

/// Centered, normalized cross-correlation by explicit loops over a
/// row-major `b × d` pair of matrices.
pub fn cross_correlation_oracle(s: &[f64], t: &[f64], b: usize, d: usize) -> Vec<f64> {
    let col_mean = |m: &[f64], j: usize| (0..b).map(|r| m[r * d + j]).sum::<f64>() / b as f64;
    let mut sc = vec![0.0; b * d];
    let mut tc = vec![0.0; b * d];
    for j in 0..d {
        let (ms, mt) = (col_mean(s, j), col_mean(t, j));
        for r in 0..b {
            sc[r * d + j] = s[r * d + j] - ms;
            tc[r * d + j] = t[r * d + j] - mt;
        }
    }
    let mut c = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let mut num = 0.0;
            let mut ns = 0.0;
            let mut nt = 0.0;
            for r in 0..b {
                num += sc[r * d + i] * tc[r * d + j];
                ns += sc[r * d + i] * sc[r * d + i];
                nt += tc[r * d + j] * tc[r * d + j];
            }
            c[i * d + j] = num / (ns.sqrt() * nt.sqrt()).max(1e-12);
        }
    }
    c
}

pub fn ib_oracle(c: &[f64], d: usize, lambda: f64) -> f64 {
    let mut on = 0.0;
    let mut off = 0.0;
    for i in 0..d {
        for j in 0..d {
            let v = c[i * d + j];
            if i == j {
                on += (1.0 - v) * (1.0 - v);
            } else {
                off += v * v;
            }
        }
    }
    on + lambda * off
}

/// Every (source, target) with equal labels, batch sources first.
pub fn pairs_oracle(batch: &[usize], queue: &[usize], target: &[usize]) -> Vec<(SourceRef, usize)> {
    let mut out = Vec::new();
    for (i, &l) in batch.iter().enumerate() {
        for (j, &p) in target.iter().enumerate() {
            if l == p {
                out.push((SourceRef::Batch(i), j));
            }
        }
    }
    for (i, &l) in queue.iter().enumerate() {
        for (j, &p) in target.iter().enumerate() {
            if l == p {
                out.push((SourceRef::Queue(i), j));
            }
        }
    }
    out
}

pub fn random_labels(rng: &mut SeededRng, n: usize, k: usize) -> Vec<usize> {
    (0..n).map(|_| rng.below(k)).collect()
}

pub mod tiny {
    use vidalign::data::{generate_split, Domain, ShiftLevel, Split, SynthConfig};
    use vidalign::model::ModelConfig;
    use vidalign::train::{DomainData, Phase1Config, Phase2Config};

    pub const CLASSES: usize = 3;

    pub fn synth() -> SynthConfig {
        SynthConfig {
            num_classes: CLASSES,
            train_per_class: 6,
            test_per_class: 4,
            frame_size: 8,
            channels: 3,
            frames: 4,
            shift_level: ShiftLevel::Severe,
            seed: 5,
            ..SynthConfig::default()
        }
    }

    pub fn model() -> ModelConfig {
        ModelConfig {
            frame_size: 8,
            patch_size: 4,
            channels: 3,
            frames_per_video: 4,
            embed_dim: 16,
            heads: 2,
            spatial_layers: 1,
            temporal_layers: 1,
            mlp_ratio: 2.0,
            num_classes: CLASSES,
            projection_dim: 8,
        }
    }

    pub fn phase1() -> Phase1Config {
        Phase1Config { epochs: 2, batch_size: 6, ..Phase1Config::default() }
    }

    pub fn phase2() -> Phase2Config {
        Phase2Config {
            epochs: 2,
            batch_size_per_domain: 8,
            queue_capacity: 32,
            pair_cap: 64,
            domain_hidden: 8,
            ..Phase2Config::default()
        }
    }

    pub fn data() -> DomainData {
        let cfg = synth();
        let get = |d, s| generate_split(&cfg, d, s).unwrap();
        DomainData {
            source_train: get(Domain::Source, Split::Train),
            source_test: get(Domain::Source, Split::Test),
            target_train: get(Domain::Target, Split::Train),
            target_test: get(Domain::Target, Split::Test),
        }
    }

    /// Config file text matching the helpers above.
    pub const TOML: &str = r#"
[experiment]
seeds = [7]
variants = ["source_only", "udavt"]

[data]
num_classes = 3
train_per_class = 6
test_per_class = 4
frame_size = 8
frames = 4
seed = 5

[model]
frame_size = 8
frames_per_video = 4
embed_dim = 16
heads = 2
spatial_layers = 1
temporal_layers = 1
num_classes = 3
projection_dim = 8

[phase1]
epochs = 2
batch_size = 6

[phase2]
epochs = 2
batch_size_per_domain = 8
queue_capacity = 32
pair_cap = 64
domain_hidden = 8
"#;
}
