//! Command-line surface. `main` parses [`Cli`] and hands it to [`run`].

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::data::cache::CacheStatus;
use crate::error::{Error, Result, TensorError};
use crate::experiment::{export_attention, load_data, AttentionExport, ExperimentConfig, Precision};
use crate::model::checkpoint;
use crate::model::VideoTransformer;
use crate::scalar::Scalar;
use crate::train::{
    aggregate, aggregate_csv, phase1_train, phase2_train, summarize_phase1, summarize_phase2, to_csv, DomainData,
    EpochRecord, MatrixSpec, Method, RunSummary, Variant, ARTIFACT_VERSION,
};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "vidalign", version, about = "Two-phase video domain adaptation on synthetic data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PhaseArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    SourceTrain,
    SourceTest,
    TargetTrain,
    TargetTest,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate (or validate) the cached synthetic datasets.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, env = "VIDALIGN_OUT")]
        out: PathBuf,
    },
    /// Run phase 1, phase 2 or both for one seed.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "both")]
        phase: PhaseArg,
        /// A method or matrix variant name; defaults to the config.
        #[arg(long)]
        method: Option<String>,
        /// Defaults to the first configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Phase-1 checkpoint for `--phase 2`; defaults to the one in the out dir.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset cache directory; data is generated in memory when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, env = "VIDALIGN_OUT")]
        out: PathBuf,
    },
    /// Run every configured variant for every configured seed.
    Matrix {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, env = "VIDALIGN_OUT")]
        out: PathBuf,
    },
    /// Write per-video temporal attention from a checkpoint.
    ExportAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to the config stored in the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "target-test")]
        dataset: SplitArg,
        #[arg(long, default_value_t = 16)]
        samples: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

/// 2 for configuration problems, 3 for numeric failures, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Checkpoint(_) => EXIT_CONFIG,
        Error::Numeric(_) | Error::Tensor(TensorError::NonFinite { .. }) => EXIT_NUMERIC,
        _ => 1,
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

/// A run summary with the full configuration echoed alongside.
#[derive(Debug, Serialize)]
struct RunArtifact<'a> {
    #[serde(flatten)]
    summary: &'a RunSummary,
    config: &'a ExperimentConfig,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn provenance_line(hash: &str, seed: u64) -> String {
    format!("# artifact_version={ARTIFACT_VERSION} config_hash={hash} seed={seed}\n")
}

fn write_metrics(path: &Path, method: Method, records: &[EpochRecord], hash: &str, seed: u64) -> Result<()> {
    fs::write(path, provenance_line(hash, seed) + &to_csv(method, records))?;
    Ok(())
}

fn checkpoint_meta(cfg: &ExperimentConfig, phase: u8, variant: Option<Variant>) -> Result<serde_json::Value> {
    Ok(serde_json::json!({
        "artifact_version": ARTIFACT_VERSION,
        "config_hash": cfg.hash(),
        "phase": phase,
        "variant": variant.map(Variant::as_str),
        "config": serde_json::to_value(cfg)?,
    }))
}

fn split_of(data: &DomainData, split: SplitArg) -> (&crate::data::Dataset, &'static str) {
    match split {
        SplitArg::SourceTrain => (&data.source_train, "source_train"),
        SplitArg::SourceTest => (&data.source_test, "source_test"),
        SplitArg::TargetTrain => (&data.target_train, "target_train"),
        SplitArg::TargetTest => (&data.target_test, "target_test"),
    }
}

fn report_cache(status: &[(String, CacheStatus)], data: &DomainData) {
    let counts = [
        data.source_train.len(),
        data.source_test.len(),
        data.target_train.len(),
        data.target_test.len(),
    ];
    for ((name, st), n) in status.iter().zip(counts) {
        let note = match st {
            CacheStatus::Valid => "cache valid, skipped",
            CacheStatus::Regenerated => "generated",
        };
        println!("{name}: {n} videos ({note})");
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, out } => {
            let cfg = load_config(config.as_deref())?;
            fs::create_dir_all(&out)?;
            let (data, status) = load_data(&cfg.data, Some(&out))?;
            report_cache(&status, &data);
            Ok(())
        }
        Command::Train {
            config,
            phase,
            method,
            seed,
            checkpoint,
            data,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let seed = seed.unwrap_or(cfg.experiment.seeds[0]);
            let job = TrainJob {
                phase,
                method: method.as_deref(),
                seed,
                checkpoint: checkpoint.as_deref(),
                data: data.as_deref(),
                out: &out,
            };
            match cfg.experiment.precision {
                Precision::F32 => train::<f32>(&cfg, &job),
                Precision::F64 => train::<f64>(&cfg, &job),
            }
        }
        Command::Matrix { config, data, out } => {
            let cfg = load_config(config.as_deref())?;
            match cfg.experiment.precision {
                Precision::F32 => matrix::<f32>(&cfg, data.as_deref(), &out),
                Precision::F64 => matrix::<f64>(&cfg, data.as_deref(), &out),
            }
        }
        Command::ExportAttention {
            checkpoint,
            config,
            dataset,
            samples,
            out,
        } => {
            let bytes = fs::read(&checkpoint)
                .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", checkpoint.display())))?;
            let (header, _) = checkpoint::read_header(&bytes)?;
            match header.dtype.as_str() {
                "f64" => attention::<f64>(&bytes, config.as_deref(), dataset, samples, &out),
                _ => attention::<f32>(&bytes, config.as_deref(), dataset, samples, &out),
            }
        }
    }
}

struct TrainJob<'a> {
    phase: PhaseArg,
    method: Option<&'a str>,
    seed: u64,
    checkpoint: Option<&'a Path>,
    data: Option<&'a Path>,
    out: &'a Path,
}

/// A plain method keeps the configured label mode and queue switch; a
/// matrix variant name sets them.
fn resolve_method(cfg: &ExperimentConfig, name: Option<&str>) -> Result<(Variant, crate::train::Phase2Config)> {
    let base = &cfg.phase2;
    match name {
        None => Ok((Variant::from_method(base.method), base.clone())),
        Some(n) => match Method::parse(n) {
            Ok(m) => {
                let mut p = base.clone();
                p.method = m;
                Ok((Variant::from_method(m), p))
            }
            Err(_) => {
                let v = Variant::parse(n).map_err(|_| Error::config(format!("unknown method or variant {n:?}")))?;
                Ok((v, v.apply(base)))
            }
        },
    }
}

fn train<T: Scalar>(cfg: &ExperimentConfig, job: &TrainJob) -> Result<()> {
    let (variant, p2) = resolve_method(cfg, job.method)?;
    let hash = cfg.hash();
    let seed = job.seed;
    let p1_path = job.out.join(format!("phase1_seed{seed}.ckpt"));
    // Checked before any data is generated so a missing input fails fast.
    let input = job.checkpoint.map(Path::to_path_buf).unwrap_or_else(|| p1_path.clone());
    if job.phase == PhaseArg::Two && !input.exists() {
        return Err(Error::config(format!(
            "phase 2 needs a phase-1 checkpoint; {} does not exist",
            input.display()
        )));
    }
    fs::create_dir_all(job.out)?;
    let (data, _) = load_data(&cfg.data, job.data)?;
    let mut summary = RunSummary::new(&hash, seed);

    let mut model = if job.phase == PhaseArg::Two {
        let (model, header) = checkpoint::load::<T>(&input)?;
        if header.model != cfg.model {
            return Err(Error::config("checkpoint model config differs from [model]"));
        }
        model
    } else {
        let mut model = VideoTransformer::<T>::new(cfg.model.clone(), seed)?;
        let out = phase1_train(&mut model, &data, &cfg.phase1, seed)?;
        summary.phase1 = Some(summarize_phase1(&model, &data, &out)?);
        write_metrics(&job.out.join(format!("metrics_phase1_seed{seed}.csv")), Method::SourceOnly, &out.records, &hash, seed)?;
        checkpoint::save(&p1_path, &model, seed, checkpoint_meta(cfg, 1, None)?)?;
        model
    };

    let tag = if job.phase == PhaseArg::One {
        "phase1".to_string()
    } else {
        let out = phase2_train(&mut model, &data, &p2, seed)?;
        summary.phase2 = Some(summarize_phase2(variant, &p2, &out)?);
        let name = variant.as_str();
        write_metrics(&job.out.join(format!("metrics_{name}_seed{seed}.csv")), p2.method, &out.records, &hash, seed)?;
        checkpoint::save(
            &job.out.join(format!("phase2_{name}_seed{seed}.ckpt")),
            &model,
            seed,
            checkpoint_meta(cfg, 2, Some(variant))?,
        )?;
        name.to_string()
    };
    let path = job.out.join(format!("summary_{tag}_seed{seed}.json"));
    write_json(&path, &RunArtifact { summary: &summary, config: cfg })?;
    if let Some(acc) = summary.target_accuracy() {
        println!("target test accuracy {acc:.4} ({})", path.display());
    }
    Ok(())
}

fn matrix<T: Scalar>(cfg: &ExperimentConfig, data_dir: Option<&Path>, out: &Path) -> Result<()> {
    let hash = cfg.hash();
    let runs = out.join("runs");
    fs::create_dir_all(&runs)?;
    let (data, _) = load_data(&cfg.data, data_dir)?;
    let spec = MatrixSpec {
        model: &cfg.model,
        phase1: &cfg.phase1,
        phase2: &cfg.phase2,
        variants: &cfg.experiment.variants,
        seeds: &cfg.experiment.seeds,
        config_hash: &hash,
        workers: cfg.experiment.workers,
    };
    let cells = crate::train::run_matrix::<T>(&spec, &data);
    for cell in &cells {
        let stem = format!("{}_seed{}", cell.variant.as_str(), cell.seed);
        match &cell.outcome {
            Ok((summary, records)) => {
                write_json(&runs.join(format!("{stem}.json")), &RunArtifact { summary, config: cfg })?;
                let method = cell.variant.apply(&cfg.phase2).method;
                write_metrics(&runs.join(format!("{stem}.csv")), method, records, &hash, cell.seed)?;
            }
            Err(e) => fs::write(runs.join(format!("{stem}.failed")), format!("{e}\n"))?,
        }
    }
    let rows = aggregate(&cells, &cfg.experiment.variants);
    let table = aggregate_csv(&rows, &hash, &cfg.experiment.seeds);
    fs::write(out.join("matrix.csv"), &table)?;
    print!("{table}");
    Ok(())
}

fn attention<T: Scalar>(bytes: &[u8], config: Option<&Path>, split: SplitArg, samples: usize, out: &Path) -> Result<()> {
    let (model, header) = checkpoint::decode::<T>(bytes)?;
    let cfg = match config {
        Some(p) => ExperimentConfig::load(p)?,
        None => {
            let echoed = header
                .meta
                .get("config")
                .cloned()
                .ok_or_else(|| Error::config("checkpoint carries no config; pass --config"))?;
            serde_json::from_value(echoed).map_err(|e| Error::config(format!("checkpoint config: {e}")))?
        }
    };
    let (data, _) = load_data(&cfg.data, None)?;
    let (dataset, name) = split_of(&data, split);
    let records = export_attention(&model, dataset, samples)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_json(out, &AttentionExport::new(&cfg.hash(), header.seed, name, records))?;
    Ok(())
}
