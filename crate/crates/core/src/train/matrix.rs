//! The comparison matrix: named variants × seeds, one Phase I per seed.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::{LabelMode, Method, Phase1Config, Phase2Config};
use super::eval::{evaluate, EvalResult};
use super::phase1::{phase1_train, PhaseOutcome};
use super::phase2::phase2_train;
use super::DomainData;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, VideoTransformer};
use crate::scalar::Scalar;

/// Bumped whenever a written artifact changes shape.
pub const ARTIFACT_VERSION: u32 = 1;

/// A row of the comparison matrix: a method plus the ablation switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    SourceOnly,
    Udavt,
    UdavtSupervised,
    UdavtNoQueue,
    UdavtRandomLabels,
    Mmd,
    Mcd,
    Adversarial,
    Infonce,
    Vicreg,
}

impl Variant {
    pub const ALL: [Variant; 10] = [
        Variant::SourceOnly,
        Variant::Udavt,
        Variant::UdavtSupervised,
        Variant::UdavtNoQueue,
        Variant::UdavtRandomLabels,
        Variant::Mmd,
        Variant::Mcd,
        Variant::Adversarial,
        Variant::Infonce,
        Variant::Vicreg,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::SourceOnly => "source_only",
            Variant::Udavt => "udavt",
            Variant::UdavtSupervised => "udavt_supervised",
            Variant::UdavtNoQueue => "udavt_no_queue",
            Variant::UdavtRandomLabels => "udavt_random_labels",
            Variant::Mmd => "mmd",
            Variant::Mcd => "mcd",
            Variant::Adversarial => "adversarial",
            Variant::Infonce => "infonce",
            Variant::Vicreg => "vicreg",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown variant {s:?}")))
    }

    /// The variant a plain method name stands for.
    pub fn from_method(m: Method) -> Self {
        match m {
            Method::Udavt => Variant::Udavt,
            Method::Mmd => Variant::Mmd,
            Method::Mcd => Variant::Mcd,
            Method::Adversarial => Variant::Adversarial,
            Method::Infonce => Variant::Infonce,
            Method::Vicreg => Variant::Vicreg,
            Method::SourceOnly => Variant::SourceOnly,
        }
    }

    /// `base` with the method and ablation switches of this variant.
    pub fn apply(self, base: &Phase2Config) -> Phase2Config {
        let mut cfg = base.clone();
        let (method, labels, queue) = match self {
            Variant::SourceOnly => (Method::SourceOnly, base.label_mode, base.use_queue),
            Variant::Udavt => (Method::Udavt, LabelMode::Pseudo, true),
            Variant::UdavtSupervised => (Method::Udavt, LabelMode::GroundTruth, true),
            Variant::UdavtNoQueue => (Method::Udavt, LabelMode::Pseudo, false),
            Variant::UdavtRandomLabels => (Method::Udavt, LabelMode::Random, true),
            Variant::Mmd => (Method::Mmd, LabelMode::Pseudo, base.use_queue),
            Variant::Mcd => (Method::Mcd, LabelMode::Pseudo, base.use_queue),
            Variant::Adversarial => (Method::Adversarial, LabelMode::Pseudo, base.use_queue),
            Variant::Infonce => (Method::Infonce, LabelMode::Pseudo, base.use_queue),
            Variant::Vicreg => (Method::Vicreg, LabelMode::Pseudo, base.use_queue),
        };
        cfg.method = method;
        cfg.label_mode = labels;
        cfg.use_queue = queue;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase1Summary {
    pub source_train_acc: f64,
    pub source_test_acc: f64,
    pub target_test_acc: f64,
    pub frozen_unchanged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase2Summary {
    pub variant: Variant,
    pub method: Method,
    pub label_mode: LabelMode,
    pub use_queue: bool,
    pub source_test_acc: f64,
    pub target_test: EvalResult,
    pub final_pseudo_label_acc: Option<f64>,
    pub frozen_unchanged: bool,
    pub warnings: Vec<String>,
}

/// What one (config, seed) run reports. Contains no timings, so identical
/// inputs serialize to identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub artifact_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub phase1: Option<Phase1Summary>,
    pub phase2: Option<Phase2Summary>,
}

impl RunSummary {
    pub fn new(config_hash: &str, seed: u64) -> Self {
        RunSummary {
            artifact_version: ARTIFACT_VERSION,
            config_hash: config_hash.to_string(),
            seed,
            phase1: None,
            phase2: None,
        }
    }

    /// Target test accuracy after the last phase that ran.
    pub fn target_accuracy(&self) -> Option<f64> {
        self.phase2
            .as_ref()
            .map(|p| p.target_test.accuracy)
            .or(self.phase1.as_ref().map(|p| p.target_test_acc))
    }
}

pub fn summarize_phase1<T: Scalar>(model: &VideoTransformer<T>, data: &DomainData, out: &PhaseOutcome) -> Result<Phase1Summary> {
    let acc = |e: &Option<EvalResult>| e.as_ref().map(|r| r.accuracy);
    Ok(Phase1Summary {
        source_train_acc: evaluate(model, &data.source_train)?.accuracy,
        source_test_acc: acc(&out.source_test).unwrap_or(f64::NAN),
        target_test_acc: acc(&out.target_test).unwrap_or(f64::NAN),
        frozen_unchanged: out.frozen_unchanged(),
    })
}

pub fn summarize_phase2(variant: Variant, cfg: &Phase2Config, out: &PhaseOutcome) -> Result<Phase2Summary> {
    let target_test = out
        .target_test
        .clone()
        .ok_or_else(|| Error::Numeric("phase 2 finished without an evaluation".into()))?;
    Ok(Phase2Summary {
        variant,
        method: cfg.method,
        label_mode: cfg.label_mode,
        use_queue: cfg.use_queue,
        source_test_acc: out.source_test.as_ref().map_or(f64::NAN, |r| r.accuracy),
        target_test,
        final_pseudo_label_acc: out.records.last().and_then(|r| r.pseudo_label_acc),
        frozen_unchanged: out.frozen_unchanged(),
        warnings: out.records.iter().flat_map(|r| r.warnings.iter().cloned()).collect(),
    })
}

/// Everything a matrix cell needs besides the seed.
#[derive(Debug, Clone)]
pub struct MatrixSpec<'a> {
    pub model: &'a ModelConfig,
    pub phase1: &'a Phase1Config,
    pub phase2: &'a Phase2Config,
    pub variants: &'a [Variant],
    pub seeds: &'a [u64],
    pub config_hash: &'a str,
    /// Worker threads; seeds are spread across them.
    pub workers: usize,
}

/// One matrix cell: a finished run or the error that stopped it.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub variant: Variant,
    pub seed: u64,
    pub outcome: std::result::Result<(RunSummary, Vec<super::EpochRecord>), String>,
}

fn run_seed<T: Scalar>(spec: &MatrixSpec, data: &DomainData, seed: u64) -> Vec<CellResult> {
    let fail = |variant, msg: String| CellResult {
        variant,
        seed,
        outcome: Err(msg),
    };
    let phase1 = (|| -> Result<_> {
        let mut model = VideoTransformer::<T>::new(spec.model.clone(), seed)?;
        let out = phase1_train(&mut model, data, spec.phase1, seed)?;
        let summary = summarize_phase1(&model, data, &out)?;
        Ok((model, summary))
    })();
    let (trained, p1) = match phase1 {
        Ok(v) => v,
        Err(e) => {
            let msg = format!("phase 1: {e}");
            return spec.variants.iter().map(|&v| fail(v, msg.clone())).collect();
        }
    };
    spec.variants
        .iter()
        .map(|&variant| {
            let cfg = variant.apply(spec.phase2);
            let mut model = trained.clone();
            let run = phase2_train(&mut model, data, &cfg, seed).and_then(|out| {
                let mut summary = RunSummary::new(spec.config_hash, seed);
                summary.phase1 = Some(p1.clone());
                summary.phase2 = Some(summarize_phase2(variant, &cfg, &out)?);
                Ok((summary, out.records))
            });
            log::info!("seed {seed} {}: {}", variant.as_str(), match &run {
                Ok((s, _)) => format!("target {:.4}", s.target_accuracy().unwrap_or(f64::NAN)),
                Err(e) => format!("failed: {e}"),
            });
            CellResult {
                variant,
                seed,
                outcome: run.map_err(|e| e.to_string()),
            }
        })
        .collect()
}

/// Runs every variant for every seed. A failing cell is recorded and the
/// rest of the matrix still runs. Results are ordered seed-major, in the
/// order given.
pub fn run_matrix<T: Scalar>(spec: &MatrixSpec, data: &DomainData) -> Vec<CellResult> {
    let workers = spec.workers.clamp(1, spec.seeds.len().max(1));
    if workers == 1 {
        return spec.seeds.iter().flat_map(|&s| run_seed::<T>(spec, data, s)).collect();
    }
    let per_seed: Vec<Vec<CellResult>> = std::thread::scope(|scope| {
        let chunks: Vec<&[u64]> = spec.seeds.chunks(spec.seeds.len().div_ceil(workers)).collect();
        let handles: Vec<_> = chunks
            .into_iter()
            .map(|chunk| scope.spawn(move || chunk.iter().map(|&s| run_seed::<T>(spec, data, s)).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("matrix worker panicked"))
            .collect()
    });
    per_seed.into_iter().flatten().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub variant: Variant,
    pub mean: f64,
    /// Sample standard deviation; 0 when fewer than two runs finished.
    pub std: f64,
    pub n: usize,
    pub failures: Vec<String>,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Target test accuracy per variant, in `variants` order.
pub fn aggregate(cells: &[CellResult], variants: &[Variant]) -> Vec<AggregateRow> {
    variants
        .iter()
        .map(|&variant| {
            let mut accs = Vec::new();
            let mut failures = Vec::new();
            for c in cells.iter().filter(|c| c.variant == variant) {
                match &c.outcome {
                    Ok((s, _)) => accs.extend(s.target_accuracy()),
                    Err(e) => failures.push(format!("seed {}: {e}", c.seed)),
                }
            }
            let (mean, std) = mean_std(&accs);
            AggregateRow {
                variant,
                mean,
                std,
                n: accs.len(),
                failures,
            }
        })
        .collect()
}

pub fn aggregate_csv(rows: &[AggregateRow], config_hash: &str, seeds: &[u64]) -> String {
    let seeds: Vec<String> = seeds.iter().map(u64::to_string).collect();
    let mut out = format!(
        "# artifact_version={ARTIFACT_VERSION} config_hash={config_hash} seeds={}\nvariant,mean,std,n,failures\n",
        seeds.join(" ")
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{},{}",
            r.variant.as_str(),
            r.mean,
            r.std,
            r.n,
            r.failures.join("; ").replace(',', " ")
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn std_is_zero_for_one_run() {
        assert_eq!(mean_std(&[0.4]), (0.4, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn variants_round_trip_and_cover_the_matrix() {
        for v in Variant::ALL {
            assert_eq!(Variant::parse(v.as_str()).unwrap(), v);
        }
        let base = Phase2Config::default();
        assert_eq!(Variant::UdavtSupervised.apply(&base).label_mode, LabelMode::GroundTruth);
        assert!(!Variant::UdavtNoQueue.apply(&base).use_queue);
        assert_eq!(Variant::UdavtRandomLabels.apply(&base).label_mode, LabelMode::Random);
        assert_eq!(Variant::Mcd.apply(&base).method, Method::Mcd);
    }

    #[test]
    fn failures_are_annotated_not_averaged() {
        let cells = vec![
            CellResult {
                variant: Variant::Mmd,
                seed: 0,
                outcome: Err("boom".into()),
            },
            CellResult {
                variant: Variant::Mmd,
                seed: 1,
                outcome: Ok((
                    RunSummary {
                        phase1: Some(Phase1Summary {
                            source_train_acc: 1.0,
                            source_test_acc: 1.0,
                            target_test_acc: 0.5,
                            frozen_unchanged: true,
                        }),
                        ..RunSummary::new("h", 1)
                    },
                    Vec::new(),
                )),
            },
        ];
        let rows = aggregate(&cells, &[Variant::Mmd]);
        assert_eq!(rows[0].n, 1);
        assert_eq!(rows[0].mean, 0.5);
        assert_eq!(rows[0].failures, vec!["seed 0: boom".to_string()]);
        assert!(aggregate_csv(&rows, "h", &[0, 1]).contains("mmd,0.500000,0.000000,1,seed 0: boom"));
    }
}
