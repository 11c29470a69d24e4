//! Per-epoch training records and their CSV form.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::Method;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: u8,
    pub method: Method,
    pub seed: u64,
    /// Mean per-step loss by term name (`ce`, `align`, `target_ce`, ...).
    pub losses: BTreeMap<String, f64>,
    pub source_train_acc: Option<f64>,
    pub source_test_acc: Option<f64>,
    pub target_test_acc: Option<f64>,
    pub pseudo_label_acc: Option<f64>,
    pub mean_pair_count: Option<f64>,
    pub queue_fill: Option<usize>,
    pub zero_pair_fraction: Option<f64>,
    pub warnings: Vec<String>,
}

impl EpochRecord {
    pub fn new(epoch: usize, phase: u8, method: Method, seed: u64) -> Self {
        EpochRecord {
            epoch,
            phase,
            method,
            seed,
            losses: BTreeMap::new(),
            source_train_acc: None,
            source_test_acc: None,
            target_test_acc: None,
            pseudo_label_acc: None,
            mean_pair_count: None,
            queue_fill: None,
            zero_pair_fraction: None,
            warnings: Vec::new(),
        }
    }
}

/// Fixed column order. Alignment columns are dropped for source-only runs.
pub fn csv_columns(method: Method) -> Vec<&'static str> {
    let mut cols = vec![
        "epoch",
        "phase",
        "method",
        "seed",
        "loss_ce",
        "source_train_acc",
        "source_test_acc",
        "target_test_acc",
    ];
    if method != Method::SourceOnly {
        cols.extend([
            "loss_align",
            "loss_target_ce",
            "pseudo_label_acc",
            "mean_pair_count",
            "queue_fill",
            "zero_pair_fraction",
        ]);
    }
    cols.push("warnings");
    cols
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn to_csv(method: Method, records: &[EpochRecord]) -> String {
    let cols = csv_columns(method);
    let mut out = cols.join(",");
    out.push('\n');
    for r in records {
        let cells: Vec<String> = cols
            .iter()
            .map(|&c| match c {
                "epoch" => r.epoch.to_string(),
                "phase" => r.phase.to_string(),
                "method" => r.method.as_str().to_string(),
                "seed" => r.seed.to_string(),
                "loss_ce" => opt(r.losses.get("ce").copied()),
                "loss_align" => opt(r.losses.get("align").copied()),
                "loss_target_ce" => opt(r.losses.get("target_ce").copied()),
                "source_train_acc" => opt(r.source_train_acc),
                "source_test_acc" => opt(r.source_test_acc),
                "target_test_acc" => opt(r.target_test_acc),
                "pseudo_label_acc" => opt(r.pseudo_label_acc),
                "mean_pair_count" => opt(r.mean_pair_count),
                "queue_fill" => r.queue_fill.map(|q| q.to_string()).unwrap_or_default(),
                "zero_pair_fraction" => opt(r.zero_pair_fraction),
                "warnings" => r.warnings.join("; ").replace(',', " "),
                _ => unreachable!("unknown column {c}"),
            })
            .collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}
