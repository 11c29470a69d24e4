//! Two-phase training, evaluation and per-epoch records.

pub mod config;
pub mod eval;
pub mod matrix;
pub mod phase1;
pub mod phase2;
pub mod record;

pub use config::{LabelMode, Method, Phase1Config, Phase2Config, PseudoRefresh, VicRegWeightsConfig};
pub use eval::{encode_split, evaluate, evaluate_cached, predict_cached, EvalResult, FrameCache};
pub use matrix::{
    aggregate, aggregate_csv, mean_std, run_matrix, summarize_phase1, summarize_phase2, AggregateRow, CellResult, MatrixSpec,
    Phase1Summary, Phase2Summary,
    RunSummary, Variant, ARTIFACT_VERSION,
};
pub use phase1::{frozen_hashes, phase1_train, PhaseOutcome};
pub use phase2::phase2_train;
pub use record::{csv_columns, to_csv, EpochRecord};

use crate::data::Dataset;

/// The four splits a run needs.
#[derive(Debug, Clone)]
pub struct DomainData {
    pub source_train: Dataset,
    pub source_test: Dataset,
    pub target_train: Dataset,
    pub target_test: Dataset,
}
