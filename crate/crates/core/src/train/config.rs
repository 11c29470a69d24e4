use serde::{Deserialize, Serialize};

use crate::baselines::VicRegWeights;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Udavt,
    Mmd,
    Mcd,
    Adversarial,
    Infonce,
    Vicreg,
    SourceOnly,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Udavt,
        Method::Mmd,
        Method::Mcd,
        Method::Adversarial,
        Method::Infonce,
        Method::Vicreg,
        Method::SourceOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Udavt => "udavt",
            Method::Mmd => "mmd",
            Method::Mcd => "mcd",
            Method::Adversarial => "adversarial",
            Method::Infonce => "infonce",
            Method::Vicreg => "vicreg",
            Method::SourceOnly => "source_only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown method {s:?}")))
    }

    /// Baselines get a pseudo-label target cross-entropy; UDAVT does not.
    pub fn is_baseline(self) -> bool {
        matches!(
            self,
            Method::Mmd | Method::Mcd | Method::Adversarial | Method::Infonce | Method::Vicreg
        )
    }
}

/// Which labels the alignment term sees for target instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    Pseudo,
    /// Withheld ground truth; the supervised upper bound.
    GroundTruth,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PseudoRefresh {
    Epoch,
    Batch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Phase1Config {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Evaluate every this many epochs; 0 evaluates only after the last.
    pub eval_every: usize,
}

impl Default for Phase1Config {
    fn default() -> Self {
        Phase1Config {
            epochs: 20,
            lr: 0.001,
            weight_decay: 1e-9,
            momentum: 0.9,
            batch_size: 8,
            eval_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Phase2Config {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub batch_size_per_domain: usize,
    pub method: Method,
    pub alpha: f64,
    pub lambda: f64,
    pub queue_capacity: usize,
    pub use_queue: bool,
    /// Queue entries older than this many epochs are evicted.
    pub queue_max_age: usize,
    pub pair_cap: usize,
    pub label_mode: LabelMode,
    pub pseudo_refresh: PseudoRefresh,
    /// Targets below this softmax confidence are left out of pairing.
    pub confidence_threshold: f64,
    /// Weight of the pseudo-label target cross-entropy added to baselines.
    pub target_ce_weight: f64,
    /// Also add the pseudo-label target cross-entropy to UDAVT.
    pub udavt_target_ce: bool,
    /// Weight of the MMD, adversarial and MCD alignment terms.
    pub baseline_weight: f64,
    pub infonce_temperature: f64,
    pub vicreg: VicRegWeightsConfig,
    pub domain_hidden: usize,
    pub eval_every: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VicRegWeightsConfig {
    pub invariance: f64,
    pub variance: f64,
    pub covariance: f64,
}

impl Default for VicRegWeightsConfig {
    fn default() -> Self {
        let w = VicRegWeights::default();
        VicRegWeightsConfig {
            invariance: w.invariance,
            variance: w.variance,
            covariance: w.covariance,
        }
    }
}

impl From<VicRegWeightsConfig> for VicRegWeights {
    fn from(c: VicRegWeightsConfig) -> Self {
        VicRegWeights {
            invariance: c.invariance,
            variance: c.variance,
            covariance: c.covariance,
        }
    }
}

impl Default for Phase2Config {
    fn default() -> Self {
        Phase2Config {
            epochs: 20,
            lr: 0.005,
            weight_decay: 1e-9,
            momentum: 0.9,
            batch_size_per_domain: 64,
            method: Method::Udavt,
            alpha: 0.025,
            lambda: 5e-3,
            queue_capacity: 2048,
            use_queue: true,
            queue_max_age: 2,
            pair_cap: 4096,
            label_mode: LabelMode::Pseudo,
            pseudo_refresh: PseudoRefresh::Epoch,
            confidence_threshold: 0.0,
            target_ce_weight: 1.0,
            udavt_target_ce: false,
            baseline_weight: 1.0,
            infonce_temperature: 0.1,
            vicreg: VicRegWeightsConfig::default(),
            domain_hidden: 64,
            eval_every: 1,
        }
    }
}

impl Phase1Config {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || !(self.lr > 0.0) || self.batch_size == 0 {
            return Err(Error::config("phase1: epochs, lr and batch_size must be positive"));
        }
        if !(self.weight_decay >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("phase1: weight_decay >= 0 and momentum in [0, 1) required"));
        }
        Ok(())
    }
}

impl Phase2Config {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || !(self.lr > 0.0) || self.batch_size_per_domain == 0 {
            return Err(Error::config("phase2: epochs, lr and batch_size_per_domain must be positive"));
        }
        if !(self.weight_decay >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("phase2: weight_decay >= 0 and momentum in [0, 1) required"));
        }
        if !(self.alpha >= 0.0) || !(self.lambda >= 0.0) || !(self.baseline_weight >= 0.0) {
            return Err(Error::config("phase2: alpha, lambda and baseline_weight must be non-negative"));
        }
        if self.pair_cap < 2 {
            return Err(Error::config("phase2: pair_cap must be at least 2"));
        }
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(Error::config("phase2: confidence_threshold must lie in [0, 1]"));
        }
        if !(self.infonce_temperature > 0.0) || self.domain_hidden == 0 {
            return Err(Error::config("phase2: infonce_temperature and domain_hidden must be positive"));
        }
        Ok(())
    }
}
