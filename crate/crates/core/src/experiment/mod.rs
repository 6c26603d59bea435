//! Training, model selection and seed sweeps.

mod eval;
mod sweep;
mod train;

use serde::{Deserialize, Serialize};

use crate::nn::ModelSpec;
use crate::pooling::{McSettings, Pooling, DEFAULT_CERTAINTY_EPS, DEFAULT_MC_PASSES};
use crate::{Error, Result};

pub use eval::{evaluate, export_rankings, score_bag, BagScore, Evaluation, RankingRow};
pub use sweep::{headline, run_sweep, ExperimentReport, Headline};
pub use train::{train_one, Checkpoint, RunFailure, RunRecord};

/// How the test instance AUC of a run is computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceAucMode {
    /// Per positive bag, then averaged over bags.
    #[default]
    PerBag,
    /// One AUC over every instance of every test bag.
    Pooled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub pooling: Pooling,
    pub model: ModelSpec,
    pub lr: f64,
    pub epochs: usize,
    #[serde(default = "default_mc_passes")]
    pub mc_passes: usize,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Instances kept per training bag and epoch.
    #[serde(default)]
    pub bag_sample_n: Option<usize>,
    #[serde(default = "default_validation_every")]
    pub validation_every: usize,
    /// Instances kept per validation bag.
    #[serde(default)]
    pub validation_instance_cap: Option<usize>,
    pub seeds: Vec<u64>,
    pub top_k: usize,
    #[serde(default)]
    pub instance_auc: InstanceAucMode,
}

fn default_mc_passes() -> usize {
    DEFAULT_MC_PASSES
}

fn default_eps() -> f64 {
    DEFAULT_CERTAINTY_EPS
}

fn default_validation_every() -> usize {
    5
}

impl ExperimentConfig {
    /// Low-evidence MNIST protocol: 20 seeds, mean of the best 10,
    /// fully connected embedder.
    pub fn mnist_bags(pooling: Pooling) -> Self {
        Self {
            pooling,
            model: ModelSpec::mnist_fc(),
            lr: 5e-4,
            epochs: 100,
            mc_passes: DEFAULT_MC_PASSES,
            eps: DEFAULT_CERTAINTY_EPS,
            bag_sample_n: None,
            validation_every: 5,
            validation_instance_cap: None,
            seeds: (0..20).collect(),
            top_k: 10,
            instance_auc: InstanceAucMode::Pooled,
        }
    }

    /// Feature-bag protocol: halving MLP head over `dim`-wide features,
    /// learning rate 0.01, 128 instances per bag and epoch, validation every
    /// 5 epochs on at most 20,000 instances per bag.
    pub fn feature_bags(pooling: Pooling, dim: usize) -> Self {
        Self {
            pooling,
            model: ModelSpec::feature_head(dim),
            lr: 0.01,
            epochs: 1000,
            mc_passes: DEFAULT_MC_PASSES,
            eps: DEFAULT_CERTAINTY_EPS,
            bag_sample_n: Some(128),
            validation_every: 5,
            validation_instance_cap: Some(20_000),
            seeds: (0..20).collect(),
            top_k: 10,
            instance_auc: InstanceAucMode::PerBag,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.validation_every == 0 {
            return Err(Error::Config("validation_every must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.top_k == 0 || self.top_k > self.seeds.len() {
            return Err(Error::Config(format!(
                "top_k must lie in 1..={}, got {}",
                self.seeds.len(),
                self.top_k
            )));
        }
        if self.pooling == Pooling::Certainty && self.mc_passes < 2 {
            return Err(Error::Config(format!(
                "certainty pooling needs mc_passes >= 2, got {}",
                self.mc_passes
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if self.bag_sample_n == Some(0) || self.validation_instance_cap == Some(0) {
            return Err(Error::Config(
                "instance sampling counts must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn mc(&self) -> McSettings {
        McSettings {
            passes: self.mc_passes,
            eps: self.eps,
        }
    }

    /// Epochs after which validation runs: every `validation_every`-th epoch
    /// and always the last one.
    pub fn validation_epochs(&self) -> Vec<usize> {
        (1..=self.epochs)
            .filter(|e| e % self.validation_every == 0 || *e == self.epochs)
            .collect()
    }
}
