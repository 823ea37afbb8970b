//! Experiment protocol: adaptation problem enumeration, the training
//! loop, prediction, and checkpointing.

mod checkpoint;
mod problems;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, CHECKPOINT_MAGIC};
pub use problems::{
    enumerate_cross_time_problems, sample_adaptation_problems, AdaptationProblem, CrossTimePair,
    TimeDirection,
};
pub use train::{predict, run_experiment, train, AdaptationData, TrainedModel};

use crate::data::{DataError, SplitFractions};
use crate::losses::{LabelProportions, LossError, LossWeights, Method};
use crate::metrics::MetricsError;
use crate::models::{ArchitectureConfig, LambdaSchedule, ModelError};
use crate::tensor::{AdamConfig, TensorError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("dataset is missing domain {0}")]
    MissingDomain(String),
    #[error("domain {0} has no training windows")]
    EmptyDomain(String),
    #[error("{method} requires label proportions but none were given or measurable")]
    MissingProportions { method: &'static str },
    #[error("target labels were read {count} times during unsupervised training")]
    UnsupervisedContractViolated { count: u64 },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Where a run sits within a protocol sweep; used for report grouping.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolMode {
    CrossPerson,
    CrossTime,
}

/// Grouping metadata attached to protocol runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolTag {
    pub mode: ProtocolMode,
    pub set_index: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<TimeDirection>,
}

/// One adaptation run: the problem, the method, and every knob the
/// training loop reads. Fully serializable so runs are reproducible
/// from their result files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub method: Method,
    pub sources: Vec<String>,
    pub target: String,
    pub seed: u64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Overrides the derived steps per epoch when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps_per_epoch: Option<usize>,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default = "default_schedule")]
    pub lambda_schedule: LambdaSchedule,
    /// Target label proportions for the weak-supervision variants;
    /// measured from the target's labeled training split when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proportions: Option<LabelProportions>,
    #[serde(default = "default_filters")]
    pub conv_filters: [usize; 3],
    #[serde(default = "default_widths")]
    pub kernel_widths: [usize; 3],
    #[serde(default = "default_domain_hidden")]
    pub domain_hidden: usize,
    #[serde(default)]
    pub optimizer: AdamConfig,
    #[serde(default)]
    pub fractions: SplitFractions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<ProtocolTag>,
}

fn default_epochs() -> usize {
    30
}
fn default_batch_size() -> usize {
    64
}
fn default_schedule() -> LambdaSchedule {
    LambdaSchedule::Ramp
}
fn default_filters() -> [usize; 3] {
    [128, 256, 128]
}
fn default_widths() -> [usize; 3] {
    [8, 5, 3]
}
fn default_domain_hidden() -> usize {
    128
}

impl ExperimentConfig {
    pub fn new(method: Method, sources: Vec<String>, target: impl Into<String>, seed: u64) -> Self {
        Self {
            method,
            sources,
            target: target.into(),
            seed,
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            steps_per_epoch: None,
            weights: LossWeights::default(),
            lambda_schedule: default_schedule(),
            proportions: None,
            conv_filters: default_filters(),
            kernel_widths: default_widths(),
            domain_hidden: default_domain_hidden(),
            optimizer: AdamConfig::default(),
            fractions: SplitFractions::default(),
            tag: None,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.sources.contains(&self.target) {
            return Err(ExperimentError::InvalidConfig(format!(
                "target {} must not be one of the sources",
                self.target
            )));
        }
        if self.method != Method::TrainOnTarget && self.sources.is_empty() {
            return Err(ExperimentError::InvalidConfig(format!(
                "{} needs at least one source domain",
                self.method
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(ExperimentError::InvalidConfig(
                "epochs and batch size must be >= 1".into(),
            ));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(ExperimentError::InvalidConfig("steps_per_epoch must be >= 1".into()));
        }
        self.weights
            .validate()
            .map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
        self.fractions.validate()?;
        if let Some(p) = &self.proportions {
            let sum: f64 = p.probabilities().iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(ExperimentError::InvalidConfig("proportions do not sum to 1".into()));
            }
        }
        Ok(())
    }

    /// Architecture for a dataset with `channels` channels and
    /// `num_classes` classes.
    pub fn architecture(&self, channels: usize, num_classes: usize) -> ArchitectureConfig {
        ArchitectureConfig {
            channels,
            num_classes,
            num_domains: self.sources.len() + 1,
            conv_filters: self.conv_filters,
            kernel_widths: self.kernel_widths,
            domain_hidden: self.domain_hidden,
        }
    }

    /// Stable identifier used for result files.
    pub fn run_id(&self) -> String {
        let mode = match &self.tag {
            Some(t) => match t.mode {
                ProtocolMode::CrossPerson => "xp",
                ProtocolMode::CrossTime => "xt",
            },
            None => "run",
        };
        let set = self.tag.as_ref().map(|t| t.set_index).unwrap_or(0);
        format!(
            "{mode}_{}_n{}_t-{}_s{}_seed{}",
            self.method,
            self.sources.len(),
            self.target.replace(['/', '@'], "-"),
            set,
            self.seed
        )
    }
}

/// Per-step values of each loss component; unused components stay empty.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTraces {
    pub task: Vec<f64>,
    pub domain: Vec<f64>,
    pub contrastive: Vec<f64>,
    pub weak_supervision: Vec<f64>,
    pub total: Vec<f64>,
}

impl LossTraces {
    /// Mean of the task trace per epoch.
    pub fn epoch_task_means(&self, steps_per_epoch: usize) -> Vec<f64> {
        self.task
            .chunks(steps_per_epoch)
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect()
    }
}

/// Everything a finished run reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: ExperimentConfig,
    pub target_auc: f64,
    pub target_accuracy: f64,
    pub steps_per_epoch: usize,
    pub traces: LossTraces,
    /// Mean task cross-entropy on the source validation splits (target
    /// validation for the train-on-target bound), computed once after
    /// training; absent when no labeled validation windows exist.
    pub source_valid_loss: Option<f64>,
    pub wall_time_seconds: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        let ok = ExperimentConfig::new(Method::Codats, vec!["a".into()], "b", 1);
        assert!(ok.validate().is_ok());

        let overlap = ExperimentConfig::new(Method::Codats, vec!["b".into()], "b", 1);
        assert!(overlap.validate().is_err());

        let no_sources = ExperimentConfig::new(Method::Codats, vec![], "b", 1);
        assert!(no_sources.validate().is_err());

        // train_on_target ignores sources
        let tot = ExperimentConfig::new(Method::TrainOnTarget, vec![], "b", 1);
        assert!(tot.validate().is_ok());

        let mut bad = ExperimentConfig::new(Method::Codats, vec!["a".into()], "b", 1);
        bad.weights.temperature = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn config_serde_roundtrip_with_defaults() {
        let c = ExperimentConfig::new(Method::CaldaWs, vec!["a".into(), "c".into()], "b", 9);
        let json = serde_json::to_string(&c).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(c, back);

        // minimal json fills defaults
        let minimal: ExperimentConfig = serde_json::from_str(
            r#"{"method": "codats", "sources": ["a"], "target": "b", "seed": 3}"#,
        )
        .unwrap();
        assert_eq!(minimal.epochs, 30);
        assert_eq!(minimal.batch_size, 64);
        assert_eq!(minimal.conv_filters, [128, 256, 128]);
        assert_eq!(minimal.lambda_schedule, LambdaSchedule::Ramp);
    }

    #[test]
    fn run_ids_distinguish_runs() {
        let a = ExperimentConfig::new(Method::Codats, vec!["a".into()], "b", 1);
        let mut b = a.clone();
        b.seed = 2;
        assert_ne!(a.run_id(), b.run_id());
        let mut c = a.clone();
        c.method = Method::Calda;
        assert_ne!(a.run_id(), c.run_id());
    }
}
