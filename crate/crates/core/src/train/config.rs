use serde::{Deserialize, Serialize};

use super::optim::{OptimizerKind, OptimizerSettings};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Stop after this many epochs without a validation-accuracy gain.
    pub patience: Option<usize>,
    /// Stop once inference-mode training accuracy reaches this value.
    pub target_train_accuracy: Option<f64>,
    /// Augment training batches.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 110,
            batch_size: 32,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            patience: None,
            target_train_accuracy: None,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.epochs == 0 {
            return fail("train.epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return fail("train.batch_size must be >= 1".into());
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return fail(format!("train.learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        for (key, b) in [("train.beta1", self.beta1), ("train.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return fail(format!("{key} must be in [0, 1), got {b}"));
            }
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return fail(format!("train.epsilon must be > 0, got {}", self.epsilon));
        }
        if self.patience == Some(0) {
            return fail("train.patience must be >= 1 when set".into());
        }
        if let Some(t) = self.target_train_accuracy {
            if !(0.0..=1.0).contains(&t) {
                return fail(format!("train.target_train_accuracy must be in [0, 1], got {t}"));
            }
        }
        Ok(())
    }

    pub fn optimizer_settings(&self) -> OptimizerSettings {
        OptimizerSettings {
            kind: self.optimizer,
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}
