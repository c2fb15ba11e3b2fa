use serde::{Deserialize, Serialize};

use crate::error::TrainError;

/// Activation on the fusion network's output.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionOutput {
    /// `w = softplus(.)`, always positive.
    #[default]
    Softplus,
    /// Raw affine output.
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemConfig {
    /// Magnitude target for samples of the sub-network's own group.
    pub xi: f64,
    /// Magnitude cap for samples of other groups.
    pub mu: f64,
    /// Scale on the whole magnitude regularizer.
    pub lambda: f64,
    /// Top logits per group fed to the fusion network.
    pub top_k: usize,
    pub subnet_hidden: usize,
    pub embed_dim: usize,
    /// Number of affine layers per sub-network.
    pub subnet_depth: usize,
    pub fusion_hidden: usize,
    pub fusion_output: FusionOutput,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_epochs: f64,
    pub weight_decay: f64,
    /// Keep the classifier head fixed during stage 2.
    pub freeze_head: bool,
    /// Class-balanced resampling of stage-2 batches.
    pub balanced_sampling: bool,
    pub seed: u64,
}

impl Default for MemConfig {
    fn default() -> Self {
        Self {
            xi: 100.0,
            mu: 0.0,
            lambda: 1.0,
            top_k: 5,
            subnet_hidden: 64,
            embed_dim: 16,
            subnet_depth: 2,
            fusion_hidden: 32,
            fusion_output: FusionOutput::Softplus,
            epochs: 10,
            batch_size: 64,
            learning_rate: 2e-3,
            warmup_epochs: 1.0,
            weight_decay: 0.05,
            freeze_head: false,
            balanced_sampling: true,
            seed: 7,
        }
    }
}

impl MemConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.mu >= 0.0) || !(self.xi > self.mu) {
            return Err(TrainError::Config(format!(
                "need xi > mu >= 0, got xi {} and mu {}",
                self.xi, self.mu
            )));
        }
        if !(self.lambda > 0.0) {
            return Err(TrainError::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.top_k == 0 {
            return Err(TrainError::Config("top_k must be at least 1".into()));
        }
        if self.subnet_depth == 0 || self.subnet_hidden == 0 || self.embed_dim == 0 || self.fusion_hidden == 0 {
            return Err(TrainError::Config("sub-network and fusion sizes must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if self.epochs > 0 && self.warmup_epochs > self.epochs as f64 {
            return Err(TrainError::Config(format!(
                "warmup_epochs {} exceeds epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        Ok(())
    }

    /// Sub-network widths from `repr_dim` to the embedding.
    pub fn subnet_widths(&self, repr_dim: usize) -> Vec<usize> {
        let mut w = vec![repr_dim];
        w.extend(std::iter::repeat_n(self.subnet_hidden, self.subnet_depth - 1));
        w.push(self.embed_dim);
        w
    }
}
