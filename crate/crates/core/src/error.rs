use thiserror::Error;

use crate::dataset::DataError;
use crate::numeric::NumericError;

/// Failures while building, training or restoring models.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{stage} training diverged: non-finite loss at epoch {epoch}, step {step}")]
    Divergence {
        stage: &'static str,
        epoch: usize,
        step: usize,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
