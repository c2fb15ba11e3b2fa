//! Mutual exclusive modulator: three group sub-networks regularized on
//! their output magnitudes, a fusion network turning magnitudes and per-group
//! top-K logits into positive group weights, and the data-aware classifier
//! that rescales each class logit by its group's weight.

mod checkpoint;
mod config;
mod loss;
mod model;
mod train;

pub use checkpoint::{MemCheckpoint, NetRecord};
pub use config::{FusionOutput, MemConfig};
pub use loss::{dac_loss, dac_probs, fusion_features, group_logits, group_side_losses, reo_loss, split_pos_neg, total_loss};
pub use model::{MemModel, MemVars, Objective, Prediction};
pub use train::{train_mem, MemEpochLoss, MemTraining};
