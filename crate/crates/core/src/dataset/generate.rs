use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, Split};
use crate::numeric::Matrix;

/// Synthetic long-tailed Gaussian-cluster generator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LtGenConfig {
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Training samples of the largest class.
    pub max_count: usize,
    /// Ratio of largest to smallest class count.
    pub imbalance_factor: f64,
    /// Per-dimension standard deviation of every cluster.
    pub cluster_std: f64,
    /// Per-dimension standard deviation of the class means.
    pub class_separation: f64,
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for LtGenConfig {
    fn default() -> Self {
        Self {
            num_classes: 30,
            feature_dim: 16,
            max_count: 200,
            imbalance_factor: 100.0,
            cluster_std: 1.0,
            class_separation: 1.0,
            test_per_class: 50,
            seed: 7,
        }
    }
}

/// Exponential profile `round(n_max * rho^(-c / (m - 1)))`.
pub fn long_tail_counts(num_classes: usize, max_count: usize, imbalance_factor: f64) -> Result<Vec<usize>, DataError> {
    if num_classes < 2 {
        return Err(DataError::Config(format!("need at least 2 classes, got {num_classes}")));
    }
    if !(imbalance_factor >= 1.0) || !imbalance_factor.is_finite() {
        return Err(DataError::Config(format!(
            "imbalance factor must be finite and >= 1, got {imbalance_factor}"
        )));
    }
    let counts: Vec<usize> = (0..num_classes)
        .map(|c| {
            let exponent = -(c as f64) / (num_classes - 1) as f64;
            (max_count as f64 * imbalance_factor.powf(exponent)).round() as usize
        })
        .collect();
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(DataError::Config(format!(
            "class {c} would receive 0 training samples (max_count {max_count}, imbalance {imbalance_factor})"
        )));
    }
    Ok(counts)
}

impl LtGenConfig {
    fn validate(&self) -> Result<(), DataError> {
        if self.num_classes < 3 {
            return Err(DataError::Config(format!(
                "need at least 3 classes for three groups, got {}",
                self.num_classes
            )));
        }
        if self.feature_dim == 0 || self.max_count == 0 || self.test_per_class == 0 {
            return Err(DataError::Config(
                "feature_dim, max_count and test_per_class must be positive".into(),
            ));
        }
        if !(self.cluster_std > 0.0) || !(self.class_separation > 0.0) {
            return Err(DataError::Config("cluster_std and class_separation must be positive".into()));
        }
        Ok(())
    }
}

/// Draws a long-tailed training set and a class-balanced test set from
/// isotropic Gaussian clusters whose means are fixed by the seed.
pub fn generate_lt(config: &LtGenConfig) -> Result<(Dataset, Dataset), DataError> {
    config.validate()?;
    let counts = long_tail_counts(config.num_classes, config.max_count, config.imbalance_factor)?;
    let (m, d) = (config.num_classes, config.feature_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let means: Vec<f64> = (0..m * d)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            config.class_separation * z
        })
        .collect();

    let mut draw = |per_class: &dyn Fn(usize) -> usize, split: Split| -> Result<Dataset, DataError> {
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for c in 0..m {
            for _ in 0..per_class(c) {
                for j in 0..d {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    data.push(means[c * d + j] + config.cluster_std * z);
                }
                labels.push(c);
            }
        }
        let features = Matrix::new(labels.len(), d, data).map_err(|e| DataError::Config(e.to_string()))?;
        Dataset::new(features, labels, m, split)
    };

    let train = draw(&|c| counts[c], Split::Train)?;
    let test = draw(&|_| config.test_per_class, Split::Test)?;
    Ok((train, test))
}
