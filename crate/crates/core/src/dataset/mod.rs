//! Long-tailed feature datasets, CSV/manifest I/O, group partitions and
//! mini-batch shuffling.

mod batch;
mod generate;
mod io;
mod partition;

pub use batch::batch_iter;
pub use generate::{generate_lt, long_tail_counts, LtGenConfig};
pub use io::{load_csv, load_csv_with_classes, write_csv, DatasetManifest, MANIFEST_VERSION};
pub use partition::{group_sizes_even, partition_groups, GroupPartition, Strategy, Thresholds, GROUP_NAMES};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::Matrix;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid dataset config: {0}")]
    Config(String),
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{path}: no samples")]
    Empty { path: PathBuf },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Manifest { path: PathBuf, msg: String },
    #[error("partition: {0}")]
    Partition(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Features, labels and per-class counts.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Matrix<f64>,
    pub labels: Vec<usize>,
    pub class_counts: Vec<usize>,
    pub split: Split,
}

impl Dataset {
    /// Builds a dataset, deriving class counts from the labels.
    pub fn new(features: Matrix<f64>, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self, DataError> {
        if features.rows() != labels.len() {
            return Err(DataError::Config(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        let mut class_counts = vec![0; num_classes];
        for &l in &labels {
            let slot = class_counts
                .get_mut(l)
                .ok_or_else(|| DataError::Config(format!("label {l} outside 0..{num_classes}")))?;
            *slot += 1;
        }
        Ok(Self {
            features,
            labels,
            class_counts,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_counts.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Sub-dataset restricted to the given rows.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let labels: Vec<usize> = indices.iter().map(|&i| self.labels[i]).collect();
        let mut class_counts = vec![0; self.num_classes()];
        for &l in &labels {
            class_counts[l] += 1;
        }
        Self {
            features: self.features.select_rows(indices),
            labels,
            class_counts,
            split: self.split,
        }
    }
}
