//! Single-file run configuration shared by every command.
//!
//! Precedence, lowest first: built-in defaults, the config file, then
//! command-line flags. The top-level `seed` and `float` govern every stage;
//! the per-section `seed` and `base.float` fields are overwritten with them
//! when the config is resolved, so the echoed `run.json` is self-consistent.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::base::TrainConfig;
use crate::dataset::{LtGenConfig, Strategy, Thresholds};
use crate::mem::MemConfig;
use crate::numeric::FloatWidth;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("{0}")]
    Invalid(String),
}

/// Group partition settings. `many_min` and `few_max` only apply to
/// strategy 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionConfig {
    /// 1 = shot thresholds, 2 = random even split, 3 = even split by count.
    pub strategy: u8,
    /// Smallest training count of a many-shot class.
    pub many_min: usize,
    /// Largest training count of a few-shot class.
    pub few_max: usize,
}

impl Default for PartitionConfig {
    /// Thresholds scaled to the default 30-class synthetic profile so that
    /// each group receives ten classes.
    fn default() -> Self {
        Self {
            strategy: 1,
            many_min: 45,
            few_max: 9,
        }
    }
}

impl PartitionConfig {
    pub fn strategy(&self) -> Result<Strategy, ConfigError> {
        Strategy::from_number(
            self.strategy,
            Thresholds {
                many_min: self.many_min,
                few_max: self.few_max,
            },
        )
        .ok_or_else(|| ConfigError::Invalid(format!("partition strategy must be 1, 2 or 3, got {}", self.strategy)))
    }
}

/// Which per-class scores the oracle-group evaluation restricts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleScores {
    /// Logits of the classifier head before group scaling.
    #[default]
    BaseLogits,
    /// Logits after multiplication by the adaptive group weights.
    ScaledLogits,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub oracle_scores: OracleScores,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub float: FloatWidth,
    /// Output directory for every artifact of the run.
    pub out: PathBuf,
    pub data: LtGenConfig,
    pub partition: PartitionConfig,
    pub base: TrainConfig,
    pub mem: MemConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            float: FloatWidth::F64,
            out: PathBuf::from("run"),
            data: LtGenConfig::default(),
            partition: PartitionConfig::default(),
            base: TrainConfig::default(),
            mem: MemConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads a TOML file, or JSON when the extension is `.json`.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let parse_err = |msg: String| ConfigError::Parse {
            path: path.to_path_buf(),
            msg,
        };
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))
        } else {
            toml::from_str(&text).map_err(|e| parse_err(e.to_string()))
        }
    }

    /// Copies the run seed and float width into every section and checks
    /// the sections.
    pub fn resolve(mut self) -> Result<Self, ConfigError> {
        self.data.seed = self.seed;
        self.base.seed = self.seed;
        self.mem.seed = self.seed;
        self.base.float = self.float;
        self.partition.strategy()?;
        self.base.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.mem.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}
