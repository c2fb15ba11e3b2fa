use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::MemConfig;
use super::model::MemModel;
use crate::dataset::GroupPartition;
use crate::error::TrainError;
use crate::nn::{LayerRecord, Mlp};
use crate::numeric::Real;

const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetRecord {
    pub layers: Vec<LayerRecord>,
}

/// On-disk form of a [`MemModel`]. The encoder is not stored here; it comes
/// from the base checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemCheckpoint {
    pub version: u32,
    pub kind: String,
    pub partition: GroupPartition,
    pub config: MemConfig,
    pub subnets: Vec<NetRecord>,
    pub fusion: NetRecord,
    pub head: NetRecord,
}

impl MemCheckpoint {
    pub fn from_model<T: Real>(model: &MemModel<T>) -> Self {
        Self {
            version: VERSION,
            kind: "mem".into(),
            partition: model.partition.clone(),
            config: model.config.clone(),
            subnets: model
                .subnets
                .iter()
                .map(|s| NetRecord { layers: s.to_records() })
                .collect(),
            fusion: NetRecord {
                layers: model.fusion.to_records(),
            },
            head: NetRecord {
                layers: model.head.to_records(),
            },
        }
    }

    pub fn to_model<T: Real>(&self) -> Result<MemModel<T>, TrainError> {
        if self.version != VERSION || self.kind != "mem" {
            return Err(TrainError::Checkpoint(format!(
                "expected mem checkpoint version {VERSION}, found kind `{}` version {}",
                self.kind, self.version
            )));
        }
        if self.subnets.len() != 3 {
            return Err(TrainError::Checkpoint(format!("expected 3 sub-networks, found {}", self.subnets.len())));
        }
        self.partition.validate()?;
        self.config.validate()?;
        let subnets = self
            .subnets
            .iter()
            .map(|s| Mlp::from_records(&s.layers, false))
            .collect::<Result<Vec<_>, _>>()?;
        let model = MemModel {
            subnets,
            fusion: Mlp::from_records(&self.fusion.layers, false)?,
            head: Mlp::from_records(&self.head.layers, false)?,
            partition: self.partition.clone(),
            config: self.config.clone(),
        };
        let repr = model.head.input_dim();
        let shapes_ok = model.subnets.iter().all(|s| s.input_dim() == repr)
            && model.head.output_dim() == model.partition.num_classes()
            && model.fusion.input_dim() == 3 + 3 * model.k_eff()
            && model.fusion.output_dim() == 3;
        if !shapes_ok {
            return Err(TrainError::Checkpoint("mem checkpoint layer shapes are inconsistent".into()));
        }
        Ok(model)
    }

    pub fn read(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TrainError::Checkpoint(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| TrainError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes") + "\n"
    }
}
