//! Stage 1: encoder plus linear head trained with plain cross-entropy on
//! instance-sampled mini-batches.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{batch_iter, Dataset};
use crate::error::TrainError;
use crate::nn::{LayerRecord, Mlp};
use crate::numeric::{AdamW, AdamWConfig, FloatWidth, Graph, Matrix, NumericError, Real};
use crate::seeds;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_epochs: f64,
    pub weight_decay: f64,
    /// Hidden widths of the encoder.
    pub encoder_hidden: Vec<usize>,
    /// Width of the representation `z`.
    pub repr_dim: usize,
    pub seed: u64,
    pub float: FloatWidth,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            learning_rate: 2e-3,
            warmup_epochs: 5.0,
            weight_decay: 0.05,
            encoder_hidden: vec![64, 64],
            repr_dim: 32,
            seed: 7,
            float: FloatWidth::F64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 || self.repr_dim == 0 || self.encoder_hidden.contains(&0) {
            return Err(TrainError::Config("batch_size, repr_dim and hidden widths must be positive".into()));
        }
        if self.epochs > 0 && self.warmup_epochs > self.epochs as f64 {
            return Err(TrainError::Config(format!(
                "warmup_epochs {} exceeds epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) || !(self.warmup_epochs >= 0.0) {
            return Err(TrainError::Config("learning_rate, weight_decay and warmup_epochs must be >= 0".into()));
        }
        Ok(())
    }

    pub(crate) fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            warmup_epochs: self.warmup_epochs,
            total_epochs: self.epochs as f64,
            ..AdamWConfig::default()
        }
    }
}

/// Encoder `F` (ReLU after every layer) and the linear classifier head.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseModel<T: Real = f64> {
    pub encoder: Mlp<T>,
    pub head: Mlp<T>,
}

impl<T: Real> BaseModel<T> {
    pub fn init(input_dim: usize, num_classes: usize, config: &TrainConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(config.seed, seeds::BASE_INIT));
        let mut widths = vec![input_dim];
        widths.extend(&config.encoder_hidden);
        widths.push(config.repr_dim);
        let encoder = Mlp::init(&widths, true, &mut rng);
        let head = Mlp::init(&[config.repr_dim, num_classes], false, &mut rng);
        Self { encoder, head }
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn repr_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.head.output_dim()
    }

    /// `z = F(x)` for every row of `features`.
    pub fn encode(&self, features: &Matrix<f64>) -> Result<Matrix<T>, NumericError> {
        if features.cols() != self.input_dim() {
            return Err(NumericError::Shape {
                op: "encode",
                left: features.shape(),
                right: (self.input_dim(), self.repr_dim()),
            });
        }
        self.encoder.forward(&features.cast())
    }

    pub fn logits(&self, z: &Matrix<T>) -> Result<Matrix<T>, NumericError> {
        if z.cols() != self.repr_dim() {
            return Err(NumericError::Shape {
                op: "logits",
                left: z.shape(),
                right: (self.repr_dim(), self.num_classes()),
            });
        }
        self.head.forward(z)
    }

    pub fn predict(&self, features: &Matrix<f64>) -> Result<Vec<usize>, NumericError> {
        Ok(self.logits(&self.encode(features)?)?.argmax_rows())
    }

    fn parameters_mut(&mut self) -> Vec<&mut Matrix<T>> {
        let mut p = self.encoder.parameters_mut();
        p.extend(self.head.parameters_mut());
        p
    }

    fn decay_mask(&self) -> Vec<bool> {
        let mut m = self.encoder.decay_mask();
        m.extend(self.head.decay_mask());
        m
    }

    /// Mean cross-entropy of the batch as a graph, returning the loss node
    /// and the parameter variables in `encoder, head` order.
    pub fn loss_graph(
        &self,
        g: &mut Graph<T>,
        features: &Matrix<f64>,
        labels: &[usize],
    ) -> Result<(crate::numeric::Var, Vec<crate::numeric::Var>), NumericError> {
        let x = g.constant(features.cast());
        let mut vars = self.encoder.bind(g, true);
        let head_vars = self.head.bind(g, true);
        let z = self.encoder.forward_graph(g, x, &vars)?;
        let logits = self.head.forward_graph(g, z, &head_vars)?;
        let probs = g.softmax_rows(logits)?;
        let loss = g.nll_mean(probs, labels)?;
        vars.extend(head_vars);
        Ok((loss, vars))
    }
}

/// Trained model and its per-epoch mean training loss.
#[derive(Clone, Debug)]
pub struct BaseTraining<T: Real = f64> {
    pub model: BaseModel<T>,
    pub epoch_losses: Vec<f64>,
}

pub fn train_base<T: Real>(train: &Dataset, config: &TrainConfig) -> Result<BaseTraining<T>, TrainError> {
    config.validate()?;
    if train.is_empty() {
        return Err(TrainError::Config("training set is empty".into()));
    }
    if train.num_classes() < 2 {
        return Err(TrainError::Config("need at least 2 classes".into()));
    }
    let mut model = BaseModel::<T>::init(train.feature_dim(), train.num_classes(), config);
    let mut opt = AdamW::<T>::new(config.optimizer());
    let decay = model.decay_mask();
    let shuffle_seed = seeds::derive(config.seed, seeds::BASE_SHUFFLE);
    let steps_per_epoch = train.len().div_ceil(config.batch_size);
    let total_steps = (steps_per_epoch * config.epochs).max(1);
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut weighted = 0.0;
        for (step, batch) in batch_iter(train.len(), config.batch_size, shuffle_seed, epoch as u64)
            .iter()
            .enumerate()
        {
            let features = train.features.select_rows(batch);
            let labels: Vec<usize> = batch.iter().map(|&i| train.labels[i]).collect();
            let mut g = Graph::new();
            let (loss, vars) = model.loss_graph(&mut g, &features, &labels)?;
            let value = g.value(loss).item().as_f64();
            if !value.is_finite() {
                return Err(TrainError::Divergence {
                    stage: "base",
                    epoch,
                    step,
                });
            }
            weighted += value * batch.len() as f64;
            let grads = g.backward(loss)?;
            let mut params = model.parameters_mut();
            let grads: Vec<Matrix<T>> = vars
                .iter()
                .zip(params.iter())
                .map(|(&v, p)| grads.get_or_zeros(v, p.shape()))
                .collect();
            let fraction = (epoch * steps_per_epoch + step) as f64 / total_steps as f64;
            opt.step(&mut params, &grads, &decay, fraction)?;
        }
        epoch_losses.push(weighted / train.len() as f64);
    }
    Ok(BaseTraining { model, epoch_losses })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseDims {
    pub input: usize,
    pub repr: usize,
    pub classes: usize,
    pub hidden: Vec<usize>,
}

/// On-disk form of a [`BaseModel`]: encoder layers followed by the head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseCheckpoint {
    pub version: u32,
    pub kind: String,
    pub dims: BaseDims,
    pub layers: Vec<LayerRecord>,
    pub config: TrainConfig,
    pub seed: u64,
}

impl BaseCheckpoint {
    pub fn from_model<T: Real>(model: &BaseModel<T>, config: &TrainConfig) -> Self {
        let mut layers = model.encoder.to_records();
        layers.extend(model.head.to_records());
        Self {
            version: CHECKPOINT_VERSION,
            kind: "base".into(),
            dims: BaseDims {
                input: model.input_dim(),
                repr: model.repr_dim(),
                classes: model.num_classes(),
                hidden: model.encoder.layers[..model.encoder.layers.len() - 1]
                    .iter()
                    .map(|l| l.output_dim())
                    .collect(),
            },
            layers,
            config: config.clone(),
            seed: config.seed,
        }
    }

    pub fn to_model<T: Real>(&self) -> Result<BaseModel<T>, TrainError> {
        if self.version != CHECKPOINT_VERSION || self.kind != "base" {
            return Err(TrainError::Checkpoint(format!(
                "expected base checkpoint version {CHECKPOINT_VERSION}, found kind `{}` version {}",
                self.kind, self.version
            )));
        }
        let n = self.layers.len();
        if n < 2 {
            return Err(TrainError::Checkpoint("base checkpoint needs encoder and head layers".into()));
        }
        let encoder = Mlp::from_records(&self.layers[..n - 1], true)?;
        let head = Mlp::from_records(&self.layers[n - 1..], false)?;
        let model = BaseModel { encoder, head };
        if model.input_dim() != self.dims.input
            || model.repr_dim() != self.dims.repr
            || model.num_classes() != self.dims.classes
            || model.head.input_dim() != model.repr_dim()
        {
            return Err(TrainError::Checkpoint("layer shapes disagree with recorded dims".into()));
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
