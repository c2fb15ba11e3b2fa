use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::MemConfig;
use super::model::MemModel;
use crate::base::BaseModel;
use crate::dataset::{batch_iter, Dataset, GroupPartition};
use crate::error::TrainError;
use crate::numeric::{AdamW, AdamWConfig, Graph, Matrix, Real};
use crate::seeds;

/// Sample-weighted mean losses of one stage-2 epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemEpochLoss {
    pub total: f64,
    pub reo: f64,
    pub dac: f64,
}

#[derive(Clone, Debug)]
pub struct MemTraining<T: Real = f64> {
    pub model: MemModel<T>,
    pub epoch_losses: Vec<MemEpochLoss>,
}

impl MemConfig {
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

/// Draws `n` indices by picking a class uniformly, then a sample of that
/// class uniformly, and chunks them into batches.
fn balanced_batches(labels: &[usize], num_classes: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &c) in labels.iter().enumerate() {
        by_class[c].push(i);
    }
    let present: Vec<&Vec<usize>> = by_class.iter().filter(|v| !v.is_empty()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch);
    let draws: Vec<usize> = (0..labels.len())
        .map(|_| {
            let class = present[rng.random_range(0..present.len())];
            class[rng.random_range(0..class.len())]
        })
        .collect();
    draws.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Stage 2: the encoder stays fixed, so representations are computed once;
/// the sub-networks, fusion network and (unless frozen) the head are trained
/// on the combined regularizer and data-aware classification loss.
pub fn train_mem<T: Real>(
    base: &BaseModel<T>,
    train: &Dataset,
    partition: &GroupPartition,
    config: &MemConfig,
) -> Result<MemTraining<T>, TrainError> {
    let mut model = MemModel::init(base, partition, config)?;
    if train.is_empty() {
        return Err(TrainError::Config("training set is empty".into()));
    }
    if train.num_classes() != partition.num_classes() {
        return Err(TrainError::Config(format!(
            "dataset has {} classes but the partition covers {}",
            train.num_classes(),
            partition.num_classes()
        )));
    }
    let z = base.encode(&train.features)?;
    let mut opt = AdamW::<T>::new(config.optimizer());
    let decay = model.decay_mask();
    let shuffle_seed = seeds::derive(config.seed, seeds::MEM_SHUFFLE);
    let steps_per_epoch = train.len().div_ceil(config.batch_size);
    let total_steps = (steps_per_epoch * config.epochs).max(1);
    let head_params = model.head.num_parameters();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let batches = if config.balanced_sampling {
            balanced_batches(&train.labels, train.num_classes(), config.batch_size, shuffle_seed, epoch as u64)
        } else {
            batch_iter(train.len(), config.batch_size, shuffle_seed, epoch as u64)
        };
        let mut sums = MemEpochLoss { total: 0.0, reo: 0.0, dac: 0.0 };
        for (step, batch) in batches.iter().enumerate() {
            let labels: Vec<usize> = batch.iter().map(|&i| train.labels[i]).collect();
            let mut g = Graph::new();
            let zv = g.constant(z.select_rows(batch));
            let vars = model.bind(&mut g, true);
            let o = model.objective(&mut g, zv, &labels, &vars)?;
            let total = g.value(o.total).item().as_f64();
            if !total.is_finite() {
                return Err(TrainError::Divergence { stage: "mem", epoch, step });
            }
            let n = batch.len() as f64;
            sums.total += total * n;
            sums.reo += g.value(o.reo).item().as_f64() * n;
            sums.dac += g.value(o.dac).item().as_f64() * n;

            let grads = g.backward(o.total)?;
            let all_vars = vars.all();
            let mut params = model.parameters_mut();
            let mut grads: Vec<Matrix<T>> = all_vars
                .iter()
                .zip(params.iter())
                .map(|(&v, p)| grads.get_or_zeros(v, p.shape()))
                .collect();
            let fraction = (epoch * steps_per_epoch + step) as f64 / total_steps as f64;
            if config.freeze_head {
                // skip the head entirely so weight decay leaves it untouched
                let mut rest: Vec<&mut Matrix<T>> = params.drain(head_params..).collect();
                let rest_grads = grads.split_off(head_params);
                opt.step(&mut rest, &rest_grads, &decay[head_params..], fraction)?;
            } else {
                opt.step(&mut params, &grads, &decay, fraction)?;
            }
        }
        let n = batches.iter().map(Vec::len).sum::<usize>() as f64;
        epoch_losses.push(MemEpochLoss {
            total: sums.total / n,
            reo: sums.reo / n,
            dac: sums.dac / n,
        });
    }
    Ok(MemTraining { model, epoch_losses })
}
