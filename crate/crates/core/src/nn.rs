//! Affine layers and small ReLU networks shared by the encoder, head,
//! group sub-networks and fusion module.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::TrainError;
use crate::numeric::{Graph, Matrix, NumericError, Real, Var};

/// `x -> x W + b` with `W` stored `in x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T: Real = f64> {
    pub weight: Matrix<T>,
    pub bias: Matrix<T>,
}

impl<T: Real> Linear<T> {
    /// He-normal weights, zero bias.
    pub fn init<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        let std = (2.0 / input.max(1) as f64).sqrt();
        let data = (0..input * output)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::from_f64(std * z)
            })
            .collect();
        Self {
            weight: Matrix::new(input, output, data).expect("weight shape"),
            bias: Matrix::zeros(1, output),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(input, output),
            bias: Matrix::zeros(1, output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>, NumericError> {
        x.matmul(&self.weight)?.add_row(&self.bias)
    }
}

/// Serialized layer: `rows x cols` row-major weights plus a bias of length `cols`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRecord {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// Stack of affine layers with ReLU between them, and optionally after the
/// last one.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T: Real = f64> {
    pub layers: Vec<Linear<T>>,
    pub relu_output: bool,
}

impl<T: Real> Mlp<T> {
    /// `widths = [input, hidden.., output]`.
    pub fn init<R: Rng>(widths: &[usize], relu_output: bool, rng: &mut R) -> Self {
        let layers = widths.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect();
        Self { layers, relu_output }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, Linear::input_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::output_dim)
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>, NumericError> {
        let mut h = x.clone();
        let last = self.layers.len().saturating_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if i < last || self.relu_output {
                h = h.relu();
            }
        }
        Ok(h)
    }

    /// Puts every parameter on the graph, `[w0, b0, w1, b1, ..]`.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.parameters()
            .into_iter()
            .map(|p| if trainable { g.param(p.clone()) } else { g.constant(p.clone()) })
            .collect()
    }

    pub fn forward_graph(&self, g: &mut Graph<T>, x: Var, vars: &[Var]) -> Result<Var, NumericError> {
        debug_assert_eq!(vars.len(), self.num_parameters());
        let mut h = x;
        let last = self.layers.len().saturating_sub(1);
        for (i, wb) in vars.chunks(2).enumerate() {
            h = g.matmul(h, wb[0])?;
            h = g.add_row(h, wb[1])?;
            if i < last || self.relu_output {
                h = g.relu(h);
            }
        }
        Ok(h)
    }

    pub fn num_parameters(&self) -> usize {
        2 * self.layers.len()
    }

    pub fn parameters(&self) -> Vec<&Matrix<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Matrix<T>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }

    /// Weight decay applies to weights, not biases.
    pub fn decay_mask(&self) -> Vec<bool> {
        self.layers.iter().flat_map(|_| [true, false]).collect()
    }

    pub fn to_records(&self) -> Vec<LayerRecord> {
        self.layers
            .iter()
            .map(|l| LayerRecord {
                rows: l.input_dim(),
                cols: l.output_dim(),
                w: l.weight.data().iter().map(|v| v.as_f64()).collect(),
                b: l.bias.data().iter().map(|v| v.as_f64()).collect(),
            })
            .collect()
    }

    /// Rebuilds a network, checking that layer shapes chain.
    pub fn from_records(records: &[LayerRecord], relu_output: bool) -> Result<Self, TrainError> {
        let mut layers = Vec::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if i > 0 && records[i - 1].cols != r.rows {
                return Err(TrainError::Checkpoint(format!(
                    "layer {i} expects {} inputs but previous layer has {} outputs",
                    r.rows,
                    records[i - 1].cols
                )));
            }
            if r.b.len() != r.cols {
                return Err(TrainError::Checkpoint(format!(
                    "layer {i} bias has {} entries, expected {}",
                    r.b.len(),
                    r.cols
                )));
            }
            let cast = |v: &[f64]| v.iter().map(|&x| T::from_f64(x)).collect::<Vec<T>>();
            let weight = Matrix::new(r.rows, r.cols, cast(&r.w)).map_err(|e| TrainError::Checkpoint(format!("layer {i}: {e}")))?;
            let bias = Matrix::new(1, r.cols, cast(&r.b))?;
            layers.push(Linear { weight, bias });
        }
        if layers.is_empty() {
            return Err(TrainError::Checkpoint("network has no layers".into()));
        }
        Ok(Self { layers, relu_output })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn graph_and_direct_forward_agree_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Mlp::<f64>::init(&[4, 6, 3], false, &mut rng);
        let x = Matrix::new(2, 4, vec![0.1, -0.3, 0.8, 1.2, -1.0, 0.4, 0.0, 2.0]).unwrap();
        let direct = net.forward(&x).unwrap();
        let mut g = Graph::new();
        let xv = g.constant(x);
        let vars = net.bind(&mut g, true);
        let out = net.forward_graph(&mut g, xv, &vars).unwrap();
        assert_eq!(g.value(out), &direct);
    }

    #[test]
    fn record_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::<f64>::init(&[3, 5, 2], true, &mut rng);
        let back = Mlp::<f64>::from_records(&net.to_records(), true).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn broken_chain_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut records = Mlp::<f64>::init(&[3, 5, 2], true, &mut rng).to_records();
        records[1].rows = 4;
        records[1].w.truncate(8);
        assert!(Mlp::<f64>::from_records(&records, true).is_err());
    }
}
