use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{FusionOutput, MemConfig};
use super::loss::reo_loss_graph;
use crate::base::BaseModel;
use crate::dataset::GroupPartition;
use crate::error::TrainError;
use crate::nn::Mlp;
use crate::numeric::{l2_norm, softplus, Graph, Matrix, NumericError, Real, Var};
use crate::seeds;

/// Stage-2 model: group sub-networks, fusion network and the (copied)
/// classifier head, tied to one partition.
#[derive(Clone, Debug, PartialEq)]
pub struct MemModel<T: Real = f64> {
    pub subnets: Vec<Mlp<T>>,
    pub fusion: Mlp<T>,
    pub head: Mlp<T>,
    pub partition: GroupPartition,
    pub config: MemConfig,
}

/// Graph variables of a [`MemModel`], split by component.
#[derive(Clone, Debug)]
pub struct MemVars {
    pub head: Vec<Var>,
    pub subnets: [Vec<Var>; 3],
    pub fusion: Vec<Var>,
}

impl MemVars {
    pub fn all(&self) -> Vec<Var> {
        let mut v = self.head.clone();
        for s in &self.subnets {
            v.extend(s);
        }
        v.extend(&self.fusion);
        v
    }
}

/// Nodes of one stage-2 forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Objective {
    pub logits: Var,
    pub magnitudes: Var,
    pub weights: Var,
    pub scaled_logits: Var,
    pub probs: Var,
    pub reo: Var,
    pub dac: Var,
    pub total: Var,
}

/// Output of [`MemModel::predict`].
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction<T: Real = f64> {
    pub classes: Vec<usize>,
    /// Head logits before group scaling.
    pub logits: Matrix<T>,
    pub scaled_logits: Matrix<T>,
    pub probs: Matrix<T>,
    pub weights: Matrix<T>,
    pub magnitudes: Matrix<T>,
}

impl<T: Real> MemModel<T> {
    /// Fresh sub-networks and fusion network; the head starts as a copy of
    /// the base head.
    pub fn init(base: &BaseModel<T>, partition: &GroupPartition, config: &MemConfig) -> Result<Self, TrainError> {
        config.validate()?;
        partition.validate()?;
        if partition.num_classes() != base.num_classes() {
            return Err(TrainError::Config(format!(
                "partition covers {} classes but the base model has {}",
                partition.num_classes(),
                base.num_classes()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(config.seed, seeds::MEM_INIT));
        let widths = config.subnet_widths(base.repr_dim());
        let subnets = (0..3).map(|_| Mlp::init(&widths, false, &mut rng)).collect();
        let k_eff = effective_k(config.top_k, partition);
        let mut fusion = Mlp::init(&[3 + 3 * k_eff, config.fusion_hidden, 3], false, &mut rng);
        // start from unit weights, i.e. from the base classifier's decisions
        let last = fusion.layers.last_mut().expect("two layers");
        last.weight = Matrix::zeros(config.fusion_hidden, 3);
        let unit = match config.fusion_output {
            FusionOutput::Softplus => T::from_f64((std::f64::consts::E - 1.0).ln()),
            FusionOutput::Linear => T::one(),
        };
        last.bias = Matrix::filled(1, 3, unit);
        Ok(Self {
            subnets,
            fusion,
            head: base.head.clone(),
            partition: partition.clone(),
            config: config.clone(),
        })
    }

    /// `min(K, smallest group size)`.
    pub fn k_eff(&self) -> usize {
        effective_k(self.config.top_k, &self.partition)
    }

    pub fn repr_dim(&self) -> usize {
        self.head.input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.head.output_dim()
    }

    /// Trainable tensors in `head, subnet 1..3, fusion` order.
    pub fn parameters(&self) -> Vec<&Matrix<T>> {
        let mut p = self.head.parameters();
        for s in &self.subnets {
            p.extend(s.parameters());
        }
        p.extend(self.fusion.parameters());
        p
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Matrix<T>> {
        let mut p = self.head.parameters_mut();
        for s in &mut self.subnets {
            p.extend(s.parameters_mut());
        }
        p.extend(self.fusion.parameters_mut());
        p
    }

    pub fn decay_mask(&self) -> Vec<bool> {
        let mut m = self.head.decay_mask();
        for s in &self.subnets {
            m.extend(s.decay_mask());
        }
        m.extend(self.fusion.decay_mask());
        m
    }

    /// Splits a flat variable list laid out like [`Self::parameters`].
    pub fn vars_from(&self, vars: &[Var]) -> MemVars {
        let h = self.head.num_parameters();
        let s = self.subnets[0].num_parameters();
        MemVars {
            head: vars[..h].to_vec(),
            subnets: [
                vars[h..h + s].to_vec(),
                vars[h + s..h + 2 * s].to_vec(),
                vars[h + 2 * s..h + 3 * s].to_vec(),
            ],
            fusion: vars[h + 3 * s..].to_vec(),
        }
    }

    /// Binds all parameters; the head is bound as a constant when frozen.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> MemVars {
        let head_trainable = trainable && !self.config.freeze_head;
        MemVars {
            head: self.head.bind(g, head_trainable),
            subnets: [
                self.subnets[0].bind(g, trainable),
                self.subnets[1].bind(g, trainable),
                self.subnets[2].bind(g, trainable),
            ],
            fusion: self.fusion.bind(g, trainable),
        }
    }

    /// Full stage-2 forward pass on representations `z`: magnitudes feed both
    /// the regularizer and the fusion network through the same nodes.
    pub fn objective(
        &self,
        g: &mut Graph<T>,
        z: Var,
        labels: &[usize],
        vars: &MemVars,
    ) -> Result<Objective, NumericError> {
        let logits = self.head.forward_graph(g, z, &vars.head)?;

        let mut norms = Vec::with_capacity(3);
        for (net, v) in self.subnets.iter().zip(&vars.subnets) {
            let out = net.forward_graph(g, z, v)?;
            norms.push(g.row_norm(out));
        }
        let magnitudes = g.concat_cols(&norms)?;

        let c = &self.config;
        let reo = reo_loss_graph(
            g,
            magnitudes,
            labels,
            &self.partition,
            T::from_f64(c.xi),
            T::from_f64(c.mu),
            T::from_f64(c.lambda),
        )?;

        let k = self.k_eff();
        let mut fusion_in = vec![magnitudes];
        for group in 0..3 {
            let members = g.gather_cols(logits, self.partition.members(group))?;
            fusion_in.push(g.top_k_rows(members, k)?);
        }
        let fusion_in = g.concat_cols(&fusion_in)?;
        let raw = self.fusion.forward_graph(g, fusion_in, &vars.fusion)?;
        let weights = match c.fusion_output {
            FusionOutput::Softplus => g.softplus(raw),
            FusionOutput::Linear => raw,
        };

        let expanded = g.gather_cols(weights, self.partition.group_indices())?;
        let scaled_logits = g.mul(logits, expanded)?;
        let probs = g.softmax_rows(scaled_logits)?;
        let dac = g.nll_mean(probs, labels)?;
        let total = g.add(reo, dac)?;
        Ok(Objective {
            logits,
            magnitudes,
            weights,
            scaled_logits,
            probs,
            reo,
            dac,
            total,
        })
    }

    fn check_repr(&self, z: &Matrix<T>) -> Result<(), NumericError> {
        if z.cols() != self.repr_dim() {
            return Err(NumericError::Shape {
                op: "mem",
                left: z.shape(),
                right: (self.repr_dim(), self.num_classes()),
            });
        }
        Ok(())
    }

    /// Per-sample `[Q1, Q2, Q3]`: smoothed L2 norms of the sub-network outputs.
    pub fn magnitudes(&self, z: &Matrix<T>) -> Result<Matrix<T>, NumericError> {
        self.check_repr(z)?;
        let mut out = Matrix::zeros(z.rows(), 3);
        for (g, net) in self.subnets.iter().enumerate() {
            let h = net.forward(z)?;
            for r in 0..z.rows() {
                out.set(r, g, l2_norm(h.row(r)));
            }
        }
        Ok(out)
    }

    /// Adaptive weights from magnitudes and top-K group logits.
    pub fn fuse(&self, magnitudes: &Matrix<T>, top_logits: &Matrix<T>) -> Result<Matrix<T>, NumericError> {
        let expected = 3 + 3 * self.k_eff();
        if magnitudes.cols() != 3 || magnitudes.cols() + top_logits.cols() != expected || magnitudes.rows() != top_logits.rows() {
            return Err(NumericError::Shape {
                op: "fuse",
                left: magnitudes.shape(),
                right: top_logits.shape(),
            });
        }
        let mut input = Matrix::zeros(magnitudes.rows(), expected);
        for r in 0..magnitudes.rows() {
            let row = input.row_mut(r);
            row[..3].copy_from_slice(magnitudes.row(r));
            row[3..].copy_from_slice(top_logits.row(r));
        }
        let raw = self.fusion.forward(&input)?;
        Ok(match self.config.fusion_output {
            FusionOutput::Softplus => raw.map(softplus),
            FusionOutput::Linear => raw,
        })
    }

    /// Forward pass on representations. Labels are only needed for losses, so
    /// a dummy label vector is used.
    pub fn forward(&self, z: &Matrix<T>) -> Result<Prediction<T>, NumericError> {
        self.check_repr(z)?;
        let mut g = Graph::new();
        let zv = g.constant(z.clone());
        let vars = self.bind(&mut g, false);
        let labels = vec![0; z.rows()];
        let o = self.objective(&mut g, zv, &labels, &vars)?;
        let scaled = g.value(o.scaled_logits).clone();
        Ok(Prediction {
            classes: scaled.argmax_rows(),
            logits: g.value(o.logits).clone(),
            scaled_logits: scaled,
            probs: g.value(o.probs).clone(),
            weights: g.value(o.weights).clone(),
            magnitudes: g.value(o.magnitudes).clone(),
        })
    }

    /// Encodes with the frozen base encoder, then runs the data-aware
    /// classifier. Predictions are the argmax of the scaled logits, which is
    /// the argmax of the probabilities.
    pub fn predict(&self, base: &BaseModel<T>, features: &Matrix<f64>) -> Result<Prediction<T>, NumericError> {
        self.forward(&base.encode(features)?)
    }

    /// Prediction with the adaptive weights replaced by fixed ones.
    pub fn predict_with_weights(
        &self,
        base: &BaseModel<T>,
        features: &Matrix<f64>,
        weights: [T; 3],
    ) -> Result<Vec<usize>, NumericError> {
        let logits = self.head.forward(&base.encode(features)?)?;
        let groups = self.partition.group_indices();
        let mut scaled = logits;
        for r in 0..scaled.rows() {
            for (v, &g) in scaled.row_mut(r).iter_mut().zip(&groups) {
                *v = *v * weights[g];
            }
        }
        Ok(scaled.argmax_rows())
    }
}

fn effective_k(top_k: usize, partition: &GroupPartition) -> usize {
    let smallest = partition.group_sizes().into_iter().min().unwrap_or(0);
    top_k.min(smallest).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::TrainConfig;
    use crate::dataset::Strategy;
    use crate::mem::loss::{dac_probs, fusion_features, reo_loss};
    use crate::nn::Linear;
    use crate::numeric::{argmax, grad_check, softmax};
    use rand::Rng;

    fn small_base(num_classes: usize) -> BaseModel {
        BaseModel::init(
            4,
            num_classes,
            &TrainConfig {
                encoder_hidden: vec![6],
                repr_dim: 5,
                ..TrainConfig::default()
            },
        )
    }

    fn small_config() -> MemConfig {
        MemConfig {
            xi: 3.0,
            mu: 0.5,
            lambda: 0.8,
            top_k: 2,
            subnet_hidden: 6,
            embed_dim: 4,
            fusion_hidden: 5,
            ..MemConfig::default()
        }
    }

    fn partition6() -> GroupPartition {
        GroupPartition::from_groups(vec![1, 2, 3, 1, 2, 3], Strategy::RandomEven, None).unwrap()
    }

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng, scale: f64) -> Matrix {
        Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
    }

    #[test]
    fn k_eff_caps_at_smallest_group() {
        let base = small_base(6);
        let m = MemModel::init(&base, &partition6(), &MemConfig { top_k: 5, ..small_config() }).unwrap();
        assert_eq!(m.k_eff(), 2);
        assert_eq!(m.fusion.input_dim(), 9);
    }

    #[test]
    fn partition_must_match_classes() {
        let base = small_base(5);
        assert!(MemModel::init(&base, &partition6(), &small_config()).is_err());
    }

    #[test]
    fn magnitude_cases() {
        let base = small_base(6);
        let mut m = MemModel::init(&base, &partition6(), &small_config()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = random_matrix(4, 5, &mut rng, 1.0);

        // independent forward: explicit loops over layers and units
        let q = m.magnitudes(&z).unwrap();
        for (g, net) in m.subnets.iter().enumerate() {
            for r in 0..4 {
                let mut h: Vec<f64> = z.row(r).to_vec();
                for (li, layer) in net.layers.iter().enumerate() {
                    let mut next = vec![0.0; layer.output_dim()];
                    for (j, out) in next.iter_mut().enumerate() {
                        let mut s = layer.bias.get(0, j);
                        for (k, &x) in h.iter().enumerate() {
                            s += x * layer.weight.get(k, j);
                        }
                        *out = if li + 1 < net.layers.len() { s.max(0.0) } else { s };
                    }
                    h = next;
                }
                let norm = (h.iter().map(|x| x * x).sum::<f64>() + 1e-12).sqrt();
                assert!((q.get(r, g) - norm).abs() < 1e-12);
            }
        }

        let last = m.subnets[0].layers.len() - 1;
        m.subnets[0].layers[last] = Linear::zeros(6, 4);
        let q = m.magnitudes(&z).unwrap();
        assert!((q.get(0, 0) - 1e-6).abs() < 1e-9);

        m.subnets[1].layers[last].weight = Matrix::zeros(6, 4);
        m.subnets[1].layers[last].bias = Matrix::row_vector(&[3.0, 4.0, 0.0, 0.0]);
        let q = m.magnitudes(&z).unwrap();
        assert!((q.get(2, 1) - 5.0).abs() < 1e-9);
        assert!(q.data().iter().all(|&v| v >= 0.0));
        assert!(m.magnitudes(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn fresh_model_keeps_base_decisions() {
        let base = small_base(6);
        let m = MemModel::init(&base, &partition6(), &small_config()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_matrix(20, 4, &mut rng, 2.0);
        let pred = m.predict(&base, &x).unwrap();
        assert!(pred.weights.data().iter().all(|&w| (w - 1.0).abs() < 1e-12));
        assert_eq!(pred.classes, base.predict(&x).unwrap());
    }

    #[test]
    fn zero_fusion_gives_ln2_weights() {
        let base = small_base(6);
        let mut m = MemModel::init(&base, &partition6(), &small_config()).unwrap();
        for l in &mut m.fusion.layers {
            *l = Linear::zeros(l.input_dim(), l.output_dim());
        }
        let w = m.fuse(&Matrix::filled(2, 3, 7.0), &Matrix::filled(2, 6, -3.0)).unwrap();
        assert!(w.data().iter().all(|&v| (v - std::f64::consts::LN_2).abs() < 1e-15));
        assert!(m.fuse(&Matrix::filled(2, 3, 7.0), &Matrix::filled(2, 5, -3.0)).is_err());
    }

    #[test]
    fn fused_weights_positive() {
        let base = small_base(6);
        let mut m = MemModel::init(&base, &partition6(), &small_config()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        m.fusion = Mlp::init(&[9, 5, 3], false, &mut rng);
        let w = m.fuse(&random_matrix(50, 3, &mut rng, 5000.0), &random_matrix(50, 6, &mut rng, 5000.0)).unwrap();
        assert!(w.data().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn single_hidden_unit_hand_case() {
        // fusion of a 2-wide input (K_eff would need 3 + 3K; use a direct Mlp)
        let mut fusion = Mlp::<f64> {
            layers: vec![Linear::zeros(2, 1), Linear::zeros(1, 3)],
            relu_output: false,
        };
        fusion.layers[0].weight = Matrix::new(2, 1, vec![0.5, -1.0]).unwrap();
        fusion.layers[0].bias = Matrix::scalar(0.25);
        fusion.layers[1].weight = Matrix::row_vector(&[1.0, -2.0, 0.0]);
        fusion.layers[1].bias = Matrix::row_vector(&[0.0, 0.1, -0.3]);
        let x = Matrix::row_vector(&[3.0, 0.5]);
        // hidden = relu(1.5 - 0.5 + 0.25) = 1.25
        let raw = fusion.forward(&x).unwrap();
        let w = raw.map(softplus);
        let expected = [1.25f64, -2.4, -0.3].map(|v| (1.0 + v.exp()).ln());
        for (a, b) in w.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_matches_pure_components() {
        let base = small_base(6);
        let m = MemModel::init(&base, &partition6(), &small_config()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = random_matrix(5, 5, &mut rng, 1.0);
        let out = m.forward(&z).unwrap();
        let logits = m.head.forward(&z).unwrap();
        assert_eq!(out.logits, logits);
        assert_eq!(out.magnitudes, m.magnitudes(&z).unwrap());
        let tops = fusion_features(&logits, &m.partition, m.k_eff()).unwrap();
        let w = m.fuse(&out.magnitudes, &tops).unwrap();
        for (a, b) in w.data().iter().zip(out.weights.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        for r in 0..5 {
            let p = dac_probs(logits.row(r), w.row(r), &m.partition).unwrap();
            for (a, b) in p.iter().zip(out.probs.row(r)) {
                assert!((a - b).abs() < 1e-12);
            }
            assert_eq!(out.classes[r], argmax(&p));
        }
    }

    #[test]
    fn objective_is_sum_of_terms() {
        let base = small_base(6);
        let m = MemModel::init(&base, &partition6(), &small_config()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = random_matrix(7, 5, &mut rng, 1.0);
        let labels = [0, 1, 2, 3, 4, 5, 1];
        let mut g = Graph::new();
        let zv = g.constant(z.clone());
        let vars = m.bind(&mut g, true);
        let o = m.objective(&mut g, zv, &labels, &vars).unwrap();
        let reo = reo_loss(&m.magnitudes(&z).unwrap(), &labels, &m.partition, 3.0, 0.5, 0.8);
        let pred = m.forward(&z).unwrap();
        let dac = crate::mem::dac_loss(&pred.probs, &labels).unwrap();
        assert!((g.value(o.reo).item() - reo).abs() < 1e-12);
        assert!((g.value(o.dac).item() - dac).abs() < 1e-12);
        assert!((g.value(o.total).item() - (reo + dac)).abs() < 1e-12);
    }

    #[test]
    fn full_objective_passes_grad_check() {
        let base = small_base(6);
        let m = MemModel::init(&base, &partition6(), &small_config()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let z = random_matrix(8, 5, &mut rng, 1.5);
        let labels = [0, 1, 2, 3, 4, 5, 0, 2];
        let params: Vec<Matrix> = m.parameters().into_iter().cloned().collect();
        let err = grad_check(
            |g, vars| {
                let zv = g.constant(z.clone());
                let mv = m.vars_from(vars);
                Ok(m.objective(g, zv, &labels, &mv)?.total)
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn unit_weights_reproduce_base_predictions() {
        let base = small_base(6);
        let m = MemModel::init(&base, &partition6(), &small_config()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_matrix(30, 4, &mut rng, 2.0);
        assert_eq!(m.predict_with_weights(&base, &x, [1.0; 3]).unwrap(), base.predict(&x).unwrap());
        assert_eq!(m.predict(&base, &x).unwrap(), m.predict(&base, &x).unwrap());
    }

    #[test]
    fn large_group_weight_flips_cross_group_decision() {
        // classes 0,1,2 in groups 1,2,3; logits [1, 3, 2] -> base predicts 1
        let p = GroupPartition::from_groups(vec![1, 2, 3], Strategy::RandomEven, None).unwrap();
        let logits = [1.0, 3.0, 2.0];
        assert_eq!(argmax(&softmax(&logits).unwrap()), 1);
        // scaled [10, 3, 2] -> class 0
        let probs = dac_probs(&logits, &[10.0, 1.0, 1.0], &p).unwrap();
        assert_eq!(argmax(&probs), 0);
    }
}
