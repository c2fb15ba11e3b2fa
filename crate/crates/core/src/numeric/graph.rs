use super::ops::{softmax_unchecked, top_k};
use super::{Matrix, NumericError, Real, EPS_LOG};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Softplus(Var),
    RowNorm(Var),
    /// `max(t - a, 0)^2` when `above`, else `max(a - t, 0)^2`.
    HingeSq { input: Var, threshold: T, above: bool },
    /// `sum_i w_i a_i / sum_i w_i`, zero when the weights sum to zero.
    WeightedMean { input: Var, weights: Vec<T>, total: T },
    GatherCols { input: Var, cols: Vec<usize> },
    /// Row-wise top-k; `picked[r * k + j]` is the source column of output `(r, j)`.
    TopKRows { input: Var, picked: Vec<usize> },
    ConcatCols(Vec<Var>),
    SoftmaxRows(Var),
    NllMean { probs: Var, labels: Vec<usize> },
}

struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Define-by-run tape. Nodes are appended in evaluation order, so index order
/// is a topological order and the reverse sweep is a single backward scan.
pub struct Graph<T: Real = f64> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// Adds a `1 x c` row to every row of an `n x c` input.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, NumericError> {
        let value = self.value(a).add_row(self.value(bias))?;
        let rg = self.needs(&[a, bias]);
        Ok(self.push(value, Op::AddRow(a, bias), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let value = self.value(a).hadamard(self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let value = self.value(a).scale(factor);
        let rg = self.needs(&[a]);
        self.push(value, Op::Scale(a, factor), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).relu();
        let rg = self.needs(&[a]);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(super::softplus);
        let rg = self.needs(&[a]);
        self.push(value, Op::Softplus(a), rg)
    }

    /// Smoothed L2 norm of every row: `n x c -> n x 1`.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let input = self.value(a);
        let data = (0..input.rows()).map(|r| super::l2_norm(input.row(r))).collect();
        let value = Matrix::new(input.rows(), 1, data).expect("row count");
        let rg = self.needs(&[a]);
        self.push(value, Op::RowNorm(a), rg)
    }

    /// Squared hinge pushing entries above (`above = true`) or below `threshold`.
    pub fn hinge_sq(&mut self, a: Var, threshold: T, above: bool) -> Var {
        let value = self.value(a).map(|x| {
            let gap = if above { threshold - x } else { x - threshold };
            let gap = gap.max(T::zero());
            gap * gap
        });
        let rg = self.needs(&[a]);
        self.push(
            value,
            Op::HingeSq {
                input: a,
                threshold,
                above,
            },
            rg,
        )
    }

    /// Weighted mean over all entries, producing a `1 x 1` node. A zero total
    /// weight yields `0` and no gradient.
    pub fn weighted_mean(&mut self, a: Var, weights: Vec<T>) -> Result<Var, NumericError> {
        let input = self.value(a);
        if weights.len() != input.data().len() {
            return Err(NumericError::Shape {
                op: "weighted_mean",
                left: input.shape(),
                right: (weights.len(), 1),
            });
        }
        let total: T = weights.iter().copied().sum();
        let mean = if total == T::zero() {
            T::zero()
        } else {
            input.data().iter().zip(&weights).map(|(&x, &w)| x * w).sum::<T>() / total
        };
        let rg = self.needs(&[a]);
        Ok(self.push(
            Matrix::scalar(mean),
            Op::WeightedMean {
                input: a,
                weights,
                total,
            },
            rg,
        ))
    }

    pub fn gather_cols(&mut self, a: Var, cols: Vec<usize>) -> Result<Var, NumericError> {
        let input = self.value(a);
        if let Some(&bad) = cols.iter().find(|&&c| c >= input.cols()) {
            return Err(NumericError::Argument(format!(
                "gather_cols: column {bad} out of range for {} columns",
                input.cols()
            )));
        }
        let value = input.select_cols(&cols);
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::GatherCols { input: a, cols }, rg))
    }

    /// Per-row top-k values in descending order. The gradient is routed only
    /// to the selected entries.
    pub fn top_k_rows(&mut self, a: Var, k: usize) -> Result<Var, NumericError> {
        let input = self.value(a);
        let mut data = Vec::with_capacity(input.rows() * k);
        let mut picked = Vec::with_capacity(input.rows() * k);
        for r in 0..input.rows() {
            let (vals, idx) = top_k(input.row(r), k)?;
            data.extend(vals);
            picked.extend(idx);
        }
        let value = Matrix::new(input.rows(), k, data)?;
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::TopKRows { input: a, picked }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericError> {
        let rows = parts.first().map_or(0, |&p| self.value(p).rows());
        let mut cols = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(NumericError::Shape {
                    op: "concat_cols",
                    left: (rows, cols),
                    right: v.shape(),
                });
            }
            cols += v.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Matrix::new(rows, cols, data)?;
        let rg = self.needs(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, NumericError> {
        let input = self.value(a);
        if !input.is_finite() {
            return Err(NumericError::NonFinite { op: "softmax" });
        }
        let mut value = Matrix::zeros(input.rows(), input.cols());
        for r in 0..input.rows() {
            value.row_mut(r).copy_from_slice(&softmax_unchecked(input.row(r)));
        }
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::SoftmaxRows(a), rg))
    }

    /// Mean of `-ln(p[label] + EPS_LOG)` over rows.
    pub fn nll_mean(&mut self, probs: Var, labels: &[usize]) -> Result<Var, NumericError> {
        let p = self.value(probs);
        if labels.len() != p.rows() {
            return Err(NumericError::Shape {
                op: "nll_mean",
                left: p.shape(),
                right: (labels.len(), 1),
            });
        }
        let mut total = T::zero();
        for (r, &c) in labels.iter().enumerate() {
            total = total + super::cross_entropy(p.row(r), c)?;
        }
        let n = T::from_f64(labels.len().max(1) as f64);
        let rg = self.needs(&[probs]);
        Ok(self.push(
            Matrix::scalar(total / n),
            Op::NllMean {
                probs,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse sweep from a `1 x 1` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, NumericError> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(NumericError::Shape {
                op: "backward",
                left: shape,
                right: (1, 1),
            });
        }
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Matrix<T>>], target: Var, delta: Matrix<T>) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        match &mut grads[target.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, node: &Node<T>, g: &Matrix<T>, grads: &mut [Option<Matrix<T>>]) -> Result<(), NumericError> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.nodes[a.0].requires_grad {
                    let da = g.matmul(&self.value(*b).transpose())?;
                    self.accumulate(grads, *a, da);
                }
                if self.nodes[b.0].requires_grad {
                    let db = self.value(*a).transpose().matmul(g)?;
                    self.accumulate(grads, *b, db);
                }
            }
            Op::AddRow(a, bias) => {
                self.accumulate(grads, *a, g.clone());
                if self.nodes[bias.0].requires_grad {
                    let mut db = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, &x) in db.data_mut().iter_mut().zip(g.row(r)) {
                            *d = *d + x;
                        }
                    }
                    self.accumulate(grads, *bias, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Mul(a, b) => {
                if self.nodes[a.0].requires_grad {
                    self.accumulate(grads, *a, g.hadamard(self.value(*b))?);
                }
                if self.nodes[b.0].requires_grad {
                    self.accumulate(grads, *b, g.hadamard(self.value(*a))?);
                }
            }
            Op::Scale(a, factor) => self.accumulate(grads, *a, g.scale(*factor)),
            Op::Relu(a) => {
                let d = g.zip_with(self.value(*a), "relu", |gv, x| if x > T::zero() { gv } else { T::zero() })?;
                self.accumulate(grads, *a, d);
            }
            Op::Softplus(a) => {
                let d = g.zip_with(self.value(*a), "softplus", |gv, x| gv / (T::one() + (-x).exp()))?;
                self.accumulate(grads, *a, d);
            }
            Op::RowNorm(a) => {
                let input = self.value(*a);
                let mut d = Matrix::zeros(input.rows(), input.cols());
                for r in 0..input.rows() {
                    let gr = g.get(r, 0);
                    let n = node.value.get(r, 0);
                    for (o, &x) in d.row_mut(r).iter_mut().zip(input.row(r)) {
                        *o = gr * x / n;
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::HingeSq {
                input,
                threshold,
                above,
            } => {
                let two = T::from_f64(2.0);
                let d = g.zip_with(self.value(*input), "hinge_sq", |gv, x| {
                    if *above {
                        let gap = *threshold - x;
                        if gap > T::zero() {
                            -two * gap * gv
                        } else {
                            T::zero()
                        }
                    } else {
                        let gap = x - *threshold;
                        if gap > T::zero() {
                            two * gap * gv
                        } else {
                            T::zero()
                        }
                    }
                })?;
                self.accumulate(grads, *input, d);
            }
            Op::WeightedMean { input, weights, total } => {
                if *total != T::zero() {
                    let scale = g.item() / *total;
                    let src = self.value(*input);
                    let data = weights.iter().map(|&w| w * scale).collect();
                    self.accumulate(grads, *input, Matrix::new(src.rows(), src.cols(), data)?);
                }
            }
            Op::GatherCols { input, cols } => {
                let src = self.value(*input);
                let mut d = Matrix::zeros(src.rows(), src.cols());
                for r in 0..g.rows() {
                    let row = d.row_mut(r);
                    for (j, &c) in cols.iter().enumerate() {
                        row[c] = row[c] + g.get(r, j);
                    }
                }
                self.accumulate(grads, *input, d);
            }
            Op::TopKRows { input, picked } => {
                let src = self.value(*input);
                let k = g.cols();
                let mut d = Matrix::zeros(src.rows(), src.cols());
                for r in 0..g.rows() {
                    let row = d.row_mut(r);
                    for j in 0..k {
                        let c = picked[r * k + j];
                        row[c] = row[c] + g.get(r, j);
                    }
                }
                self.accumulate(grads, *input, d);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.nodes[p.0].requires_grad {
                        let cols: Vec<usize> = (offset..offset + w).collect();
                        self.accumulate(grads, p, g.select_cols(&cols));
                    }
                    offset += w;
                }
            }
            Op::SoftmaxRows(a) => {
                let p = &node.value;
                let mut d = Matrix::zeros(p.rows(), p.cols());
                for r in 0..p.rows() {
                    let pr = p.row(r);
                    let gr = g.row(r);
                    let dot: T = pr.iter().zip(gr).map(|(&x, &y)| x * y).sum();
                    for ((o, &pv), &gv) in d.row_mut(r).iter_mut().zip(pr).zip(gr) {
                        *o = pv * (gv - dot);
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::NllMean { probs, labels } => {
                let p = self.value(*probs);
                let n = T::from_f64(labels.len().max(1) as f64);
                let eps = T::from_f64(EPS_LOG);
                let mut d = Matrix::zeros(p.rows(), p.cols());
                for (r, &c) in labels.iter().enumerate() {
                    d.set(r, c, -g.item() / (n * (p.get(r, c) + eps)));
                }
                self.accumulate(grads, *probs, d);
            }
        }
        Ok(())
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T: Real = f64> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for `v`, or `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, zero-filled to `shape` when absent.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Matrix<T> {
        self.get(v).cloned().unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_gradient_rule() {
        let mut g = Graph::<f64>::new();
        let a = g.param(Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let b = g.param(Matrix::from_rows(&[vec![0.5], vec![-1.0]]).unwrap());
        let c = g.matmul(a, b).unwrap();
        let loss = g.weighted_mean(c, vec![1.0, 1.0]).unwrap();
        let grads = g.backward(loss).unwrap();
        // d/da = g b^T with g = [0.5, 0.5]^T
        assert_eq!(grads.get(a).unwrap().data(), &[0.25, -0.5, 0.25, -0.5]);
        // d/db = a^T g
        assert_eq!(grads.get(b).unwrap().data(), &[2.0, 3.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Matrix::row_vector(&[1.0, 2.0]));
        let w = g.param(Matrix::row_vector(&[3.0, 4.0]));
        let y = g.mul(x, w).unwrap();
        let loss = g.weighted_mean(y, vec![1.0, 1.0]).unwrap();
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(x).is_none());
        assert_eq!(grads.get(w).unwrap().data(), &[0.5, 1.0]);
    }

    #[test]
    fn empty_weighted_mean_is_zero_without_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Matrix::row_vector(&[1.0, 2.0]));
        let m = g.weighted_mean(x, vec![0.0, 0.0]).unwrap();
        assert_eq!(g.value(m).item(), 0.0);
        let grads = g.backward(m).unwrap();
        assert!(grads.get(x).is_none());
    }

    #[test]
    fn top_k_routes_to_selected_entries() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Matrix::row_vector(&[5.0, 1.0, 9.0, 9.0]));
        let t = g.top_k_rows(x, 2).unwrap();
        assert_eq!(g.value(t).data(), &[9.0, 9.0]);
        let loss = g.weighted_mean(t, vec![2.0, 1.0]).unwrap();
        let grads = g.backward(loss).unwrap();
        let d = grads.get(x).unwrap();
        assert!((d.get(0, 2) - 2.0 / 3.0).abs() < 1e-15);
        assert!((d.get(0, 3) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(d.get(0, 0), 0.0);
        assert_eq!(d.get(0, 1), 0.0);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Matrix::row_vector(&[1.0, 2.0]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn reused_node_accumulates() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Matrix::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 6.0);
    }
}
