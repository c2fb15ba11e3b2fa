use crate::dataset::GroupPartition;
use crate::numeric::{softmax, top_k, Graph, Matrix, NumericError, Real, Var};

/// Batch positions whose label lies in zero-based group `g` (positives) and
/// the rest (negatives).
pub fn split_pos_neg(labels: &[usize], partition: &GroupPartition, g: usize) -> (Vec<usize>, Vec<usize>) {
    (0..labels.len()).partition(|&i| partition.group(labels[i]) == g)
}

fn mean_or_zero<T: Real>(values: impl Iterator<Item = T>) -> T {
    let (sum, n) = values.fold((T::zero(), 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        T::zero()
    } else {
        sum / T::from_f64(n as f64)
    }
}

/// `(L+, L-)` for zero-based group `g`: mean squared shortfall below `xi`
/// over the group's positives and mean squared excess above `mu` over its
/// negatives. An empty side contributes zero.
pub fn group_side_losses<T: Real>(
    magnitudes: &Matrix<T>,
    labels: &[usize],
    partition: &GroupPartition,
    g: usize,
    xi: T,
    mu: T,
) -> (T, T) {
    let (pos, neg) = split_pos_neg(labels, partition, g);
    let pos_term = mean_or_zero(pos.iter().map(|&i| {
        let gap = (xi - magnitudes.get(i, g)).max(T::zero());
        gap * gap
    }));
    let neg_term = mean_or_zero(neg.iter().map(|&i| {
        let gap = (magnitudes.get(i, g) - mu).max(T::zero());
        gap * gap
    }));
    (pos_term, neg_term)
}

/// Magnitude regularizer over an `n x 3` magnitude matrix: both side losses
/// of every group, summed and scaled by `lambda`.
pub fn reo_loss<T: Real>(
    magnitudes: &Matrix<T>,
    labels: &[usize],
    partition: &GroupPartition,
    xi: T,
    mu: T,
    lambda: T,
) -> T {
    let mut total = T::zero();
    for g in 0..3 {
        let (pos, neg) = group_side_losses(magnitudes, labels, partition, g, xi, mu);
        total = total + pos + neg;
    }
    lambda * total
}

/// Graph form of [`reo_loss`].
pub(crate) fn reo_loss_graph<T: Real>(
    g: &mut Graph<T>,
    magnitudes: Var,
    labels: &[usize],
    partition: &GroupPartition,
    xi: T,
    mu: T,
    lambda: T,
) -> Result<Var, NumericError> {
    let mut total: Option<Var> = None;
    for group in 0..3 {
        let pos_mask: Vec<T> = labels
            .iter()
            .map(|&c| if partition.group(c) == group { T::one() } else { T::zero() })
            .collect();
        let neg_mask: Vec<T> = pos_mask.iter().map(|&m| T::one() - m).collect();
        let column = g.gather_cols(magnitudes, vec![group])?;
        let short = g.hinge_sq(column, xi, true);
        let pos = g.weighted_mean(short, pos_mask)?;
        let excess = g.hinge_sq(column, mu, false);
        let neg = g.weighted_mean(excess, neg_mask)?;
        let both = g.add(pos, neg)?;
        total = Some(match total {
            Some(t) => g.add(t, both)?,
            None => both,
        });
    }
    Ok(g.scale(total.expect("three groups"), lambda))
}

/// Logits of the classes in zero-based group `g`, in class order.
pub fn group_logits<T: Real>(logits: &[T], partition: &GroupPartition, g: usize) -> Vec<T> {
    partition.members(g).into_iter().map(|c| logits[c]).collect()
}

/// Per row, the descending top-`k` logits of each group, concatenated in
/// group order: `n x 3k`.
pub fn fusion_features<T: Real>(logits: &Matrix<T>, partition: &GroupPartition, k: usize) -> Result<Matrix<T>, NumericError> {
    let mut data = Vec::with_capacity(logits.rows() * 3 * k);
    for r in 0..logits.rows() {
        for g in 0..3 {
            let (vals, _) = top_k(&group_logits(logits.row(r), partition, g), k)?;
            data.extend(vals);
        }
    }
    Matrix::new(logits.rows(), 3 * k, data)
}

/// `softmax(l_j * w_{g(j)})`.
pub fn dac_probs<T: Real>(logits: &[T], weights: &[T], partition: &GroupPartition) -> Result<Vec<T>, NumericError> {
    if weights.len() != 3 || logits.len() != partition.num_classes() {
        return Err(NumericError::Shape {
            op: "dac_probs",
            left: (1, logits.len()),
            right: (1, weights.len()),
        });
    }
    let scaled: Vec<T> = logits
        .iter()
        .enumerate()
        .map(|(j, &l)| l * weights[partition.group(j)])
        .collect();
    softmax(&scaled)
}

/// Mean cross-entropy of a batch of probability rows.
pub fn dac_loss<T: Real>(probs: &Matrix<T>, labels: &[usize]) -> Result<T, NumericError> {
    if probs.rows() != labels.len() {
        return Err(NumericError::Shape {
            op: "dac_loss",
            left: probs.shape(),
            right: (labels.len(), 1),
        });
    }
    let mut total = T::zero();
    for (r, &c) in labels.iter().enumerate() {
        total = total + crate::numeric::cross_entropy(probs.row(r), c)?;
    }
    Ok(total / T::from_f64(labels.len().max(1) as f64))
}

/// Joint objective: regularizer plus classifier loss.
pub fn total_loss<T: Real>(reo: T, dac: T) -> T {
    reo + dac
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Strategy;
    use crate::numeric::argmax;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn five_class() -> GroupPartition {
        GroupPartition::from_groups(vec![1, 1, 2, 2, 3], Strategy::RandomEven, None).unwrap()
    }

    /// Loops over samples and groups, mirroring the piecewise definition.
    fn reo_oracle(mags: &[[f64; 3]], labels: &[usize], p: &GroupPartition, xi: f64, mu: f64, lambda: f64) -> f64 {
        let mut total = 0.0;
        for g in 0..3 {
            let (mut pos_sum, mut pos_n, mut neg_sum, mut neg_n) = (0.0, 0, 0.0, 0);
            for (i, &c) in labels.iter().enumerate() {
                let q = mags[i][g];
                if p.group(c) == g {
                    let h = if xi - q > 0.0 { xi - q } else { 0.0 };
                    pos_sum += h * h;
                    pos_n += 1;
                } else {
                    let h = if q - mu > 0.0 { q - mu } else { 0.0 };
                    neg_sum += h * h;
                    neg_n += 1;
                }
            }
            if pos_n > 0 {
                total += pos_sum / pos_n as f64;
            }
            if neg_n > 0 {
                total += neg_sum / neg_n as f64;
            }
        }
        lambda * total
    }

    fn to_matrix(mags: &[[f64; 3]]) -> Matrix {
        Matrix::from_rows(&mags.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn split_cases() {
        let p = five_class();
        let labels = [0, 1, 0, 1];
        let (pos, neg) = split_pos_neg(&labels, &p, 0);
        assert_eq!(pos.len(), 4);
        assert!(neg.is_empty());
        let (pos, neg) = split_pos_neg(&labels, &p, 1);
        assert!(pos.is_empty());
        assert_eq!(neg.len(), 4);

        // hand count: groups of [0,2,4,3,1,4] are [1,2,3,2,1,3]
        let labels = [0, 2, 4, 3, 1, 4];
        let sizes: Vec<(usize, usize)> = (0..3)
            .map(|g| {
                let (a, b) = split_pos_neg(&labels, &p, g);
                (a.len(), b.len())
            })
            .collect();
        assert_eq!(sizes, vec![(2, 4), (2, 4), (2, 4)]);
        assert_eq!(split_pos_neg(&labels, &p, 2).0, vec![2, 5]);
    }

    #[test]
    fn satisfied_hinges_give_zero() {
        let p = five_class();
        let labels = [0, 2, 4];
        let mags = [[120.0, 0.0, 0.0], [0.0, 100.0, 0.0], [0.0, 0.0, 250.0]];
        assert_eq!(reo_loss(&to_matrix(&mags), &labels, &p, 100.0, 0.0, 1.0), 0.0);
    }

    #[test]
    fn single_hinge_arithmetic() {
        let p = five_class();
        let mags = [[1.0, 0.0, 0.0]];
        assert_eq!(reo_loss(&to_matrix(&mags), &[0], &p, 2.0, 0.0, 1.0), 1.0);
        assert_eq!(reo_loss(&to_matrix(&mags), &[0], &p, 2.0, 0.0, 3.0), 3.0);
    }

    #[test]
    fn random_batch_matches_loop_oracle_and_graph() {
        let p = five_class();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let labels: Vec<usize> = (0..8).map(|_| rng.random_range(0..5)).collect();
            let mags: Vec<[f64; 3]> = (0..8)
                .map(|_| [rng.random_range(0.0..4.0), rng.random_range(0.0..4.0), rng.random_range(0.0..4.0)])
                .collect();
            let m = to_matrix(&mags);
            let expected = reo_oracle(&mags, &labels, &p, 3.0, 0.5, 0.7);
            let direct = reo_loss(&m, &labels, &p, 3.0, 0.5, 0.7);
            assert!((direct - expected).abs() < 1e-12);
            let mut g = Graph::new();
            let mv = g.constant(m);
            let l = reo_loss_graph(&mut g, mv, &labels, &p, 3.0, 0.5, 0.7).unwrap();
            assert!((g.value(l).item() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn group_logit_cases() {
        let p = five_class();
        let l = [10.0, 20.0, 30.0, 40.0, 50.0];
        assert_eq!(group_logits(&l, &p, 1), vec![30.0, 40.0]);
        let mut all: Vec<f64> = (0..3).flat_map(|g| group_logits(&l, &p, g)).collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(all, l.to_vec());
    }

    #[test]
    fn fusion_feature_cases() {
        let p = GroupPartition::from_groups(vec![1, 2, 1, 3, 2, 3], Strategy::RandomEven, None).unwrap();
        let l = Matrix::from_rows(&[vec![1.0, 5.0, 3.0, -1.0, 2.0, 4.0]]).unwrap();
        let f = fusion_features(&l, &p, 2).unwrap();
        assert_eq!(f.data(), &[3.0, 1.0, 5.0, 2.0, 4.0, -1.0]);
        let c = Matrix::filled(2, 6, 1.5);
        assert!(fusion_features(&c, &p, 2).unwrap().data().iter().all(|&v| v == 1.5));
        assert!(fusion_features(&l, &p, 3).is_err());
    }

    #[test]
    fn unit_weights_reduce_to_softmax() {
        let p = five_class();
        let l = [0.3f64, -1.2, 2.5, 0.0, 4.1];
        let a = dac_probs(&l, &[1.0, 1.0, 1.0], &p).unwrap();
        let b = softmax(&l).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn scaled_logits_hand_case() {
        let p = GroupPartition::from_groups(vec![1, 2, 3], Strategy::RandomEven, None).unwrap();
        let probs = dac_probs(&[2.0, 1.0, 0.0], &[2.0, 1.0, 1.0], &p).unwrap();
        let denom = 4.0f64.exp() + 1.0f64.exp() + 1.0;
        let expected = [4.0f64.exp() / denom, 1.0f64.exp() / denom, 1.0 / denom];
        for (x, y) in probs.iter().zip(expected) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn dac_loss_cases() {
        let onehot = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        assert!(dac_loss(&onehot, &[0, 2]).unwrap() < 1e-11);
        let uniform = Matrix::filled(4, 5, 0.2);
        assert!((dac_loss(&uniform, &[0, 1, 2, 3]).unwrap() - 5.0f64.ln()).abs() < 1e-9);
        let probs = Matrix::from_rows(&[vec![0.7, 0.2, 0.1], vec![0.1, 0.8, 0.1], vec![0.25, 0.25, 0.5]]).unwrap();
        let labels = [1, 1, 2];
        let oracle = (-(0.2f64 + 1e-12).ln() - (0.8f64 + 1e-12).ln() - (0.5f64 + 1e-12).ln()) / 3.0;
        assert!((dac_loss(&probs, &labels).unwrap() - oracle).abs() < 1e-12);
        assert!(dac_loss(&probs, &[0, 1, 3]).is_err());
    }

    #[test]
    fn total_is_component_sum() {
        assert_eq!(total_loss(0.0, 1.25), 1.25);
        assert_eq!(total_loss(0.0, 0.0), 0.0);
        assert_eq!(total_loss(0.5, 1.25), 1.75);
    }

    proptest! {
        #[test]
        fn reo_is_non_negative_and_zero_iff_satisfied(
            raw in prop::collection::vec((0usize..5, 0.0f64..6.0, 0.0f64..6.0, 0.0f64..6.0), 1..12)
        ) {
            let p = five_class();
            let labels: Vec<usize> = raw.iter().map(|r| r.0).collect();
            let mags: Vec<[f64; 3]> = raw.iter().map(|r| [r.1, r.2, r.3]).collect();
            let (xi, mu) = (3.0, 1.0);
            let l = reo_loss(&to_matrix(&mags), &labels, &p, xi, mu, 1.0);
            prop_assert!(l >= 0.0);
            let satisfied = labels.iter().zip(&mags).all(|(&c, q)| {
                (0..3).all(|g| if p.group(c) == g { q[g] >= xi } else { q[g] <= mu })
            });
            prop_assert_eq!(l == 0.0, satisfied);
        }

        #[test]
        fn positive_weights_keep_within_group_order(
            logits in prop::collection::vec(-8.0f64..8.0, 5),
            w in prop::collection::vec(0.01f64..20.0, 3),
        ) {
            let p = five_class();
            let probs = dac_probs(&logits, &w, &p).unwrap();
            for g in 0..3 {
                let members = p.members(g);
                let by_logit = members.iter().map(|&c| logits[c]).collect::<Vec<_>>();
                let by_prob = members.iter().map(|&c| probs[c]).collect::<Vec<_>>();
                prop_assert_eq!(argmax(&by_logit), argmax(&by_prob));
            }
        }

        #[test]
        fn class_permutation_is_equivariant(
            logits in prop::collection::vec(-5.0f64..5.0, 6),
            w in prop::collection::vec(0.1f64..5.0, 3),
            groups in prop::collection::vec(1u8..=3, 3),
            perm_seed in 0u64..1000,
        ) {
            let mut groups = groups;
            groups.extend([1, 2, 3]);
            let p = GroupPartition::from_groups(groups.clone(), Strategy::RandomEven, None).unwrap();
            let mut perm: Vec<usize> = (0..6).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
            for i in (1..6).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            // class c moves to position perm[c]
            let mut l2 = vec![0.0; 6];
            let mut g2 = vec![0u8; 6];
            for c in 0..6 {
                l2[perm[c]] = logits[c];
                g2[perm[c]] = groups[c];
            }
            let p2 = GroupPartition::from_groups(g2, Strategy::RandomEven, None).unwrap();
            let a = dac_probs(&logits, &w, &p).unwrap();
            let b = dac_probs(&l2, &w, &p2).unwrap();
            for c in 0..6 {
                prop_assert!((a[c] - b[perm[c]]).abs() < 1e-12);
            }
        }

        #[test]
        fn duplicating_negatives_keeps_negative_mean(
            raw in prop::collection::vec((0usize..5, 0.0f64..6.0, 0.0f64..6.0, 0.0f64..6.0), 1..12)
        ) {
            let p = five_class();
            let labels: Vec<usize> = raw.iter().map(|r| r.0).collect();
            let mags: Vec<[f64; 3]> = raw.iter().map(|r| [r.1, r.2, r.3]).collect();
            let m = to_matrix(&mags);
            for g in 0..3 {
                let (_, before) = group_side_losses(&m, &labels, &p, g, 3.0, 1.0);
                let (_, neg) = split_pos_neg(&labels, &p, g);
                let mut labels2 = labels.clone();
                let mut rows: Vec<usize> = (0..labels.len()).collect();
                for &i in &neg {
                    labels2.push(labels[i]);
                    rows.push(i);
                }
                let (_, after) = group_side_losses(&m.select_rows(&rows), &labels2, &p, g, 3.0, 1.0);
                prop_assert!((before - after).abs() < 1e-12);
            }
        }
    }
}
