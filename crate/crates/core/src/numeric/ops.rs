use super::{NumericError, Real, EPS_LOG, EPS_NORM};

/// Numerically stable softmax (max-subtracted).
pub fn softmax<T: Real>(v: &[T]) -> Result<Vec<T>, NumericError> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(NumericError::NonFinite { op: "softmax" });
    }
    Ok(softmax_unchecked(v))
}

pub(crate) fn softmax_unchecked<T: Real>(v: &[T]) -> Vec<T> {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = v.iter().map(|&x| (x - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `sqrt(sum v_i^2 + EPS_NORM)`.
pub fn l2_norm<T: Real>(v: &[T]) -> T {
    let sq: T = v.iter().map(|&x| x * x).sum();
    (sq + T::from_f64(EPS_NORM)).sqrt()
}

/// Gradient of [`l2_norm`]: `v_i / ||v||_eps`.
pub fn l2_norm_grad<T: Real>(v: &[T]) -> Vec<T> {
    let n = l2_norm(v);
    v.iter().map(|&x| x / n).collect()
}

/// The `k` largest values in descending order with their indices.
/// Equal values keep ascending index order.
pub fn top_k<T: Real>(v: &[T], k: usize) -> Result<(Vec<T>, Vec<usize>), NumericError> {
    if k == 0 || k > v.len() {
        return Err(NumericError::Argument(format!(
            "top_k: k={k} outside 1..={}",
            v.len()
        )));
    }
    let mut idx: Vec<usize> = (0..v.len()).collect();
    // stable sort keeps lower indices first among ties
    idx.sort_by(|&a, &b| v[b].partial_cmp(&v[a]).unwrap_or(std::cmp::Ordering::Equal));
    idx.truncate(k);
    Ok((idx.iter().map(|&i| v[i]).collect(), idx))
}

/// `-ln(probs[label] + EPS_LOG)`.
pub fn cross_entropy<T: Real>(probs: &[T], label: usize) -> Result<T, NumericError> {
    let p = probs.get(label).ok_or_else(|| {
        NumericError::Argument(format!(
            "cross_entropy: label {label} out of range for {} classes",
            probs.len()
        ))
    })?;
    Ok(-(*p + T::from_f64(EPS_LOG)).ln())
}

/// Numerically stable `ln(1 + e^x)`, floored at the smallest positive normal
/// value so that it never underflows to zero.
pub fn softplus<T: Real>(x: T) -> T {
    (x.max(T::zero()) + (-x.abs()).exp().ln_1p()).max(T::min_positive_value())
}

/// First index of the maximum; `0` for an empty slice.
pub fn argmax<T: Real>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}
