use super::{Graph, Matrix, NumericError, Var};

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of a scalar loss against central finite
/// differences `(f(p + h) - f(p - h)) / 2h`, entry by entry over every
/// parameter, and returns the largest relative error.
pub fn grad_check<F>(loss_fn: F, params: &[Matrix<f64>], h: f64) -> Result<f64, NumericError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, NumericError>,
{
    let eval = |values: &[Matrix<f64>]| -> Result<f64, NumericError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|p| g.param(p.clone())).collect();
        let loss = loss_fn(&mut g, &vars)?;
        let v = g.value(loss).item();
        if !v.is_finite() {
            return Err(NumericError::NonFinite { op: "grad_check" });
        }
        Ok(v)
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = loss_fn(&mut g, &vars)?;
    if !g.value(loss).item().is_finite() {
        return Err(NumericError::NonFinite { op: "grad_check" });
    }
    let grads = g.backward(loss)?;

    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*var, params[pi].shape());
        for e in 0..params[pi].data().len() {
            let orig = params[pi].data()[e];
            probe[pi].data_mut()[e] = orig + h;
            let up = eval(&probe)?;
            probe[pi].data_mut()[e] = orig - h;
            let down = eval(&probe)?;
            probe[pi].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(relative_error(analytic.data()[e], numeric));
        }
    }
    Ok(worst)
}
