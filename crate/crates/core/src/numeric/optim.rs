use serde::{Deserialize, Serialize};

use super::{Matrix, NumericError, Real};

/// AdamW hyper-parameters plus the warmup/cosine schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_epochs: f64,
    pub total_epochs: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.05,
            warmup_epochs: 5.0,
            total_epochs: 100.0,
        }
    }
}

impl AdamWConfig {
    /// Learning rate at `epoch_fraction` of the whole run: linear warmup
    /// over the warmup epochs, then half-cosine decay to zero.
    pub fn learning_rate_at(&self, epoch_fraction: f64) -> f64 {
        let f = epoch_fraction.clamp(0.0, 1.0);
        let warm = if self.total_epochs > 0.0 {
            (self.warmup_epochs / self.total_epochs).clamp(0.0, 1.0)
        } else {
            0.0
        };
        if f < warm {
            return self.learning_rate * f / warm;
        }
        if warm >= 1.0 {
            return self.learning_rate;
        }
        let progress = (f - warm) / (1.0 - warm);
        self.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// AdamW with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW<T: Real = f64> {
    pub config: AdamWConfig,
    step: u64,
    first: Vec<Matrix<T>>,
    second: Vec<Matrix<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update in place and returns the learning rate used.
    /// `decay[i]` selects whether parameter `i` receives weight decay.
    pub fn step(
        &mut self,
        params: &mut [&mut Matrix<T>],
        grads: &[Matrix<T>],
        decay: &[bool],
        epoch_fraction: f64,
    ) -> Result<f64, NumericError> {
        if params.len() != grads.len() || params.len() != decay.len() {
            return Err(NumericError::Argument(format!(
                "optimizer: {} params, {} grads, {} decay flags",
                params.len(),
                grads.len(),
                decay.len()
            )));
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() {
            return Err(NumericError::Argument(format!(
                "optimizer: state tracks {} params, got {}",
                self.first.len(),
                params.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first[i].shape() {
                return Err(NumericError::Shape {
                    op: "optimizer_step",
                    left: p.shape(),
                    right: g.shape(),
                });
            }
        }

        self.step += 1;
        let c = &self.config;
        let lr = c.learning_rate_at(epoch_fraction);
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (one, eps) = (T::one(), T::from_f64(c.eps));
        let (bc1, bc2) = (T::from_f64(bc1), T::from_f64(bc2));
        let lr_t = T::from_f64(lr);

        for (i, p) in params.iter_mut().enumerate() {
            let shrink = if decay[i] {
                T::from_f64(1.0 - lr * c.weight_decay)
            } else {
                one
            };
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((w, &gv), mi), vi) in p.data_mut().iter_mut().zip(grads[i].data()).zip(m).zip(v) {
                *mi = b1 * *mi + (one - b1) * gv;
                *vi = b2 * *vi + (one - b2) * gv * gv;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w = *w * shrink - lr_t * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(lr)
    }
}
