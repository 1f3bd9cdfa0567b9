use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-3, weight_decay: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OptimError {
    #[error("non-finite gradient in tensor {0}")]
    NonFiniteGradient(usize),
    #[error("optimizer state has {expected} tensors, got {got}")]
    TensorCount { expected: usize, got: usize },
}

/// Adam moments per tensor, stored in `f64` regardless of parameter precision.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamW {
    pub fn new(shapes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v) = shapes.into_iter().map(|n| (vec![0.0; n], vec![0.0; n])).unzip();
        Self { m, v, step: 0 }
    }

    /// One decoupled-weight-decay Adam step. Tensors with `skip[t] == true`
    /// are left untouched (their moments do not advance either).
    pub fn step<T: Scalar>(
        &mut self,
        params: &mut [&mut [T]],
        grads: &[&[T]],
        skip: &[bool],
        cfg: &AdamWConfig,
    ) -> Result<(), OptimError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(OptimError::TensorCount { expected: self.m.len(), got: params.len().min(grads.len()) });
        }
        for (t, g) in grads.iter().enumerate() {
            if !skip[t] && g.iter().any(|v| !v.is_finite()) {
                return Err(OptimError::NonFiniteGradient(t));
            }
        }
        self.step += 1;
        let bc1 = 1.0 - libm::pow(cfg.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(cfg.beta2, self.step as f64);
        let decay = 1.0 - cfg.lr * cfg.weight_decay;
        for (t, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if skip[t] {
                continue;
            }
            let (m, v) = (&mut self.m[t], &mut self.v[t]);
            for i in 0..p.len() {
                let gi = g[i].as_f64();
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let w = p[i].as_f64() * decay;
                p[i] = T::lit(w - cfg.lr * m_hat / (libm::sqrt(v_hat) + cfg.eps));
            }
        }
        Ok(())
    }
}

/// Absolute decrease a loss must achieve to count as an improvement.
pub const IMPROVEMENT_EPS: f64 = 1e-6;

/// Halves the learning rate when the tracked loss stops improving.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub best: f64,
    pub bad_epochs: usize,
    pub reductions: u32,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        Self { lr, factor, patience, best: f64::INFINITY, bad_epochs: 0, reductions: 0 }
    }

    /// Records one epoch's loss; returns `true` when the rate was reduced.
    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best - IMPROVEMENT_EPS {
            self.best = loss;
            self.bad_epochs = 0;
            return false;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            self.lr *= self.factor;
            self.reductions += 1;
            self.bad_epochs = 0;
            return true;
        }
        false
    }
}

/// Median with the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
