//! Dense affine layers with hand-written backward passes.

use alloc::vec;
use alloc::vec::Vec;

use crate::rng::CounterRng;
use crate::scalar::Scalar;

/// `Σ a_i b_i` with eight independent accumulators (vectorizes; the
/// summation order is fixed, so results are deterministic).
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

/// `out = W x + b` with `W` stored row-major as `out_dim × in_dim`.
///
/// An optional connectivity mask pins weights to zero: masked entries are
/// zero at construction and never receive gradient, so they stay zero under
/// any optimizer whose update of a zero-gradient, zero-valued entry is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub mask: Option<Vec<bool>>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            out_dim,
            in_dim,
            weight: vec![T::zero(); out_dim * in_dim],
            bias: vec![T::zero(); out_dim],
            mask: None,
        }
    }

    /// Weights and biases uniform in `±1/√in_dim`.
    pub fn uniform(out_dim: usize, in_dim: usize, rng: &mut CounterRng) -> Self {
        Self::uniform_scaled(out_dim, in_dim, 1.0, rng)
    }

    pub fn uniform_scaled(out_dim: usize, in_dim: usize, scale: f64, rng: &mut CounterRng) -> Self {
        let bound = scale / libm::sqrt(in_dim.max(1) as f64);
        let mut l = Self::zeros(out_dim, in_dim);
        for w in &mut l.weight {
            *w = T::lit(rng.uniform_in(-bound, bound));
        }
        for b in &mut l.bias {
            *b = T::lit(rng.uniform_in(-bound, bound));
        }
        l
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Self {
        assert_eq!(mask.len(), self.weight.len());
        for (w, keep) in self.weight.iter_mut().zip(&mask) {
            if !keep {
                *w = T::zero();
            }
        }
        self.mask = Some(mask);
        self
    }

    /// A zero-valued layer with the same shape and mask.
    pub fn zeros_like(&self) -> Self {
        Self { mask: self.mask.clone(), ..Self::zeros(self.out_dim, self.in_dim) }
    }

    #[inline]
    pub fn row(&self, o: usize) -> &[T] {
        &self.weight[o * self.in_dim..(o + 1) * self.in_dim]
    }

    pub fn forward(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(out.len(), self.out_dim);
        for (o, y) in out.iter_mut().enumerate() {
            *y = self.bias[o] + dot(self.row(o), x);
        }
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.out_dim];
        self.forward(x, &mut out);
        out
    }

    /// Accumulates parameter gradients into `grad` and, when given, the input
    /// gradient into `dx`.
    pub fn backward(&self, x: &[T], dout: &[T], grad: &mut Linear<T>, dx: Option<&mut [T]>) {
        for (o, &g) in dout.iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            grad.bias[o] += g;
            axpy(g, x, &mut grad.weight[o * self.in_dim..(o + 1) * self.in_dim]);
        }
        if let Some(mask) = &self.mask {
            for (gw, keep) in grad.weight.iter_mut().zip(mask) {
                if !keep {
                    *gw = T::zero();
                }
            }
        }
        if let Some(dx) = dx {
            for (o, &g) in dout.iter().enumerate() {
                if g != T::zero() {
                    axpy(g, self.row(o), dx);
                }
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> Linear<U> {
        Linear {
            out_dim: self.out_dim,
            in_dim: self.in_dim,
            weight: self.weight.iter().map(|v| U::lit(v.as_f64())).collect(),
            bias: self.bias.iter().map(|v| U::lit(v.as_f64())).collect(),
            mask: self.mask.clone(),
        }
    }
}
