//! Conditional masked autoregressive flows.
//!
//! Each block maps `x ↦ z = (x − μ(x, h)) ⊙ exp(−s(x, h))`, where `(μ_i, s_i)`
//! only see `x_{<i}` and the context `h`. Blocks are stacked with a
//! coordinate reversal between consecutive blocks, and the base density is a
//! standard normal.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::nn::Linear;
use crate::rng::{CounterRng, Domain};
use crate::scalar::{leaky_relu, leaky_relu_grad, Scalar};

/// Bounds applied to `log σ` before exponentiation.
pub const LOG_SIGMA_CLAMP: f64 = 7.0;

/// `0.5 · ln(2π)`.
pub const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FlowError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(&'static str),
    #[error("non-finite value in flow evaluation")]
    NonFinite,
    #[error("empty batch")]
    EmptyBatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FlowConfig {
    pub dim: usize,
    pub context: usize,
    pub blocks: usize,
    pub hidden: usize,
}

impl FlowConfig {
    pub fn scalar(context: usize) -> Self {
        Self { dim: 1, context, blocks: 10, hidden: 128 }
    }
}

/// Masked conditioner with two LeakyReLU hidden layers.
///
/// Input layout is `[x_1..x_D, h_1..h_M]`, output layout `[μ_1..μ_D, s_1..s_D]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Made<T> {
    pub l1: Linear<T>,
    pub l2: Linear<T>,
    pub l3: Linear<T>,
}

#[derive(Debug, Clone)]
pub struct MadeCache<T> {
    input: Vec<T>,
    pre1: Vec<T>,
    act1: Vec<T>,
    pre2: Vec<T>,
    act2: Vec<T>,
}

fn masks(dim: usize, context: usize, hidden: usize) -> (Vec<bool>, Vec<bool>, Vec<bool>) {
    let in_deg: Vec<usize> = (0..dim).map(|i| i + 1).chain(core::iter::repeat(0).take(context)).collect();
    let hid_deg: Vec<usize> = (0..hidden).map(|k| k % dim).collect();
    let out_deg: Vec<usize> = (0..2 * dim).map(|c| c % dim + 1).collect();
    let mut m1 = Vec::with_capacity(hidden * in_deg.len());
    for &hd in &hid_deg {
        m1.extend(in_deg.iter().map(|&id| hd >= id));
    }
    let mut m2 = Vec::with_capacity(hidden * hidden);
    for &a in &hid_deg {
        m2.extend(hid_deg.iter().map(|&b| a >= b));
    }
    let mut m3 = Vec::with_capacity(2 * dim * hidden);
    for &od in &out_deg {
        m3.extend(hid_deg.iter().map(|&hd| od > hd));
    }
    (m1, m2, m3)
}

fn all_true(mask: &[bool]) -> bool {
    mask.iter().all(|&m| m)
}

fn masked(l: Linear<f64>, mask: Vec<bool>) -> Linear<f64> {
    if all_true(&mask) {
        l
    } else {
        l.with_mask(mask)
    }
}

impl<T: Scalar> Made<T> {
    pub fn init(cfg: FlowConfig, rng: &mut CounterRng) -> Self {
        let n_in = cfg.dim + cfg.context;
        let (m1, m2, m3) = masks(cfg.dim, cfg.context, cfg.hidden);
        let l1 = masked(Linear::<f64>::uniform(cfg.hidden, n_in, rng), m1);
        let l2 = masked(Linear::<f64>::uniform(cfg.hidden, cfg.hidden, rng), m2);
        let l3 = masked(Linear::<f64>::zeros(2 * cfg.dim, cfg.hidden), m3);
        Self { l1: l1.cast(), l2: l2.cast(), l3: l3.cast() }
    }

    pub fn zeros_like(&self) -> Self {
        Self { l1: self.l1.zeros_like(), l2: self.l2.zeros_like(), l3: self.l3.zeros_like() }
    }

    pub fn forward(&self, input: Vec<T>) -> (Vec<T>, MadeCache<T>) {
        let pre1 = self.l1.apply(&input);
        let act1: Vec<T> = pre1.iter().map(|&v| leaky_relu(v)).collect();
        let pre2 = self.l2.apply(&act1);
        let act2: Vec<T> = pre2.iter().map(|&v| leaky_relu(v)).collect();
        let out = self.l3.apply(&act2);
        (out, MadeCache { input, pre1, act1, pre2, act2 })
    }

    /// Accumulates parameter gradients and adds `dL/dinput` to `d_input`.
    pub fn backward(&self, cache: &MadeCache<T>, d_out: &[T], grad: &mut Made<T>, d_input: &mut [T]) {
        let mut d2 = vec![T::zero(); self.l2.out_dim];
        self.l3.backward(&cache.act2, d_out, &mut grad.l3, Some(&mut d2));
        for (g, &p) in d2.iter_mut().zip(&cache.pre2) {
            *g *= leaky_relu_grad(p);
        }
        let mut d1 = vec![T::zero(); self.l1.out_dim];
        self.l2.backward(&cache.act1, &d2, &mut grad.l2, Some(&mut d1));
        for (g, &p) in d1.iter_mut().zip(&cache.pre1) {
            *g *= leaky_relu_grad(p);
        }
        self.l1.backward(&cache.input, &d1, &mut grad.l1, Some(d_input));
    }

    pub fn cast<U: Scalar>(&self) -> Made<U> {
        Made { l1: self.l1.cast(), l2: self.l2.cast(), l3: self.l3.cast() }
    }
}

fn clamp_log_sigma<T: Scalar>(s: T) -> T {
    let c = T::lit(LOG_SIGMA_CLAMP);
    s.max(-c).min(c)
}

fn clamp_grad<T: Scalar>(raw: T) -> T {
    let c = T::lit(LOG_SIGMA_CLAMP);
    if raw < -c || raw > c {
        T::zero()
    } else {
        T::one()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Flow<T> {
    pub config: FlowConfig,
    pub blocks: Vec<Made<T>>,
}

#[derive(Debug, Clone)]
struct BlockCache<T> {
    made: MadeCache<T>,
    s_raw: Vec<T>,
    s: Vec<T>,
    z: Vec<T>,
}

/// Forward-pass record used by [`Flow::nll_backward`].
#[derive(Debug, Clone)]
pub struct FlowCache<T> {
    blocks: Vec<BlockCache<T>>,
    pub z: Vec<T>,
    pub logdet: T,
}

impl<T: Scalar> Flow<T> {
    /// Identity-initialized flow.
    pub fn init(config: FlowConfig, rng: &mut CounterRng) -> Self {
        Self { config, blocks: (0..config.blocks).map(|_| Made::init(config, rng)).collect() }
    }

    pub fn zeros_like(&self) -> Self {
        Self { config: self.config, blocks: self.blocks.iter().map(Made::zeros_like).collect() }
    }

    pub fn cast<U: Scalar>(&self) -> Flow<U> {
        Flow { config: self.config, blocks: self.blocks.iter().map(Made::cast).collect() }
    }

    fn permutes(&self) -> bool {
        self.config.dim > 1
    }

    fn check(&self, y: &[T], h: &[T]) -> Result<(), FlowError> {
        if y.len() != self.config.dim {
            return Err(FlowError::ShapeMismatch("target dimension"));
        }
        if h.len() != self.config.context {
            return Err(FlowError::ShapeMismatch("context dimension"));
        }
        Ok(())
    }

    fn conditioner_input(x: &[T], h: &[T]) -> Vec<T> {
        let mut input = Vec::with_capacity(x.len() + h.len());
        input.extend_from_slice(x);
        input.extend_from_slice(h);
        input
    }

    pub fn forward_cached(&self, y: &[T], h: &[T]) -> Result<FlowCache<T>, FlowError> {
        self.check(y, h)?;
        let d = self.config.dim;
        let mut x = y.to_vec();
        let mut logdet = T::zero();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (k, made) in self.blocks.iter().enumerate() {
            if k > 0 && self.permutes() {
                x.reverse();
            }
            let (out, cache) = made.forward(Self::conditioner_input(&x, h));
            let s_raw = out[d..].to_vec();
            let s: Vec<T> = s_raw.iter().map(|&v| clamp_log_sigma(v)).collect();
            let z: Vec<T> = (0..d).map(|i| (x[i] - out[i]) * (-s[i]).exp()).collect();
            for &si in &s {
                logdet -= si;
            }
            x.copy_from_slice(&z);
            blocks.push(BlockCache { made: cache, s_raw, s, z });
        }
        if !logdet.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(FlowError::NonFinite);
        }
        Ok(FlowCache { blocks, z: x, logdet })
    }

    /// `(z, log|det ∂z/∂y|)`.
    pub fn forward(&self, y: &[T], h: &[T]) -> Result<(Vec<T>, T), FlowError> {
        let c = self.forward_cached(y, h)?;
        Ok((c.z, c.logdet))
    }

    pub fn inverse(&self, z: &[T], h: &[T]) -> Result<Vec<T>, FlowError> {
        self.check(z, h)?;
        let d = self.config.dim;
        let mut cur = z.to_vec();
        for (k, made) in self.blocks.iter().enumerate().rev() {
            let mut x = vec![T::zero(); d];
            for i in 0..d {
                let (out, _) = made.forward(Self::conditioner_input(&x, h));
                x[i] = out[i] + clamp_log_sigma(out[d + i]).exp() * cur[i];
            }
            if k > 0 && self.permutes() {
                x.reverse();
            }
            cur = x;
        }
        if cur.iter().any(|v| !v.is_finite()) {
            return Err(FlowError::NonFinite);
        }
        Ok(cur)
    }

    pub fn log_prob(&self, y: &[T], h: &[T]) -> Result<T, FlowError> {
        let (z, logdet) = self.forward(y, h)?;
        Ok(base_log_density(&z) + logdet)
    }

    /// `−(1/N) Σ log p(y_i | h_i)` over a batch of `(y, h)` pairs.
    pub fn nll_loss(&self, batch: &[(&[T], &[T])]) -> Result<T, FlowError> {
        if batch.is_empty() {
            return Err(FlowError::EmptyBatch);
        }
        let mut total = T::zero();
        for (y, h) in batch {
            total -= self.log_prob(y, h)?;
        }
        Ok(total / T::lit(batch.len() as f64))
    }

    /// Backpropagates `weight · (−log p(y|h))` from a cached forward pass.
    /// Parameter gradients accumulate into `grad`, context gradients into
    /// `d_h`.
    pub fn nll_backward(&self, cache: &FlowCache<T>, weight: T, grad: &mut Flow<T>, d_h: &mut [T]) {
        let d = self.config.dim;
        let mut g_z: Vec<T> = cache.z.iter().map(|&z| z * weight).collect();
        let mut d_out = vec![T::zero(); 2 * d];
        let mut d_in = vec![T::zero(); d + self.config.context];
        for k in (0..self.blocks.len()).rev() {
            let bc = &cache.blocks[k];
            for i in 0..d {
                let inv = (-bc.s[i]).exp();
                d_out[i] = -g_z[i] * inv;
                d_out[d + i] = (weight - g_z[i] * bc.z[i]) * clamp_grad(bc.s_raw[i]);
                d_in[i] = g_z[i] * inv;
            }
            d_in[d..].iter_mut().for_each(|v| *v = T::zero());
            self.blocks[k].backward(&bc.made, &d_out, &mut grad.blocks[k], &mut d_in);
            for (a, &b) in d_h.iter_mut().zip(&d_in[d..]) {
                *a += b;
            }
            g_z.copy_from_slice(&d_in[..d]);
            if k > 0 && self.permutes() {
                g_z.reverse();
            }
        }
    }

    /// `n` draws (row-major `n × D`) from element stream 0.
    pub fn sample(&self, h: &[T], n: usize, seed: u64) -> Result<Vec<T>, FlowError> {
        self.sample_stream(h, n, seed, 0)
    }

    /// Draws from the stream of `element`; draw `j` uses the normals at
    /// positions `j·D .. (j+1)·D` of that stream.
    pub fn sample_stream(&self, h: &[T], n: usize, seed: u64, element: u64) -> Result<Vec<T>, FlowError> {
        let d = self.config.dim;
        let mut rng = CounterRng::new(seed, Domain::Sample, element);
        if d == 1 {
            let cond = self.condition(h)?;
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                out.push(cond.inverse(T::lit(rng.normal())));
            }
            return Ok(out);
        }
        let mut out = Vec::with_capacity(n * d);
        let mut z = vec![T::zero(); d];
        for _ in 0..n {
            for zi in z.iter_mut() {
                *zi = T::lit(rng.normal());
            }
            out.extend(self.inverse(&z, h)?);
        }
        Ok(out)
    }

    /// Monte-Carlo estimate of `E[Y | h]` from `s` draws.
    pub fn mc_mean(&self, h: &[T], s: usize, seed: u64) -> Result<Vec<T>, FlowError> {
        self.mc_mean_stream(h, s, seed, 0)
    }

    pub fn mc_mean_stream(&self, h: &[T], s: usize, seed: u64, element: u64) -> Result<Vec<T>, FlowError> {
        let d = self.config.dim;
        let draws = self.sample_stream(h, s.max(1), seed, element)?;
        let mut acc = vec![0.0f64; d];
        for row in draws.chunks_exact(d) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v.as_f64();
            }
        }
        Ok(acc.into_iter().map(|a| T::lit(a / s.max(1) as f64)).collect())
    }

    /// Evaluates all conditioners once for a scalar flow. Only valid when
    /// `D = 1`, where every conditioner depends on `h` alone.
    pub fn condition(&self, h: &[T]) -> Result<ConditionedFlow<T>, FlowError> {
        if self.config.dim != 1 {
            return Err(FlowError::ShapeMismatch("conditioning requires a scalar flow"));
        }
        if h.len() != self.config.context {
            return Err(FlowError::ShapeMismatch("context dimension"));
        }
        let mut c = ConditionedFlow { mu: Vec::new(), s: Vec::new(), s_raw: Vec::new(), caches: Vec::new() };
        for made in &self.blocks {
            let (out, cache) = made.forward(Self::conditioner_input(&[T::zero()], h));
            c.mu.push(out[0]);
            c.s_raw.push(out[1]);
            c.s.push(clamp_log_sigma(out[1]));
            c.caches.push(cache);
        }
        if c.mu.iter().chain(&c.s).any(|v| !v.is_finite()) {
            return Err(FlowError::NonFinite);
        }
        Ok(c)
    }

    /// Gradient of `Σ_i w_i · (−log p(y_i | h))` for many scalar targets
    /// sharing one context, with a single conditioner backward per block.
    /// Returns the weighted loss.
    pub fn shared_context_nll_backward(
        &self,
        h: &[T],
        ys: &[T],
        weight: T,
        grad: &mut Flow<T>,
        d_h: &mut [T],
    ) -> Result<T, FlowError> {
        let cond = self.condition(h)?;
        let k = self.blocks.len();
        let mut g_mu = vec![T::zero(); k];
        let mut g_s = vec![T::zero(); k];
        let inv: Vec<T> = cond.s.iter().map(|&s| (-s).exp()).collect();
        let mut zs = vec![T::zero(); k];
        let mut loss = T::zero();
        for &y in ys {
            let mut x = y;
            for b in 0..k {
                x = (x - cond.mu[b]) * inv[b];
                zs[b] = x;
            }
            loss += weight * (T::lit(0.5) * x * x + T::lit(HALF_LN_TWO_PI) + cond.s.iter().copied().sum::<T>());
            let mut g = x * weight;
            for b in (0..k).rev() {
                g_mu[b] -= g * inv[b];
                g_s[b] += weight - g * zs[b];
                g *= inv[b];
            }
        }
        let mut d_in = vec![T::zero(); 1 + self.config.context];
        for b in 0..k {
            let d_out = [g_mu[b], g_s[b] * clamp_grad(cond.s_raw[b])];
            d_in.iter_mut().for_each(|v| *v = T::zero());
            self.blocks[b].backward(&cond.caches[b], &d_out, &mut grad.blocks[b], &mut d_in);
            for (a, &v) in d_h.iter_mut().zip(&d_in[1..]) {
                *a += v;
            }
        }
        if !loss.is_finite() {
            return Err(FlowError::NonFinite);
        }
        Ok(loss)
    }
}

/// A scalar flow with its context already applied: a chain of affine maps.
#[derive(Debug, Clone)]
pub struct ConditionedFlow<T> {
    pub mu: Vec<T>,
    pub s: Vec<T>,
    s_raw: Vec<T>,
    caches: Vec<MadeCache<T>>,
}

impl<T: Scalar> ConditionedFlow<T> {
    pub fn forward(&self, y: T) -> (T, T) {
        let mut x = y;
        let mut logdet = T::zero();
        for (&m, &s) in self.mu.iter().zip(&self.s) {
            x = (x - m) * (-s).exp();
            logdet -= s;
        }
        (x, logdet)
    }

    pub fn inverse(&self, z: T) -> T {
        let mut x = z;
        for (&m, &s) in self.mu.iter().zip(&self.s).rev() {
            x = m + s.exp() * x;
        }
        x
    }

    pub fn log_prob(&self, y: T) -> T {
        let (z, logdet) = self.forward(y);
        -T::lit(0.5) * z * z - T::lit(HALF_LN_TWO_PI) + logdet
    }
}

/// `log N(z; 0, I)`.
pub fn base_log_density<T: Scalar>(z: &[T]) -> T {
    let sq: T = z.iter().map(|&v| v * v).sum();
    -T::lit(0.5) * sq - T::lit(HALF_LN_TWO_PI * z.len() as f64)
}
