//! Softmax-attention message-passing encoder with global mean pooling.
//!
//! Per layer, for node `v` with neighbours `N(v)` (which never includes `v`
//! unless the edge list has an explicit self-loop):
//!
//! ```text
//! m_u   = W2 · LeakyReLU(W1 h_u + c1) + c2
//! s_uv  = a_src · h_u + a_dst · h_v + a_0
//! α_uv  = softmax_{u ∈ N(v)} (s_uv / τ)
//! h'_v  = LeakyReLU( Σ_u α_uv m_u )
//! ```
//!
//! No residual path is added. The first layer consumes `W_in x_v + b_in`.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::nn::{axpy, dot, Linear};
use crate::rng::CounterRng;
use crate::scalar::{leaky_relu, leaky_relu_grad, Scalar};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GnnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(&'static str),
    #[error("attention over an empty neighbourhood")]
    NoNeighbors,
    #[error("node {0} has no neighbours")]
    IsolatedNode(usize),
    #[error("edge ({0}, {1}) references a node outside the graph")]
    EdgeOutOfRange(u32, u32),
}

/// Compressed neighbour lists of an undirected graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
}

impl Adjacency {
    /// Builds neighbour lists from undirected edges. A self-loop `(v, v)`
    /// makes `v` its own neighbour once. Every node must end up with at least
    /// one neighbour.
    pub fn new(n: usize, edges: &[(u32, u32)]) -> Result<Self, GnnError> {
        let mut lists: Vec<Vec<u32>> = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u as usize >= n || v as usize >= n {
                return Err(GnnError::EdgeOutOfRange(u, v));
            }
            lists[u as usize].push(v);
            if u != v {
                lists[v as usize].push(u);
            }
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for (v, mut list) in lists.into_iter().enumerate() {
            if list.is_empty() {
                return Err(GnnError::IsolatedNode(v));
            }
            list.sort_unstable();
            list.dedup();
            neighbors.extend(list);
            offsets.push(neighbors.len());
        }
        Ok(Self { offsets, neighbors })
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    #[inline]
    fn range(&self, v: usize) -> core::ops::Range<usize> {
        self.offsets[v]..self.offsets[v + 1]
    }

    pub fn directed_edge_count(&self) -> usize {
        self.neighbors.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MessageLayer<T> {
    pub msg_in: Linear<T>,
    pub msg_out: Linear<T>,
    /// `1 × 2h` affine map on `[h_u ‖ h_v]`.
    pub score: Linear<T>,
    pub log_tau: T,
}

/// Intermediate values of one layer kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerCache<T> {
    pub msg_pre: Vec<T>,
    pub msg_act: Vec<T>,
    pub messages: Vec<T>,
    /// Scaled scores `s_uv / τ`, one per directed adjacency entry.
    pub logits: Vec<T>,
    pub alpha: Vec<T>,
    pub aggregated: Vec<T>,
}

impl<T: Scalar> MessageLayer<T> {
    pub fn init(hidden: usize, rng: &mut CounterRng) -> Self {
        Self {
            msg_in: Linear::uniform(hidden, hidden, rng),
            msg_out: Linear::uniform(hidden, hidden, rng),
            score: Linear::uniform(1, 2 * hidden, rng),
            log_tau: T::zero(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            msg_in: self.msg_in.zeros_like(),
            msg_out: self.msg_out.zeros_like(),
            score: self.score.zeros_like(),
            log_tau: T::zero(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.msg_in.in_dim
    }

    pub fn tau(&self) -> T {
        self.log_tau.exp()
    }

    /// `φ_msg(h_u)`.
    pub fn message(&self, h_u: &[T]) -> Result<Vec<T>, GnnError> {
        if h_u.len() != self.hidden() {
            return Err(GnnError::ShapeMismatch("message input width"));
        }
        let pre = self.msg_in.apply(h_u);
        let act: Vec<T> = pre.iter().map(|&v| leaky_relu(v)).collect();
        Ok(self.msg_out.apply(&act))
    }

    #[inline]
    fn src_part(&self, h_u: &[T]) -> T {
        dot(&self.score.weight[..self.hidden()], h_u)
    }

    #[inline]
    fn dst_part(&self, h_v: &[T]) -> T {
        dot(&self.score.weight[self.hidden()..], h_v)
    }

    /// Raw compatibility score `a(h_u, h_v)`.
    pub fn score(&self, h_u: &[T], h_v: &[T]) -> T {
        (self.src_part(h_u) + self.dst_part(h_v)) + self.score.bias[0]
    }

    /// Attention of `h_v` over its neighbours' states.
    pub fn attention_weights(&self, neighbors: &[&[T]], h_v: &[T]) -> Result<Vec<T>, GnnError> {
        if neighbors.is_empty() {
            return Err(GnnError::NoNeighbors);
        }
        let h = self.hidden();
        if h_v.len() != h || neighbors.iter().any(|n| n.len() != h) {
            return Err(GnnError::ShapeMismatch("attention input width"));
        }
        let inv_tau = T::one() / self.tau();
        let mut w: Vec<T> = neighbors.iter().map(|hu| self.score(hu, h_v) * inv_tau).collect();
        softmax_in_place(&mut w);
        Ok(w)
    }

    /// One message-passing step over all nodes of `h` (row-major `n × hidden`).
    pub fn forward(&self, h: &[T], adj: &Adjacency) -> Result<(Vec<T>, LayerCache<T>), GnnError> {
        let hid = self.hidden();
        let n = adj.len();
        if h.len() != n * hid {
            return Err(GnnError::ShapeMismatch("layer input size"));
        }
        let mut msg_pre = vec![T::zero(); n * hid];
        let mut msg_act = vec![T::zero(); n * hid];
        let mut messages = vec![T::zero(); n * hid];
        let mut src = vec![T::zero(); n];
        let mut dst = vec![T::zero(); n];
        for u in 0..n {
            let hu = &h[u * hid..(u + 1) * hid];
            let pre = &mut msg_pre[u * hid..(u + 1) * hid];
            self.msg_in.forward(hu, pre);
            let act = &mut msg_act[u * hid..(u + 1) * hid];
            for (a, &p) in act.iter_mut().zip(pre.iter()) {
                *a = leaky_relu(p);
            }
            self.msg_out.forward(act, &mut messages[u * hid..(u + 1) * hid]);
            src[u] = self.src_part(hu);
            dst[u] = self.dst_part(hu);
        }

        let inv_tau = T::one() / self.tau();
        let b = self.score.bias[0];
        let m = adj.directed_edge_count();
        let mut logits = vec![T::zero(); m];
        let mut alpha = vec![T::zero(); m];
        let mut aggregated = vec![T::zero(); n * hid];
        let mut out = vec![T::zero(); n * hid];
        for v in 0..n {
            let r = adj.range(v);
            for (idx, &u) in r.clone().zip(adj.neighbors(v)) {
                logits[idx] = ((src[u as usize] + dst[v]) + b) * inv_tau;
            }
            alpha[r.clone()].copy_from_slice(&logits[r.clone()]);
            softmax_in_place(&mut alpha[r.clone()]);
            let agg = &mut aggregated[v * hid..(v + 1) * hid];
            for (idx, &u) in r.zip(adj.neighbors(v)) {
                axpy(alpha[idx], &messages[u as usize * hid..(u as usize + 1) * hid], agg);
            }
            for (o, &a) in out[v * hid..(v + 1) * hid].iter_mut().zip(agg.iter()) {
                *o = leaky_relu(a);
            }
        }
        Ok((out, LayerCache { msg_pre, msg_act, messages, logits, alpha, aggregated }))
    }

    /// Accumulates parameter gradients into `grad`; returns `dL/dh_in`.
    pub fn backward(
        &self,
        h: &[T],
        adj: &Adjacency,
        cache: &LayerCache<T>,
        d_out: &[T],
        grad: &mut MessageLayer<T>,
    ) -> Vec<T> {
        let hid = self.hidden();
        let n = adj.len();
        let inv_tau = T::one() / self.tau();
        let mut d_msg = vec![T::zero(); n * hid];
        let mut d_src = vec![T::zero(); n];
        let mut d_dst = vec![T::zero(); n];
        let mut d_bias = T::zero();
        let mut d_log_tau = T::zero();
        let mut d_agg = vec![T::zero(); hid];
        let mut d_alpha: Vec<T> = Vec::new();

        for v in 0..n {
            for ((g, &o), &a) in d_agg
                .iter_mut()
                .zip(&d_out[v * hid..(v + 1) * hid])
                .zip(&cache.aggregated[v * hid..(v + 1) * hid])
            {
                *g = o * leaky_relu_grad(a);
            }
            let r = adj.range(v);
            d_alpha.clear();
            for (idx, &u) in r.clone().zip(adj.neighbors(v)) {
                let u = u as usize;
                d_alpha.push(dot(&d_agg, &cache.messages[u * hid..(u + 1) * hid]));
                axpy(cache.alpha[idx], &d_agg, &mut d_msg[u * hid..(u + 1) * hid]);
            }
            let weighted: T = r.clone().zip(&d_alpha).map(|(idx, &da)| cache.alpha[idx] * da).sum();
            for ((idx, &u), &da) in r.zip(adj.neighbors(v)).zip(&d_alpha) {
                let d_logit = cache.alpha[idx] * (da - weighted);
                let d_score = d_logit * inv_tau;
                d_log_tau -= d_logit * cache.logits[idx];
                d_src[u as usize] += d_score;
                d_dst[v] += d_score;
                d_bias += d_score;
            }
        }

        let mut d_h = vec![T::zero(); n * hid];
        let (w_src, w_dst) = self.score.weight.split_at(hid);
        {
            let (g_src, g_dst) = grad.score.weight.split_at_mut(hid);
            for u in 0..n {
                let hu = &h[u * hid..(u + 1) * hid];
                axpy(d_src[u], hu, g_src);
                axpy(d_dst[u], hu, g_dst);
                let dh = &mut d_h[u * hid..(u + 1) * hid];
                axpy(d_src[u], w_src, dh);
                axpy(d_dst[u], w_dst, dh);
            }
        }
        grad.score.bias[0] += d_bias;
        grad.log_tau += d_log_tau;

        let mut d_act = vec![T::zero(); hid];
        for u in 0..n {
            let sl = u * hid..(u + 1) * hid;
            d_act.iter_mut().for_each(|v| *v = T::zero());
            self.msg_out
                .backward(&cache.msg_act[sl.clone()], &d_msg[sl.clone()], &mut grad.msg_out, Some(&mut d_act));
            for (g, &p) in d_act.iter_mut().zip(&cache.msg_pre[sl.clone()]) {
                *g *= leaky_relu_grad(p);
            }
            self.msg_in.backward(&h[sl.clone()], &d_act, &mut grad.msg_in, Some(&mut d_h[sl]));
        }
        d_h
    }
}

/// `Σ_u α_u m_u`.
pub fn aggregate<T: Scalar>(messages: &[&[T]], alpha: &[T]) -> Result<Vec<T>, GnnError> {
    if messages.len() != alpha.len() {
        return Err(GnnError::ShapeMismatch("one weight per message"));
    }
    let Some(first) = messages.first() else {
        return Err(GnnError::NoNeighbors);
    };
    let mut out = vec![T::zero(); first.len()];
    for (m, &a) in messages.iter().zip(alpha) {
        if m.len() != out.len() {
            return Err(GnnError::ShapeMismatch("message width"));
        }
        axpy(a, m, &mut out);
    }
    Ok(out)
}

pub fn softmax_in_place<T: Scalar>(xs: &mut [T]) {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EncoderConfig {
    pub in_dim: usize,
    pub hidden: usize,
    pub layers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T> {
    pub input: Linear<T>,
    pub layers: Vec<MessageLayer<T>>,
}

#[derive(Debug, Clone)]
pub struct EncoderCache<T> {
    /// `hidden[k]` holds the node states entering layer `k`; the last entry
    /// is the output of the final layer.
    pub hidden: Vec<Vec<T>>,
    pub layers: Vec<LayerCache<T>>,
    pub pooled: Vec<T>,
}

impl<T: Scalar> Encoder<T> {
    pub fn init(cfg: EncoderConfig, rng: &mut CounterRng) -> Self {
        Self {
            input: Linear::uniform(cfg.hidden, cfg.in_dim, rng),
            layers: (0..cfg.layers).map(|_| MessageLayer::init(cfg.hidden, rng)).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            input: self.input.zeros_like(),
            layers: self.layers.iter().map(MessageLayer::zeros_like).collect(),
        }
    }

    pub fn config(&self) -> EncoderConfig {
        EncoderConfig { in_dim: self.input.in_dim, hidden: self.input.out_dim, layers: self.layers.len() }
    }

    pub fn hidden(&self) -> usize {
        self.input.out_dim
    }

    /// Runs all layers on scaled node features `x` (row-major `n × in_dim`).
    pub fn forward(&self, x: &[T], adj: &Adjacency) -> Result<EncoderCache<T>, GnnError> {
        let (d, hid, n) = (self.input.in_dim, self.hidden(), adj.len());
        if x.len() != n * d {
            return Err(GnnError::ShapeMismatch("feature matrix size"));
        }
        let mut h0 = vec![T::zero(); n * hid];
        for v in 0..n {
            self.input.forward(&x[v * d..(v + 1) * d], &mut h0[v * hid..(v + 1) * hid]);
        }
        let mut hidden = Vec::with_capacity(self.layers.len() + 1);
        let mut caches = Vec::with_capacity(self.layers.len());
        hidden.push(h0);
        for layer in &self.layers {
            let (next, cache) = layer.forward(hidden.last().expect("nonempty"), adj)?;
            hidden.push(next);
            caches.push(cache);
        }
        let pooled = mean_pool(hidden.last().expect("nonempty"), n, hid);
        Ok(EncoderCache { hidden, layers: caches, pooled })
    }

    /// Graph embedding `h_G`.
    pub fn encode(&self, x: &[T], adj: &Adjacency) -> Result<Vec<T>, GnnError> {
        Ok(self.forward(x, adj)?.pooled)
    }

    /// Backpropagates `dL/dh_G` through pooling and every layer.
    pub fn backward(
        &self,
        x: &[T],
        adj: &Adjacency,
        cache: &EncoderCache<T>,
        d_pooled: &[T],
        grad: &mut Encoder<T>,
    ) {
        let (d, hid, n) = (self.input.in_dim, self.hidden(), adj.len());
        let scale = T::one() / T::lit(n as f64);
        let mut d_h = vec![T::zero(); n * hid];
        for v in 0..n {
            axpy(scale, d_pooled, &mut d_h[v * hid..(v + 1) * hid]);
        }
        for (k, layer) in self.layers.iter().enumerate().rev() {
            d_h = layer.backward(&cache.hidden[k], adj, &cache.layers[k], &d_h, &mut grad.layers[k]);
        }
        for v in 0..n {
            self.input.backward(&x[v * d..(v + 1) * d], &d_h[v * hid..(v + 1) * hid], &mut grad.input, None);
        }
    }
}

/// `(1/n) Σ_v h_v`.
pub fn mean_pool<T: Scalar>(h: &[T], n: usize, hid: usize) -> Vec<T> {
    let mut out = vec![T::zero(); hid];
    for v in 0..n {
        for (o, &x) in out.iter_mut().zip(&h[v * hid..(v + 1) * hid]) {
            *o += x;
        }
    }
    let inv = T::one() / T::lit(n as f64);
    out.iter_mut().for_each(|o| *o *= inv);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Domain;

    fn layer(hidden: usize, seed: u64) -> MessageLayer<f64> {
        MessageLayer::init(hidden, &mut CounterRng::new(seed, Domain::Test, 0))
    }

    #[test]
    fn zero_weight_message_is_propagated_bias() {
        let mut l = layer(3, 1);
        l.msg_in.weight.iter_mut().for_each(|w| *w = 0.0);
        l.msg_out.weight.iter_mut().for_each(|w| *w = 0.0);
        l.msg_in.bias = vec![1.0, -2.0, 0.5];
        l.msg_out.bias = vec![0.25, 0.0, -1.0];
        assert_eq!(l.message(&[9.0, 9.0, 9.0]).unwrap(), vec![0.25, 0.0, -1.0]);
        assert!(matches!(l.message(&[1.0]), Err(GnnError::ShapeMismatch(_))));
    }

    #[test]
    fn zero_bias_message_of_zero_state_is_zero() {
        let mut l = layer(4, 2);
        l.msg_in.bias.iter_mut().for_each(|b| *b = 0.0);
        l.msg_out.bias.iter_mut().for_each(|b| *b = 0.0);
        assert_eq!(l.message(&[0.0; 4]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn message_matches_direct_arithmetic() {
        let l = layer(3, 7);
        let h = [0.3, -1.2, 0.8];
        let mut hidden = [0.0; 3];
        for o in 0..3 {
            let mut s = l.msg_in.bias[o];
            for i in 0..3 {
                s += l.msg_in.weight[o * 3 + i] * h[i];
            }
            hidden[o] = if s >= 0.0 { s } else { 0.1 * s };
        }
        let got = l.message(&h).unwrap();
        for o in 0..3 {
            let mut s = l.msg_out.bias[o];
            for i in 0..3 {
                s += l.msg_out.weight[o * 3 + i] * hidden[i];
            }
            assert!((got[o] - s).abs() < 1e-14);
        }
    }

    #[test]
    fn attention_examples() {
        let mut l = layer(1, 3);
        l.score.weight = vec![1.0, 0.0];
        l.score.bias = vec![0.0];
        let w = l.attention_weights(&[&[0.5], &[0.5]], &[1.0]).unwrap();
        assert_eq!(w, vec![0.5, 0.5]);
        assert_eq!(l.attention_weights(&[&[3.0]], &[1.0]).unwrap(), vec![1.0]);
        let ln2 = core::f64::consts::LN_2;
        let w = l.attention_weights(&[&[ln2], &[0.0]], &[0.0]).unwrap();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15 && (w[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(l.attention_weights(&[], &[0.0]), Err(GnnError::NoNeighbors));
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate(&[&[1.5, -2.0]], &[1.0]).unwrap(), vec![1.5, -2.0]);
        assert_eq!(aggregate(&[&[2.0, 0.0], &[0.0, 2.0]], &[0.5, 0.5]).unwrap(), vec![1.0, 1.0]);
        let got: Vec<f64> = aggregate(&[&[3.0, 0.0], &[0.0, 3.0]], &[2.0 / 3.0, 1.0 / 3.0]).unwrap();
        assert!((got[0] - 2.0).abs() < 1e-15 && (got[1] - 1.0).abs() < 1e-15);
        assert!(aggregate::<f64>(&[&[1.0]], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn isolated_node_is_rejected() {
        assert_eq!(Adjacency::new(3, &[(0, 1)]), Err(GnnError::IsolatedNode(2)));
        assert_eq!(Adjacency::new(2, &[(0, 5)]), Err(GnnError::EdgeOutOfRange(0, 5)));
        let self_loop = Adjacency::new(1, &[(0, 0)]).unwrap();
        assert_eq!(self_loop.neighbors(0), &[0]);
    }

    #[test]
    fn leaky_activation_on_layer_output() {
        // One neighbour with fixed message => output is LeakyReLU(message).
        let mut l = layer(2, 5);
        l.msg_in.weight.iter_mut().for_each(|w| *w = 0.0);
        l.msg_out.weight.iter_mut().for_each(|w| *w = 0.0);
        l.msg_out.bias = vec![-1.0, 2.0];
        let adj = Adjacency::new(2, &[(0, 1)]).unwrap();
        let (out, _) = l.forward(&[0.1, 0.2, 0.3, 0.4], &adj).unwrap();
        assert!((out[0] + 0.1).abs() < 1e-15);
        assert_eq!(out[1], 2.0);
    }
}
