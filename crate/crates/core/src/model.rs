//! Shared encoder trunk with one output head per target.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::gnn::{Adjacency, Encoder, EncoderConfig, GnnError};
use crate::maf::{base_log_density, Flow, FlowConfig, FlowError};
use crate::nn::Linear;
use crate::rng::{CounterRng, Domain};
use crate::scalar::Scalar;
use crate::target::{HeadKind, TargetSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ModelConfig {
    pub hidden: usize,
    pub layers: usize,
    pub flow_blocks: usize,
    pub flow_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: 128, layers: 4, flow_blocks: 10, flow_hidden: 128 }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("head {0} is not deterministic")]
    WrongHeadKind(usize),
    #[error("expected {expected} values per graph, got {got}")]
    TargetArity { expected: usize, got: usize },
    #[error("non-finite loss in head `{0}`")]
    NonFiniteLoss(String),
    #[error("non-finite gradient for `{0}`")]
    NonFiniteGradient(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Head<T> {
    /// `ŷ = wᵀ h_G + b`.
    Deterministic(Linear<T>),
    Probabilistic(Flow<T>),
}

impl<T: Scalar> Head<T> {
    pub fn kind(&self) -> HeadKind {
        match self {
            Head::Deterministic(_) => HeadKind::Deterministic,
            Head::Probabilistic(_) => HeadKind::Probabilistic,
        }
    }

    fn zeros_like(&self) -> Self {
        match self {
            Head::Deterministic(l) => Head::Deterministic(l.zeros_like()),
            Head::Probabilistic(f) => Head::Probabilistic(f.zeros_like()),
        }
    }

    fn cast<U: Scalar>(&self) -> Head<U> {
        match self {
            Head::Deterministic(l) => Head::Deterministic(l.cast()),
            Head::Probabilistic(f) => Head::Probabilistic(f.cast()),
        }
    }
}

/// Which part of the model a parameter tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Owner {
    Encoder,
    Head(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub owner: Owner,
}

/// Loss of one graph: the weighted sum and each head's weighted term.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphLoss<T> {
    pub total: T,
    pub per_head: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub targets: TargetSpec,
    pub encoder: Encoder<T>,
    pub heads: Vec<Head<T>>,
}

impl<T: Scalar> Model<T> {
    pub fn init(config: ModelConfig, in_dim: usize, targets: TargetSpec, seed: u64) -> Self {
        let mut rng = CounterRng::new(seed, Domain::Init, 0);
        let encoder =
            Encoder::init(EncoderConfig { in_dim, hidden: config.hidden, layers: config.layers }, &mut rng);
        let heads = targets
            .heads()
            .iter()
            .map(|h| match h.kind {
                HeadKind::Deterministic => Head::Deterministic(Linear::zeros(1, config.hidden)),
                HeadKind::Probabilistic => Head::Probabilistic(Flow::init(
                    FlowConfig { dim: 1, context: config.hidden, blocks: config.flow_blocks, hidden: config.flow_hidden },
                    &mut rng,
                )),
            })
            .collect();
        Self { config, targets, encoder, heads }
    }

    pub fn in_dim(&self) -> usize {
        self.encoder.input.in_dim
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config,
            targets: self.targets.clone(),
            encoder: self.encoder.zeros_like(),
            heads: self.heads.iter().map(Head::zeros_like).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config,
            targets: self.targets.clone(),
            encoder: Encoder { input: self.encoder.input.cast(), layers: self.encoder.layers.iter().map(cast_layer).collect() },
            heads: self.heads.iter().map(Head::cast).collect(),
        }
    }

    fn walk<'a>(&'a self, f: &mut dyn FnMut(String, Vec<usize>, Owner, &'a [T], Option<&'a [bool]>)) {
        fn lin<'a, T>(
            f: &mut dyn FnMut(String, Vec<usize>, Owner, &'a [T], Option<&'a [bool]>),
            prefix: &str,
            owner: Owner,
            l: &'a Linear<T>,
        ) {
            f(format!("{prefix}.weight"), vec![l.out_dim, l.in_dim], owner, &l.weight, l.mask.as_deref());
            f(format!("{prefix}.bias"), vec![l.out_dim], owner, &l.bias, None);
        }
        let enc = Owner::Encoder;
        lin(f, "encoder.input", enc, &self.encoder.input);
        for (k, layer) in self.encoder.layers.iter().enumerate() {
            lin(f, &format!("encoder.layers.{k}.msg_in"), enc, &layer.msg_in);
            lin(f, &format!("encoder.layers.{k}.msg_out"), enc, &layer.msg_out);
            lin(f, &format!("encoder.layers.{k}.score"), enc, &layer.score);
            f(format!("encoder.layers.{k}.log_tau"), vec![1], enc, core::slice::from_ref(&layer.log_tau), None);
        }
        for (i, (head, spec)) in self.heads.iter().zip(self.targets.heads()).enumerate() {
            let owner = Owner::Head(i);
            match head {
                Head::Deterministic(l) => lin(f, &format!("heads.{}.linear", spec.name), owner, l),
                Head::Probabilistic(flow) => {
                    for (b, made) in flow.blocks.iter().enumerate() {
                        let p = format!("heads.{}.blocks.{b}", spec.name);
                        lin(f, &format!("{p}.l1"), owner, &made.l1);
                        lin(f, &format!("{p}.l2"), owner, &made.l2);
                        lin(f, &format!("{p}.l3"), owner, &made.l3);
                    }
                }
            }
        }
    }

    fn walk_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut [T])) {
        fn lin<'a, T>(f: &mut dyn FnMut(&'a mut [T]), l: &'a mut Linear<T>) {
            let Linear { weight, bias, .. } = l;
            f(weight);
            f(bias);
        }
        let Model { encoder, heads, .. } = self;
        lin(f, &mut encoder.input);
        for layer in &mut encoder.layers {
            let crate::gnn::MessageLayer { msg_in, msg_out, score, log_tau } = layer;
            lin(f, msg_in);
            lin(f, msg_out);
            lin(f, score);
            f(core::slice::from_mut(log_tau));
        }
        for head in heads {
            match head {
                Head::Deterministic(l) => lin(f, l),
                Head::Probabilistic(flow) => {
                    for made in &mut flow.blocks {
                        let crate::maf::Made { l1, l2, l3 } = made;
                        lin(f, l1);
                        lin(f, l2);
                        lin(f, l3);
                    }
                }
            }
        }
    }

    /// Names, shapes and owners of all parameter tensors, in storage order.
    pub fn tensor_specs(&self) -> Vec<TensorSpec> {
        let mut out = Vec::new();
        self.walk(&mut |name, shape, owner, _, _| out.push(TensorSpec { name, shape, owner }));
        out
    }

    pub fn param_slices(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        self.walk(&mut |_, _, _, data, _| out.push(data));
        out
    }

    /// Connectivity masks aligned with [`Model::param_slices`].
    pub fn param_masks(&self) -> Vec<Option<&[bool]>> {
        let mut out = Vec::new();
        self.walk(&mut |_, _, _, _, mask| out.push(mask));
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        self.walk_mut(&mut |s| out.push(s));
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    /// `self += other` for every parameter.
    pub fn add_assign(&mut self, other: &Model<T>) {
        let src = other.param_slices();
        for (dst, src) in self.param_slices_mut().into_iter().zip(src) {
            for (a, &b) in dst.iter_mut().zip(src) {
                *a += b;
            }
        }
    }

    pub fn fill_zero(&mut self) {
        self.walk_mut(&mut |s| s.iter_mut().for_each(|v| *v = T::zero()));
    }

    pub fn embed(&self, x: &[T], adj: &Adjacency) -> Result<Vec<T>, ModelError> {
        Ok(self.encoder.encode(x, adj)?)
    }

    /// Standardized output of a deterministic head.
    pub fn deterministic_head(&self, h_g: &[T], i: usize) -> Result<T, ModelError> {
        match self.heads.get(i) {
            Some(Head::Deterministic(l)) => {
                if h_g.len() != l.in_dim {
                    return Err(GnnError::ShapeMismatch("graph embedding width").into());
                }
                Ok(l.apply(h_g)[0])
            }
            _ => Err(ModelError::WrongHeadKind(i)),
        }
    }

    /// Standardized point prediction of head `i`: the linear output, or the
    /// Monte-Carlo mean over `samples` draws of stream `element`.
    pub fn head_point(&self, h_g: &[T], i: usize, samples: usize, seed: u64, element: u64) -> Result<T, ModelError> {
        match &self.heads[i] {
            Head::Deterministic(_) => self.deterministic_head(h_g, i),
            Head::Probabilistic(f) => Ok(f.mc_mean_stream(h_g, samples, seed, element)?[0]),
        }
    }

    /// Standardized draws of a probabilistic head (empty for deterministic heads).
    pub fn head_samples(&self, h_g: &[T], i: usize, n: usize, seed: u64, element: u64) -> Result<Vec<T>, ModelError> {
        match &self.heads[i] {
            Head::Deterministic(_) => Ok(Vec::new()),
            Head::Probabilistic(f) => Ok(f.sample_stream(h_g, n, seed, element)?),
        }
    }

    fn check_targets(&self, y: &[Option<T>], weights: &[T]) -> Result<(), ModelError> {
        for len in [y.len(), weights.len()] {
            if len != self.heads.len() {
                return Err(ModelError::TargetArity { expected: self.heads.len(), got: len });
            }
        }
        Ok(())
    }

    fn active(y: &[Option<T>], weights: &[T], j: usize) -> Option<(T, T)> {
        match y[j] {
            Some(t) if weights[j] != T::zero() => Some((t, weights[j])),
            _ => None,
        }
    }

    /// Weighted loss of one graph without gradients. Head `j` contributes
    /// `weights[j]` times its squared error or negative log-likelihood
    /// whenever `y[j]` is present.
    pub fn loss(&self, x: &[T], adj: &Adjacency, y: &[Option<T>], weights: &[T]) -> Result<GraphLoss<T>, ModelError> {
        self.check_targets(y, weights)?;
        let mut per_head = vec![T::zero(); self.heads.len()];
        if (0..self.heads.len()).all(|j| Self::active(y, weights, j).is_none()) {
            return Ok(GraphLoss { total: T::zero(), per_head });
        }
        let h_g = self.embed(x, adj)?;
        for (j, head) in self.heads.iter().enumerate() {
            let Some((t, w)) = Self::active(y, weights, j) else { continue };
            per_head[j] = w * match head {
                Head::Deterministic(l) => {
                    let r = l.apply(&h_g)[0] - t;
                    r * r
                }
                Head::Probabilistic(f) => -f.log_prob(&[t], &h_g)?,
            };
            if !per_head[j].is_finite() {
                return Err(ModelError::NonFiniteLoss(self.targets.heads()[j].name.clone()));
            }
        }
        Ok(GraphLoss { total: per_head.iter().copied().sum(), per_head })
    }

    /// Same as [`Model::loss`], additionally accumulating parameter gradients
    /// into `grad` (which must have this model's shape).
    pub fn loss_and_grad(
        &self,
        x: &[T],
        adj: &Adjacency,
        y: &[Option<T>],
        weights: &[T],
        grad: &mut Model<T>,
    ) -> Result<GraphLoss<T>, ModelError> {
        self.check_targets(y, weights)?;
        let mut per_head = vec![T::zero(); self.heads.len()];
        if (0..self.heads.len()).all(|j| Self::active(y, weights, j).is_none()) {
            return Ok(GraphLoss { total: T::zero(), per_head });
        }
        let cache = self.encoder.forward(x, adj)?;
        let h_g = &cache.pooled;
        let mut d_hg = vec![T::zero(); h_g.len()];
        for (j, (head, g)) in self.heads.iter().zip(grad.heads.iter_mut()).enumerate() {
            let Some((t, w)) = Self::active(y, weights, j) else { continue };
            match (head, g) {
                (Head::Deterministic(l), Head::Deterministic(gl)) => {
                    let r = l.apply(h_g)[0] - t;
                    per_head[j] = w * r * r;
                    l.backward(h_g, &[T::lit(2.0) * w * r], gl, Some(&mut d_hg));
                }
                (Head::Probabilistic(f), Head::Probabilistic(gf)) => {
                    let fc = f.forward_cached(&[t], h_g)?;
                    per_head[j] = -w * (base_log_density(&fc.z) + fc.logdet);
                    f.nll_backward(&fc, w, gf, &mut d_hg);
                }
                _ => return Err(ModelError::WrongHeadKind(j)),
            }
            if !per_head[j].is_finite() {
                return Err(ModelError::NonFiniteLoss(self.targets.heads()[j].name.clone()));
            }
        }
        self.encoder.backward(x, adj, &cache, &d_hg, &mut grad.encoder);
        Ok(GraphLoss { total: per_head.iter().copied().sum(), per_head })
    }
}

fn cast_layer<T: Scalar, U: Scalar>(l: &crate::gnn::MessageLayer<T>) -> crate::gnn::MessageLayer<U> {
    crate::gnn::MessageLayer {
        msg_in: l.msg_in.cast(),
        msg_out: l.msg_out.cast(),
        score: l.score.cast(),
        log_tau: U::lit(l.log_tau.as_f64()),
    }
}

/// Central finite-difference step used by [`gradient_check`].
pub const FD_STEP: f64 = 1e-5;

/// Largest `|g_a − g_f| / max(1, |g_a|, |g_f|)` over every unmasked parameter
/// scalar, comparing analytic gradients with central differences.
pub fn gradient_check(
    model: &Model<f64>,
    x: &[f64],
    adj: &Adjacency,
    y: &[Option<f64>],
    weights: &[f64],
) -> Result<f64, ModelError> {
    let mut grad = model.zeros_like();
    model.loss_and_grad(x, adj, y, weights, &mut grad)?;
    let specs = model.tensor_specs();
    let masks: Vec<Option<Vec<bool>>> = model.param_masks().into_iter().map(|m| m.map(<[bool]>::to_vec)).collect();
    let analytic: Vec<Vec<f64>> = grad.param_slices().into_iter().map(<[f64]>::to_vec).collect();
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for (t, spec) in specs.iter().enumerate() {
        for i in 0..analytic[t].len() {
            if masks[t].as_ref().is_some_and(|m| !m[i]) {
                continue;
            }
            let orig = probe.param_slices()[t][i];
            probe.param_slices_mut()[t][i] = orig + FD_STEP;
            let plus = probe.loss(x, adj, y, weights)?.total;
            probe.param_slices_mut()[t][i] = orig - FD_STEP;
            let minus = probe.loss(x, adj, y, weights)?.total;
            probe.param_slices_mut()[t][i] = orig;
            let fd = (plus - minus) / (2.0 * FD_STEP);
            let an = analytic[t][i];
            if !fd.is_finite() || !an.is_finite() {
                return Err(ModelError::NonFiniteGradient(spec.name.clone()));
            }
            worst = worst.max((an - fd).abs() / 1.0f64.max(an.abs()).max(fd.abs()));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::target::HeadSpec;

    fn spec(kinds: &[HeadKind]) -> TargetSpec {
        TargetSpec::new(
            kinds
                .iter()
                .enumerate()
                .map(|(i, &kind)| HeadSpec::new(&format!("t{i}"), "", kind))
                .collect(),
        )
        .unwrap()
    }

    fn small() -> ModelConfig {
        ModelConfig { hidden: 4, layers: 2, flow_blocks: 2, flow_hidden: 5 }
    }

    #[test]
    fn deterministic_head_examples() {
        let mut m = Model::<f64>::init(small(), 3, spec(&[HeadKind::Deterministic, HeadKind::Probabilistic]), 1);
        let Head::Deterministic(l) = &mut m.heads[0] else { unreachable!() };
        l.bias[0] = 3.5;
        assert_eq!(m.deterministic_head(&[9.0, -1.0, 2.0, 0.0], 0).unwrap(), 3.5);
        let Head::Deterministic(l) = &mut m.heads[0] else { unreachable!() };
        l.bias[0] = 0.0;
        l.weight = vec![1.0, 0.0, 0.0, 0.0];
        assert_eq!(m.deterministic_head(&[2.0, 5.0, 6.0, 7.0], 0).unwrap(), 2.0);
        assert_eq!(m.deterministic_head(&[0.0; 4], 1), Err(ModelError::WrongHeadKind(1)));
    }

    #[test]
    fn tensor_listing_is_consistent() {
        let mut m = Model::<f32>::init(small(), 3, spec(&[HeadKind::Deterministic, HeadKind::Probabilistic]), 2);
        let specs = m.tensor_specs();
        let lens: Vec<usize> = m.param_slices().iter().map(|s| s.len()).collect();
        assert_eq!(specs.len(), lens.len());
        for (s, &n) in specs.iter().zip(&lens) {
            assert_eq!(s.shape.iter().product::<usize>(), n, "{}", s.name);
        }
        let mut_lens: Vec<usize> = m.param_slices_mut().iter().map(|s| s.len()).collect();
        assert_eq!(lens, mut_lens);
        assert_eq!(specs[0].name, "encoder.input.weight");
        assert!(specs.iter().any(|s| s.name == "heads.t1.blocks.1.l3.bias" && s.owner == Owner::Head(1)));
    }

    #[test]
    fn zero_init_heads_predict_zero() {
        let m = Model::<f64>::init(small(), 2, spec(&[HeadKind::Deterministic]), 3);
        let adj = Adjacency::new(2, &[(0, 1)]).unwrap();
        let h = m.embed(&[0.1, 0.2, 0.3, 0.4], &adj).unwrap();
        assert_eq!(m.deterministic_head(&h, 0).unwrap(), 0.0);
    }
}
