//! Minibatch training with AdamW, plateau learning-rate halving and per-head
//! early stopping.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::gnn::{Adjacency, GnnError};
use crate::graph::{FeatureScaler, PinGraph, ScalerError, TargetScaler};
use crate::model::{Model, ModelError, Owner};
use crate::optim::{median, AdamW, AdamWConfig, OptimError, PlateauScheduler, IMPROVEMENT_EPS};
use crate::rng::{CounterRng, Domain};
use crate::scalar::Scalar;
use crate::target::HeadKind;

/// Graphs per gradient chunk. Chunks are summed in index order, so the
/// result does not depend on how many workers evaluate them.
pub const CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[cfg(feature = "serde")]
impl serde::Serialize for Precision {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(match self {
            Precision::F32 => 32,
            Precision::F64 => 64,
        })
    }
}

#[cfg(feature = "serde")]
impl<'de> serde::Deserialize<'de> for Precision {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match u8::deserialize(d)? {
            32 => Ok(Precision::F32),
            64 => Ok(Precision::F64),
            other => Err(serde::de::Error::custom(alloc::format!("precision must be 32 or 64, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr_patience: usize,
    pub lr_factor: f64,
    pub head_patience: usize,
    pub noise_std: f64,
    pub mc_samples: usize,
    pub seed: u64,
    pub deterministic: bool,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-4,
            betas: (0.9, 0.999),
            eps: 1e-8,
            batch_size: 64,
            max_epochs: 200,
            lr_patience: 5,
            lr_factor: 0.5,
            head_patience: 10,
            noise_std: 0.1,
            mc_samples: 256,
            seed: 0,
            deterministic: true,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return bad("lr_factor must lie in (0, 1)");
        }
        if self.lr_patience == 0 || self.head_patience == 0 {
            return bad("patience values must be at least 1");
        }
        if self.batch_size == 0 || self.mc_samples == 0 {
            return bad("batch_size and mc_samples must be at least 1");
        }
        if !(self.noise_std >= 0.0) || self.weight_decay < 0.0 {
            return bad("noise_std and weight_decay must be non-negative");
        }
        Ok(())
    }

    pub fn adamw(&self, lr: f64) -> AdamWConfig {
        AdamWConfig { lr, weight_decay: self.weight_decay, beta1: self.betas.0, beta2: self.betas.1, eps: self.eps }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("the {0} split is empty")]
    EmptySplit(&'static str),
    #[error("non-finite loss in head `{head}` at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { head: String, epoch: usize, batch: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Scaler(#[from] ScalerError),
    #[error(transparent)]
    Gnn(#[from] GnnError),
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HeadState {
    pub name: String,
    pub frozen: bool,
    pub best_val: f64,
    pub epochs_since_improve: usize,
    pub loss_kind: LossKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum LossKind {
    #[cfg_attr(feature = "serde", serde(rename = "MSE"))]
    Mse,
    #[cfg_attr(feature = "serde", serde(rename = "NLL"))]
    Nll,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LogEntry {
    pub epoch: usize,
    pub lr: f64,
    pub head: String,
    pub split: String,
    /// `None` when no graph in the split carries this head's target.
    pub loss: Option<f64>,
    pub frozen: bool,
}

/// A graph ready for the model: scaled features, neighbour lists and
/// standardized targets.
#[derive(Debug, Clone)]
pub struct Prepared<T> {
    pub x: Vec<T>,
    pub adj: Adjacency,
    pub y: Vec<Option<T>>,
}

pub fn prepare<T: Scalar>(g: &PinGraph, fs: &FeatureScaler, ts: &TargetScaler) -> Result<Prepared<T>, TrainError> {
    let x = fs.apply(g)?;
    let adj = g.adjacency()?;
    if g.y.len() != ts.len() {
        return Err(ScalerError::DimensionMismatch { expected: ts.len(), found: g.y.len() }.into());
    }
    let y = g
        .y
        .iter()
        .zip(&g.y_mask)
        .enumerate()
        .map(|(i, (&v, &m))| m.then(|| T::lit(ts.apply(i, v))))
        .collect();
    Ok(Prepared { x, adj, y })
}

impl PinGraph {
    pub fn adjacency(&self) -> Result<Adjacency, GnnError> {
        Adjacency::new(self.n, &self.edges)
    }
}

/// Adds i.i.d. `N(0, noise_std²)` noise, drawn from the stream `(seed, Noise, stream)`.
pub fn add_feature_noise<T: Scalar>(x: &mut [T], noise_std: f64, seed: u64, stream: u64) {
    if noise_std == 0.0 {
        return;
    }
    let mut rng = CounterRng::new(seed, Domain::Noise, stream);
    for v in x {
        *v += T::lit(noise_std * rng.normal());
    }
}

/// Executes independent jobs, returning results in index order.
pub trait Parallelism: Sync {
    fn map<R: Send, F: Fn(usize) -> R + Sync>(&self, n: usize, f: F) -> Vec<R>;
}

pub struct Sequential;

impl Parallelism for Sequential {
    fn map<R: Send, F: Fn(usize) -> R + Sync>(&self, n: usize, f: F) -> Vec<R> {
        (0..n).map(f).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub epochs_run: usize,
    pub final_lr: f64,
    pub heads: Vec<HeadState>,
}

fn noise_stream(epoch: usize, graph: usize) -> u64 {
    ((epoch as u64) << 32) | graph as u64
}

/// Per-head mean loss over graphs carrying that head's target.
pub fn split_losses<T: Scalar, P: Parallelism>(
    model: &Model<T>,
    graphs: &[Prepared<T>],
    par: &P,
) -> Result<Vec<Option<f64>>, TrainError> {
    let h = model.heads.len();
    let ones = vec![T::one(); h];
    let chunks = graphs.len().div_ceil(CHUNK);
    let parts = par.map(chunks, |c| -> Result<(Vec<f64>, Vec<usize>), ModelError> {
        let mut sum = vec![0.0; h];
        let mut cnt = vec![0usize; h];
        for g in &graphs[c * CHUNK..((c + 1) * CHUNK).min(graphs.len())] {
            let l = model.loss(&g.x, &g.adj, &g.y, &ones)?;
            for j in 0..h {
                if g.y[j].is_some() {
                    sum[j] += l.per_head[j].as_f64();
                    cnt[j] += 1;
                }
            }
        }
        Ok((sum, cnt))
    });
    let mut sum = vec![0.0; h];
    let mut cnt = vec![0usize; h];
    for p in parts {
        let (s, c) = p?;
        for j in 0..h {
            sum[j] += s[j];
            cnt[j] += c[j];
        }
    }
    Ok((0..h).map(|j| (cnt[j] > 0).then(|| sum[j] / cnt[j] as f64)).collect())
}

pub fn initial_head_states<T: Scalar>(model: &Model<T>) -> Vec<HeadState> {
    model
        .targets
        .heads()
        .iter()
        .map(|h| HeadState {
            name: h.name.clone(),
            frozen: false,
            best_val: f64::INFINITY,
            epochs_since_improve: 0,
            loss_kind: match h.kind {
                HeadKind::Deterministic => LossKind::Mse,
                HeadKind::Probabilistic => LossKind::Nll,
            },
        })
        .collect()
}

/// Trains `model` in place. `log` receives one train and one validation
/// entry per head and epoch.
pub fn train<T: Scalar, P: Parallelism>(
    model: &mut Model<T>,
    train_set: &[Prepared<T>],
    val_set: &[Prepared<T>],
    cfg: &TrainConfig,
    par: &P,
    log: &mut dyn FnMut(&LogEntry),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptySplit("val"));
    }
    let h = model.heads.len();
    let owners: Vec<Owner> = model.tensor_specs().iter().map(|s| s.owner).collect();
    let mut opt = AdamW::new(model.param_slices().iter().map(|s| s.len()));
    let mut sched = PlateauScheduler::new(cfg.lr, cfg.lr_factor, cfg.lr_patience);
    let mut heads = initial_head_states(model);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs_run = 0;

    for epoch in 0..cfg.max_epochs {
        if heads.iter().all(|s| s.frozen) {
            break;
        }
        epochs_run = epoch + 1;
        order.sort_unstable();
        CounterRng::new(cfg.seed, Domain::Shuffle, epoch as u64).shuffle(&mut order);
        let skip: Vec<bool> = owners.iter().map(|o| matches!(o, Owner::Head(j) if heads[*j].frozen)).collect();
        let mut epoch_sum = vec![0.0f64; h];
        let mut epoch_cnt = vec![0usize; h];

        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut counts = vec![0usize; h];
            for &i in batch {
                for j in 0..h {
                    if train_set[i].y[j].is_some() {
                        counts[j] += 1;
                    }
                }
            }
            let weights: Vec<T> = (0..h)
                .map(|j| if heads[j].frozen || counts[j] == 0 { T::zero() } else { T::one() / T::lit(counts[j] as f64) })
                .collect();
            if weights.iter().all(|w| *w == T::zero()) {
                continue;
            }
            let model_ref: &Model<T> = model;
            let chunks = batch.len().div_ceil(CHUNK);
            let parts = par.map(chunks, |c| -> Result<(Model<T>, Vec<T>), ModelError> {
                let mut grad = model_ref.zeros_like();
                let mut loss = vec![T::zero(); h];
                for &i in &batch[c * CHUNK..((c + 1) * CHUNK).min(batch.len())] {
                    let g = &train_set[i];
                    let mut x = g.x.clone();
                    add_feature_noise(&mut x, cfg.noise_std, cfg.seed, noise_stream(epoch, i));
                    let l = model_ref.loss_and_grad(&x, &g.adj, &g.y, &weights, &mut grad)?;
                    for j in 0..h {
                        loss[j] += l.per_head[j];
                    }
                }
                Ok((grad, loss))
            });
            let mut total: Option<Model<T>> = None;
            let mut batch_loss = vec![T::zero(); h];
            for part in parts {
                let (g, l) = part.map_err(|e| match e {
                    ModelError::NonFiniteLoss(head) => TrainError::NonFiniteLoss { head, epoch, batch: batch_no },
                    other => other.into(),
                })?;
                for j in 0..h {
                    batch_loss[j] += l[j];
                }
                match &mut total {
                    None => total = Some(g),
                    Some(t) => t.add_assign(&g),
                }
            }
            for j in 0..h {
                let v = batch_loss[j].as_f64();
                if weights[j] != T::zero() {
                    if !v.is_finite() {
                        return Err(TrainError::NonFiniteLoss { head: heads[j].name.clone(), epoch, batch: batch_no });
                    }
                    epoch_sum[j] += v * counts[j] as f64;
                    epoch_cnt[j] += counts[j];
                }
            }
            let grad = total.expect("at least one chunk");
            let grads = grad.param_slices();
            let mut params = model.param_slices_mut();
            opt.step(&mut params, &grads, &skip, &cfg.adamw(sched.lr))?;
        }

        let val = split_losses(model, val_set, par)?;
        for j in 0..h {
            let train_loss = (epoch_cnt[j] > 0).then(|| epoch_sum[j] / epoch_cnt[j] as f64);
            log(&LogEntry {
                epoch,
                lr: sched.lr,
                head: heads[j].name.clone(),
                split: "train".into(),
                loss: train_loss,
                frozen: heads[j].frozen,
            });
        }
        for (j, state) in heads.iter_mut().enumerate() {
            if !state.frozen {
                match val[j] {
                    Some(v) if v < state.best_val - IMPROVEMENT_EPS => {
                        state.best_val = v;
                        state.epochs_since_improve = 0;
                    }
                    _ => state.epochs_since_improve += 1,
                }
                if state.epochs_since_improve >= cfg.head_patience {
                    state.frozen = true;
                }
            }
            log(&LogEntry {
                epoch,
                lr: sched.lr,
                head: state.name.clone(),
                split: "val".into(),
                loss: val[j],
                frozen: state.frozen,
            });
        }
        let present: Vec<f64> = val.iter().flatten().copied().collect();
        if !present.is_empty() {
            sched.observe(median(&present));
        }
    }
    Ok(TrainOutcome { epochs_run, final_lr: sched.lr, heads })
}
