use alloc::string::String;
use alloc::vec::Vec;

use crate::graph::{PinGraph, TargetScaler};
use crate::metrics::{kde, kde_grid, mre_stats, nrmse, r2, silverman_bandwidth, smape};
use crate::model::{Model, ModelError};
use crate::scalar::Scalar;
use crate::target::HeadKind;
use crate::train::{Parallelism, Prepared};

/// Metrics of one head. `None` marks a value that is undefined for the
/// evaluated sample (for example R² of a constant truth).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HeadMetrics {
    pub name: String,
    pub unit: String,
    pub kind: HeadKind,
    pub r2: Option<f64>,
    pub mre_avg: Option<f64>,
    pub mre_p75: Option<f64>,
    pub mre_p90: Option<f64>,
    pub frac_lt_2pct: Option<f64>,
    pub frac_lt_5pct: Option<f64>,
    pub frac_gt_20pct: Option<f64>,
    pub nrmse: Option<f64>,
    pub smape: Option<f64>,
    pub n_eval: usize,
    pub n_excluded_zero_truth: usize,
    pub n_excluded_smape: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KdeCurve {
    pub head: String,
    pub bandwidth_true: f64,
    pub bandwidth_pred: f64,
    pub grid: Vec<f64>,
    pub density_true: Vec<f64>,
    pub density_pred: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsReport {
    pub n_test: usize,
    pub mc_samples: usize,
    pub eval_seed: u64,
    pub heads: Vec<HeadMetrics>,
    pub kde: Vec<KdeCurve>,
}

/// All metrics for paired truth/prediction values in original units.
pub fn head_metrics(name: &str, unit: &str, kind: HeadKind, y: &[f64], p: &[f64]) -> HeadMetrics {
    let mre = mre_stats(y, p).ok();
    let sm = smape(y, p).ok();
    HeadMetrics {
        name: name.into(),
        unit: unit.into(),
        kind,
        r2: r2(y, p).ok(),
        mre_avg: mre.map(|m| m.avg),
        mre_p75: mre.map(|m| m.p75),
        mre_p90: mre.map(|m| m.p90),
        frac_lt_2pct: mre.map(|m| m.frac_lt_2pct),
        frac_lt_5pct: mre.map(|m| m.frac_lt_5pct),
        frac_gt_20pct: mre.map(|m| m.frac_gt_20pct),
        nrmse: nrmse(y, p).ok(),
        smape: sm.map(|s| s.0),
        n_eval: mre.map_or(0, |m| m.n_eval),
        n_excluded_zero_truth: mre.map_or(y.len(), |m| m.n_excluded),
        n_excluded_smape: sm.map_or(y.len(), |s| s.1),
    }
}

/// Truth and prediction densities on a shared grid. Each side uses its own
/// Silverman bandwidth (borrowing the other side's when its spread is zero,
/// else 1); the grid margin uses the larger of the two.
pub fn kde_curves(head: &str, y: &[f64], p: &[f64]) -> Option<KdeCurve> {
    if y.is_empty() || p.is_empty() {
        return None;
    }
    let (ht, hp) = match (silverman_bandwidth(y), silverman_bandwidth(p)) {
        (Some(a), Some(b)) => (a, b),
        (Some(a), None) => (a, a),
        (None, Some(b)) => (b, b),
        (None, None) => (1.0, 1.0),
    };
    let pooled: Vec<f64> = y.iter().chain(p).copied().collect();
    let grid = kde_grid(&pooled, ht.max(hp));
    Some(KdeCurve {
        head: head.into(),
        bandwidth_true: ht,
        bandwidth_pred: hp,
        density_true: kde(y, &grid, ht).ok()?,
        density_pred: kde(p, &grid, hp).ok()?,
        grid,
    })
}

/// Point predictions in original units for one prepared graph. Flow heads
/// use the Monte-Carlo mean of `samples` draws from the stream of `element`.
pub fn predict_graph<T: Scalar>(
    model: &Model<T>,
    g: &Prepared<T>,
    ts: &TargetScaler,
    samples: usize,
    seed: u64,
    element: u64,
) -> Result<Vec<f64>, ModelError> {
    let h_g = model.embed(&g.x, &g.adj)?;
    (0..model.heads.len())
        .map(|j| Ok(ts.invert(j, model.head_point(&h_g, j, samples, seed, element)?.as_f64())))
        .collect()
}

/// Evaluates `model` on prepared test graphs whose original-unit targets are
/// read from `truth`. Returns the report and every graph's predictions.
pub fn evaluate<T: Scalar, P: Parallelism>(
    model: &Model<T>,
    test: &[Prepared<T>],
    truth: &[&PinGraph],
    ts: &TargetScaler,
    samples: usize,
    seed: u64,
    par: &P,
) -> Result<(MetricsReport, Vec<Vec<f64>>), ModelError> {
    let preds: Vec<Vec<f64>> = par
        .map(test.len(), |i| predict_graph(model, &test[i], ts, samples, seed, i as u64))
        .into_iter()
        .collect::<Result<_, _>>()?;
    let mut heads = Vec::new();
    let mut curves = Vec::new();
    for (j, spec) in model.targets.heads().iter().enumerate() {
        let mut y = Vec::new();
        let mut p = Vec::new();
        for (g, pr) in truth.iter().zip(&preds) {
            if g.y_mask[j] {
                y.push(g.y[j]);
                p.push(pr[j]);
            }
        }
        heads.push(head_metrics(&spec.name, &spec.unit, spec.kind, &y, &p));
        curves.extend(kde_curves(&spec.name, &y, &p));
    }
    Ok((MetricsReport { n_test: test.len(), mc_samples: samples, eval_seed: seed, heads, kde: curves }, preds))
}
