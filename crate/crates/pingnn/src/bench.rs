//! Wall-clock inference timing.

use std::hint::black_box;
use std::time::Instant;

use pingnn_core::graph::TargetScaler;
use pingnn_core::model::{Model, ModelError};
use pingnn_core::train::Prepared;
use pingnn_core::Scalar;
use serde::{Deserialize, Serialize};

use pingnn_core::eval::predict_graph;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub median: f64,
    pub mean: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Self {
            min: v[0],
            median: pingnn_core::optim::median(&v),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            max: v[v.len() - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchTiming {
    pub batch_size: usize,
    pub ms_per_graph: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub graphs: usize,
    pub nodes: Summary,
    pub repetitions: usize,
    pub mc_samples: usize,
    pub single_ms: Summary,
    pub batches: Vec<BatchTiming>,
    pub whole_set_s: f64,
}

pub const BATCH_SIZES: [usize; 2] = [1, 64];

fn forward<T: Scalar>(model: &Model<T>, g: &Prepared<T>, ts: &TargetScaler, samples: usize) -> Result<(), ModelError> {
    black_box(predict_graph(model, g, ts, samples, 0, 0)?);
    Ok(())
}

/// Times single-graph forwards (encoder plus every head, flow heads drawing
/// `samples` Monte-Carlo samples). Graph `k mod len` is used for repetition
/// `k`. A warm-up pass over the first few graphs runs first.
pub fn timing_benchmark<T: Scalar>(
    model: &Model<T>,
    graphs: &[Prepared<T>],
    ts: &TargetScaler,
    samples: usize,
    repetitions: usize,
) -> Result<LatencyStats, ModelError> {
    assert!(!graphs.is_empty() && repetitions > 0, "benchmark needs graphs and repetitions");
    for g in graphs.iter().take(8) {
        forward(model, g, ts, samples)?;
    }
    let mut single = Vec::with_capacity(repetitions);
    for k in 0..repetitions {
        let g = &graphs[k % graphs.len()];
        let t = Instant::now();
        forward(model, g, ts, samples)?;
        single.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let mut batches = Vec::new();
    for b in BATCH_SIZES {
        let rounds = repetitions.div_ceil(b).max(1);
        let t = Instant::now();
        for r in 0..rounds {
            for i in 0..b {
                forward(model, &graphs[(r * b + i) % graphs.len()], ts, samples)?;
            }
        }
        batches.push(BatchTiming { batch_size: b, ms_per_graph: t.elapsed().as_secs_f64() * 1e3 / (rounds * b) as f64 });
    }
    let t = Instant::now();
    for g in graphs {
        forward(model, g, ts, samples)?;
    }
    let whole_set_s = t.elapsed().as_secs_f64();
    let nodes: Vec<f64> = graphs.iter().map(|g| g.adj.len() as f64).collect();
    Ok(LatencyStats {
        graphs: graphs.len(),
        nodes: Summary::of(&nodes),
        repetitions,
        mc_samples: samples,
        single_ms: Summary::of(&single),
        batches,
        whole_set_s,
    })
}
