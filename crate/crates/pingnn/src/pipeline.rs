//! The commands behind the CLI, usable as a library.

use std::path::{Path, PathBuf};

use pingnn_core::circuit::{parse_netlist, parse_number, VALUE};
use pingnn_core::dataset::{GraphStore, Split, SynthKind};
use pingnn_core::eval::{evaluate, MetricsReport};
use pingnn_core::graph::{circuit_to_graph, FeatureScaler, PinGraph, TargetScaler};
use pingnn_core::metrics::percentile;
use pingnn_core::model::{Model, ModelConfig};
use pingnn_core::target::HeadKind;
use pingnn_core::train::{prepare, train, Precision, Prepared, TrainConfig, TrainOutcome};
use pingnn_core::Scalar;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::bench::{timing_benchmark, LatencyStats};
use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use crate::error::{io, Error, Result};
use crate::ingest::{ingest, write_synthetic_corpus};
use crate::par::Rayon;
use crate::pgf::{load_store, save_store, StoreMeta};
use crate::report::{kde_csv, kde_file_name, save_report};
use crate::schema::{read_json, schema_hash, write_json};

pub const RESOLVED_CONFIG: &str = "resolved_config.json";
pub const STORE_FILE: &str = "store.pgf";
pub const CHECKPOINT_FILE: &str = "checkpoint.pfck";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const TRAIN_SUMMARY: &str = "train_summary.json";
pub const REPORT_FILE: &str = "report.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const BENCH_FILE: &str = "bench.json";

/// Training options read from `--config`. Missing fields take their defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub model: ModelConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

fn create_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(io(out))
}

fn echo_config(out: &Path, command: &str, body: Value) -> Result<()> {
    let mut doc = Map::new();
    doc.insert("command".into(), Value::from(command));
    if let Value::Object(m) = body {
        doc.extend(m);
    }
    write_json(&out.join(RESOLVED_CONFIG), &Value::Object(doc))
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

pub fn synth_cmd(kind: SynthKind, n: usize, seed: u64, out: &Path) -> Result<PathBuf> {
    let manifest = write_synthetic_corpus(kind, n, seed, out)?;
    echo_config(out, "synth", json!({"kind": kind.as_str(), "n": n, "seed": seed}))?;
    Ok(manifest)
}

pub fn ingest_cmd(manifest: &Path, out: &Path, workers: usize) -> Result<PathBuf> {
    let (store, meta) = ingest(manifest, workers)?;
    create_out(out)?;
    let path = out.join(STORE_FILE);
    save_store(&path, &store, &meta)?;
    echo_config(out, "ingest", json!({"manifest": path_str(manifest), "workers": workers}))?;
    Ok(path)
}

fn split_graphs(store: &GraphStore, s: Split) -> Vec<&PinGraph> {
    store.split(s).map(|r| &r.graph).collect()
}

fn prepare_all<T: Scalar>(graphs: &[&PinGraph], fs: &FeatureScaler, ts: &TargetScaler) -> Result<Vec<Prepared<T>>> {
    graphs.iter().map(|g| Ok(prepare(g, fs, ts)?)).collect()
}

/// Feature and target scalers fitted on the training split.
pub fn fit_scalers(store: &GraphStore, meta: &StoreMeta) -> Result<(FeatureScaler, TargetScaler)> {
    let schema = meta.schema.to_schema()?;
    let train = split_graphs(store, Split::Train);
    let fs = FeatureScaler::fit(train.iter().copied(), schema.passthrough_columns(), "train")?;
    let ts = TargetScaler::fit(train.iter().copied(), &store.targets, "train")?;
    Ok((fs, ts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs_run: usize,
    pub final_lr: f64,
    pub heads: Vec<pingnn_core::train::HeadState>,
    pub parameters: usize,
}

fn train_typed<T: Scalar>(store: &GraphStore, meta: &StoreMeta, cfg: &RunConfig, out: &Path) -> Result<TrainSummary> {
    let (fs, ts) = fit_scalers(store, meta)?;
    let train_set = prepare_all::<T>(&split_graphs(store, Split::Train), &fs, &ts)?;
    let val_set = prepare_all::<T>(&split_graphs(store, Split::Val), &fs, &ts)?;
    let mut model = Model::<T>::init(cfg.model, meta.feature_dim, store.targets.clone(), cfg.train.seed);
    let mut log = String::new();
    let TrainOutcome { epochs_run, final_lr, heads } = train(&mut model, &train_set, &val_set, &cfg.train, &Rayon, &mut |e| {
        log.push_str(&serde_json::to_string(e).expect("log entry serializes"));
        log.push('\n');
    })?;
    let log_path = out.join(TRAIN_LOG);
    std::fs::write(&log_path, log).map_err(io(&log_path))?;
    let ck = CheckpointMeta {
        model: cfg.model,
        in_dim: meta.feature_dim,
        targets: store.targets.clone(),
        schema: meta.schema.clone(),
        schema_hash: meta.schema_hash,
        feature_scaler: fs,
        target_scaler: ts,
        train: cfg.train.clone(),
    };
    save_checkpoint(&out.join(CHECKPOINT_FILE), &model, &ck)?;
    let summary = TrainSummary { epochs_run, final_lr, heads, parameters: model.param_count() };
    write_json(&out.join(TRAIN_SUMMARY), &summary)?;
    Ok(summary)
}

pub fn train_cmd(store_path: &Path, cfg: &RunConfig, out: &Path) -> Result<TrainSummary> {
    cfg.train.validate()?;
    let (store, meta) = load_store(store_path)?;
    create_out(out)?;
    echo_config(out, "train", json!({"store": path_str(store_path), "train": cfg.train, "model": cfg.model}))?;
    match cfg.train.precision {
        Precision::F32 => train_typed::<f32>(&store, &meta, cfg, out),
        Precision::F64 => train_typed::<f64>(&store, &meta, cfg, out),
    }
}

/// Evaluation options; `None` fields fall back to the checkpoint's training
/// configuration.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalOptions {
    pub seed: u64,
    pub mc_samples: Option<usize>,
}

fn check_store(meta: &StoreMeta, ck: &CheckpointMeta) -> Result<()> {
    if meta.schema_hash != ck.schema_hash || meta.targets != ck.targets {
        return Err(Error::Invalid("store and checkpoint disagree on schema or target heads".into()));
    }
    Ok(())
}

fn evaluate_typed<T: Scalar>(
    store: &GraphStore,
    checkpoint: &Path,
    opts: EvalOptions,
) -> Result<(MetricsReport, Vec<Vec<f64>>)> {
    let (model, ck) = load_checkpoint::<T>(checkpoint)?;
    let test = split_graphs(store, Split::Test);
    if test.is_empty() {
        return Err(Error::Invalid("the store has no test records".into()));
    }
    let prepared = prepare_all::<T>(&test, &ck.feature_scaler, &ck.target_scaler)?;
    let samples = opts.mc_samples.unwrap_or(ck.train.mc_samples);
    Ok(evaluate(&model, &prepared, &test, &ck.target_scaler, samples, opts.seed, &Rayon)?)
}

fn predictions_csv(store: &GraphStore, preds: &[Vec<f64>]) -> String {
    let mut out = String::from("index");
    for h in store.targets.heads() {
        out.push_str(&format!(",{0}_true,{0}_pred", h.name));
    }
    out.push('\n');
    for (i, (g, p)) in store.split(Split::Test).map(|r| &r.graph).zip(preds).enumerate() {
        out.push_str(&i.to_string());
        for j in 0..p.len() {
            if g.y_mask[j] {
                out.push_str(&format!(",{},{}", g.y[j], p[j]));
            } else {
                out.push_str(&format!(",,{}", p[j]));
            }
        }
        out.push('\n');
    }
    out
}

pub fn evaluate_cmd(store_path: &Path, checkpoint: &Path, out: &Path, opts: EvalOptions) -> Result<MetricsReport> {
    let (store, meta) = load_store(store_path)?;
    let (_, ck) = load_checkpoint::<f32>(checkpoint)?;
    check_store(&meta, &ck)?;
    let (report, preds) = match ck.train.precision {
        Precision::F32 => evaluate_typed::<f32>(&store, checkpoint, opts)?,
        Precision::F64 => evaluate_typed::<f64>(&store, checkpoint, opts)?,
    };
    create_out(out)?;
    save_report(&out.join(REPORT_FILE), &report)?;
    for k in &report.kde {
        let p = out.join(kde_file_name(&k.head));
        std::fs::write(&p, kde_csv(k)).map_err(io(&p))?;
    }
    let p = out.join(PREDICTIONS_FILE);
    std::fs::write(&p, predictions_csv(&store, &preds)).map_err(io(&p))?;
    echo_config(
        out,
        "evaluate",
        json!({
            "store": path_str(store_path),
            "checkpoint": path_str(checkpoint),
            "eval_seed": opts.seed,
            "mc_samples": report.mc_samples,
        }),
    )?;
    Ok(report)
}

/// Parses `--params` text: comma-separated `COMPONENT.param=value` or
/// `global=value` assignments with SPICE suffixes allowed.
pub fn parse_params(text: &str) -> Result<Vec<(Option<String>, String, f64)>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| Error::Invalid(format!("parameter `{item}` is not of the form key=value")))?;
            let v = parse_number(value.trim())
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Invalid(format!("cannot parse `{value}` as a number")))?;
            Ok(match key.trim().split_once('.') {
                Some((comp, param)) => {
                    let param = if param.eq_ignore_ascii_case(VALUE) { VALUE.to_string() } else { param.to_uppercase() };
                    (Some(comp.to_string()), param, v)
                }
                None => (None, key.trim().to_string(), v),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub p05: f64,
    pub p50: f64,
    pub p95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadPrediction {
    pub unit: String,
    pub kind: HeadKind,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quantiles: Option<Quantiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mc_samples: usize,
    pub seed: u64,
    pub heads: Map<String, Value>,
}

pub fn predict_cmd(checkpoint: &Path, netlist: &Path, params: &str, seed: u64, out: Option<&Path>) -> Result<Prediction> {
    let (model, ck) = load_checkpoint::<f64>(checkpoint)?;
    let text = std::fs::read_to_string(netlist).map_err(io(netlist))?;
    let mut c = parse_netlist(&text).map_err(|source| Error::Netlist { path: netlist.into(), source })?;
    for (comp, key, v) in parse_params(params)? {
        match comp {
            Some(name) => {
                let comp = c
                    .component_mut(&name)
                    .ok_or_else(|| Error::Invalid(format!("netlist has no component `{name}`")))?;
                comp.params.insert(key, v);
            }
            None => {
                c.globals.insert(key, v);
            }
        }
    }
    let schema = ck.schema.to_schema()?;
    if schema_hash(&schema) != ck.schema_hash {
        return Err(Error::Invalid("checkpoint schema does not match its recorded hash".into()));
    }
    let g = circuit_to_graph(&c, &schema, &ck.targets, None)?;
    let prepared: Prepared<f64> = prepare(&g, &ck.feature_scaler, &ck.target_scaler)?;
    let samples = ck.train.mc_samples;
    let h_g = model.embed(&prepared.x, &prepared.adj)?;
    let ts = &ck.target_scaler;
    let mut heads = Map::new();
    for (j, spec) in ck.targets.heads().iter().enumerate() {
        let value = ts.invert(j, model.head_point(&h_g, j, samples, seed, 0)?);
        let quantiles = match spec.kind {
            HeadKind::Deterministic => None,
            HeadKind::Probabilistic => {
                let mut draws: Vec<f64> =
                    model.head_samples(&h_g, j, samples, seed, 0)?.into_iter().map(|v| ts.invert(j, v)).collect();
                draws.sort_by(f64::total_cmp);
                Some(Quantiles {
                    p05: percentile(&draws, 0.05),
                    p50: percentile(&draws, 0.50),
                    p95: percentile(&draws, 0.95),
                })
            }
        };
        let hp = HeadPrediction { unit: spec.unit.clone(), kind: spec.kind, value, quantiles };
        heads.insert(spec.name.clone(), serde_json::to_value(hp).expect("prediction serializes"));
    }
    let pred = Prediction { mc_samples: samples, seed, heads };
    if let Some(out) = out {
        create_out(out)?;
        write_json(&out.join("prediction.json"), &pred)?;
        echo_config(
            out,
            "predict",
            json!({"checkpoint": path_str(checkpoint), "netlist": path_str(netlist), "params": params, "seed": seed}),
        )?;
    }
    Ok(pred)
}

/// Accepts either a report file or a directory holding `report.json`.
pub fn report_path(eval: &Path) -> PathBuf {
    if eval.is_dir() {
        eval.join(REPORT_FILE)
    } else {
        eval.to_path_buf()
    }
}

pub fn bench_cmd(
    checkpoint: &Path,
    store_path: &Path,
    repetitions: usize,
    mc_samples: Option<usize>,
    out: Option<&Path>,
) -> Result<LatencyStats> {
    let (store, meta) = load_store(store_path)?;
    let (model, ck) = load_checkpoint::<f32>(checkpoint)?;
    check_store(&meta, &ck)?;
    let mut graphs = split_graphs(&store, Split::Test);
    if graphs.is_empty() {
        graphs = store.records.iter().map(|r| &r.graph).collect();
    }
    let prepared = prepare_all::<f32>(&graphs, &ck.feature_scaler, &ck.target_scaler)?;
    let samples = mc_samples.unwrap_or(ck.train.mc_samples);
    let stats = timing_benchmark(&model, &prepared, &ck.target_scaler, samples, repetitions.max(1))?;
    if let Some(out) = out {
        create_out(out)?;
        write_json(&out.join(BENCH_FILE), &stats)?;
        echo_config(
            out,
            "bench",
            json!({"checkpoint": path_str(checkpoint), "store": path_str(store_path), "repetitions": repetitions, "mc_samples": samples}),
        )?;
    }
    Ok(stats)
}
