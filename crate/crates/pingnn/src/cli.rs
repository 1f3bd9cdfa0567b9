use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use pingnn_core::dataset::SynthKind;
use pingnn_core::train::Precision;

use crate::error::{Error, Result};
use crate::ingest::default_workers;
use crate::pipeline::{
    bench_cmd, evaluate_cmd, ingest_cmd, predict_cmd, report_path, synth_cmd, train_cmd, EvalOptions, RunConfig,
};
use crate::report::{load_report, render, Format};
use crate::schema::write_json;
use crate::selftest::run_all;

#[derive(Debug, Parser)]
#[command(name = "pingnn", version, about = "Pin-level GNN with flow heads for circuit performance prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic RC corpus (manifest, template, schema, CSV).
    Synth {
        #[arg(long, value_parser = parse_kind)]
        kind: SynthKind,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a graph store from a corpus manifest.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; defaults to PINGNN_WORKERS or the available parallelism.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Train a model on a graph store.
    Train {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Evaluate a checkpoint on the test split of a store.
    Evaluate {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Evaluation seed for Monte-Carlo draws.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Monte-Carlo draws per flow head; defaults to the checkpoint's value.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Predict every head for one netlist.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        netlist: PathBuf,
        /// Comma-separated `COMP.param=value` or `global=value` overrides.
        #[arg(long, default_value = "")]
        params: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print an evaluation report.
    Report {
        /// A report.json file or the evaluation output directory.
        #[arg(long)]
        eval: PathBuf,
        #[arg(long, default_value = "table")]
        format: Format,
    },
    /// Time single-graph inference on the test split.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value_t = 100)]
        repetitions: usize,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in invariant suites.
    Selftest {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainOverrides {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub deterministic: Option<bool>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    #[arg(long, value_parser = parse_precision)]
    pub precision: Option<Precision>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub mc_samples: Option<usize>,
}

impl TrainOverrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        let t = &mut cfg.train;
        if let Some(v) = self.seed {
            t.seed = v;
        }
        if let Some(v) = self.deterministic {
            t.deterministic = v;
        }
        if let Some(v) = self.epochs {
            t.max_epochs = v;
        }
        if let Some(v) = self.lr {
            t.lr = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.noise_std {
            t.noise_std = v;
        }
        if let Some(v) = self.precision {
            t.precision = v;
        }
        if let Some(v) = self.mc_samples {
            t.mc_samples = v;
        }
        if let Some(v) = self.hidden {
            cfg.model.hidden = v;
        }
    }
}

fn parse_kind(s: &str) -> Result<SynthKind, String> {
    SynthKind::parse(s).map_err(|e| e.to_string())
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    match s {
        "32" | "f32" => Ok(Precision::F32),
        "64" | "f64" => Ok(Precision::F64),
        _ => Err(format!("precision must be 32 or 64, got `{s}`")),
    }
}

fn pretty<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("output serializes")
}

/// Runs one command, printing its result. Returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Synth { kind, n, seed, out } => {
            let manifest = synth_cmd(kind, n, seed, &out)?;
            println!("{}", manifest.display());
        }
        Command::Ingest { manifest, out, workers } => {
            let store = ingest_cmd(&manifest, &out, workers.unwrap_or_else(default_workers))?;
            println!("{}", store.display());
        }
        Command::Train { store, config, out, overrides } => {
            let mut cfg = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::default(),
            };
            overrides.apply(&mut cfg);
            let summary = train_cmd(&store, &cfg, &out)?;
            println!("{}", pretty(&summary));
        }
        Command::Evaluate { store, checkpoint, out, seed, samples } => {
            let report = evaluate_cmd(&store, &checkpoint, &out, EvalOptions { seed, mc_samples: samples })?;
            print!("{}", render(&report, Format::Table));
        }
        Command::Predict { checkpoint, netlist, params, seed, out } => {
            let p = predict_cmd(&checkpoint, &netlist, &params, seed, out.as_deref())?;
            println!("{}", pretty(&p));
        }
        Command::Report { eval, format } => {
            let report = load_report(&report_path(&eval))?;
            print!("{}", render(&report, format));
        }
        Command::Bench { checkpoint, store, repetitions, samples, out } => {
            let stats = bench_cmd(&checkpoint, &store, repetitions, samples, out.as_deref())?;
            println!("{}", pretty(&stats));
        }
        Command::Selftest { out } => {
            let suites = run_all();
            let mut failed = 0;
            for s in &suites {
                let status = if s.passed() { "PASS" } else { "FAIL" };
                println!(
                    "{status} {:<32} cases={:<5} failed={:<4} worst={:.3e} tol={:.0e}",
                    s.name, s.cases, s.failed, s.worst, s.tolerance
                );
                failed += usize::from(!s.passed());
            }
            println!("{} suites, {} passed, {} failed", suites.len(), suites.len() - failed, failed);
            if let Some(out) = out {
                std::fs::create_dir_all(&out).map_err(crate::error::io(&out))?;
                write_json(&out.join("selftest.json"), &suites)?;
            }
            if failed > 0 {
                return Err(Error::Invalid(format!("{failed} self-test suites failed")));
            }
        }
    }
    Ok(0)
}
