use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn pingnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pingnn")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = pingnn(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file under `dir` with its contents.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.clone(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn read_json(p: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    corpus: PathBuf,
    store: PathBuf,
}

fn fixture(n: &str) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let corpus = root.join("corpus");
    ok(&["synth", "--kind", "rc_bimodal", "--n", n, "--seed", "3", "--out", s(&corpus)]);
    ok(&["ingest", "--manifest", s(&corpus.join("manifest.json")), "--out", s(&root.join("ingest")), "--workers", "2"]);
    let store = root.join("ingest").join("store.pgf");
    Fixture { _dir: dir, root, corpus, store }
}

const SMALL: &[&str] = &["--epochs", "2", "--hidden", "16", "--mc-samples", "32"];

fn train(f: &Fixture, out: &Path, extra: &[&str]) {
    let mut args = vec!["train", "--store", s(&f.store), "--out", s(out)];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(pingnn(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(pingnn(&["synth", "--kind", "rc_highpass", "--n", "20", "--out", "x"]).status.code(), Some(2));
    assert_eq!(pingnn(&["report", "--eval", "x", "--format", "xml"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = pingnn(&["synth", "--kind", "rc_lowpass", "--n", "5", "--out", s(&dir.path().join("c"))]);
    assert_eq!(out.status.code(), Some(1));
    let missing = dir.path().join("missing.pgf");
    let out = pingnn(&["train", "--store", s(&missing), "--out", s(&dir.path().join("t"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.pgf"));
}

#[test]
fn full_chain_writes_only_under_out() {
    let f = fixture("60");
    let corpus_before = snapshot(&f.corpus);
    let store_before = std::fs::read(&f.store).unwrap();

    let tr = f.root.join("train");
    train(&f, &tr, &[]);
    let ck = tr.join("checkpoint.pfck");
    for name in ["checkpoint.pfck", "train_log.jsonl", "train_summary.json", "resolved_config.json"] {
        assert!(tr.join(name).is_file(), "{name}");
    }

    let ev = f.root.join("eval");
    let table = ok(&["evaluate", "--store", s(&f.store), "--checkpoint", s(&ck), "--out", s(&ev)]);
    assert!(table.contains("sMAPE"));
    let report = read_json(&ev.join("report.json"));
    assert!(report["heads"]["f_c"]["smape"].is_number());
    assert!(ev.join("kde_f_c.csv").is_file() && ev.join("kde_t.csv").is_file());

    let csv = ok(&["report", "--eval", s(&ev), "--format", "csv"]);
    for row in ["R²", "Avg. MRE", "MRE P75", "MRE P90", "MRE<2%", "MRE<5%", "MRE>20%", "NRMSE", "sMAPE"] {
        assert!(csv.lines().any(|l| l.starts_with(row)), "{row} missing from\n{csv}");
    }
    let json = ok(&["report", "--eval", s(&ev.join("report.json")), "--format", "json"]);
    assert_eq!(serde_json::from_str::<Value>(&json).unwrap(), report);

    let pred = ok(&[
        "predict",
        "--checkpoint",
        s(&ck),
        "--netlist",
        s(&f.corpus.join("template.cir")),
        "--params",
        "R1.value=2.2k,C1.value=10n",
    ]);
    let pred: Value = serde_json::from_str(&pred).unwrap();
    assert!(pred["heads"]["f_c"]["value"].as_f64().unwrap() > 0.0);
    let q = &pred["heads"]["t"]["quantiles"];
    assert!(q["p05"].as_f64().unwrap() <= q["p95"].as_f64().unwrap());

    let bench = ok(&["bench", "--checkpoint", s(&ck), "--store", s(&f.store), "--repetitions", "5"]);
    assert!(serde_json::from_str::<Value>(&bench).unwrap()["single_ms"]["median"].is_number());

    assert_eq!(snapshot(&f.corpus), corpus_before);
    assert_eq!(std::fs::read(&f.store).unwrap(), store_before);
}

#[test]
fn flags_override_config_file_over_defaults() {
    let f = fixture("40");
    let cfg = f.root.join("run.json");
    std::fs::write(&cfg, r#"{"train": {"lr": 0.01, "max_epochs": 9, "seed": 4}, "model": {"layers": 3}}"#).unwrap();
    let out = f.root.join("train");
    train(&f, &out, &["--config", s(&cfg)]);
    let resolved = read_json(&out.join("resolved_config.json"));
    assert_eq!(resolved["command"], "train");
    let t = &resolved["train"];
    assert_eq!(t["max_epochs"], 2);
    assert_eq!(t["lr"], 0.01);
    assert_eq!(t["seed"], 4);
    assert_eq!(t["batch_size"], 64);
    assert_eq!(t["mc_samples"], 32);
    assert_eq!(resolved["model"]["layers"], 3);
    assert_eq!(resolved["model"]["hidden"], 16);

    std::fs::write(&cfg, r#"{"train": {"learning_rate": 0.01}}"#).unwrap();
    let bad = pingnn(&["train", "--store", s(&f.store), "--config", s(&cfg), "--out", s(&f.root.join("bad"))]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn seeded_commands_are_byte_reproducible() {
    let f = fixture("40");
    let again = f.root.join("ingest_again");
    ok(&["ingest", "--manifest", s(&f.corpus.join("manifest.json")), "--out", s(&again), "--workers", "1"]);
    assert_eq!(std::fs::read(&f.store).unwrap(), std::fs::read(again.join("store.pgf")).unwrap());

    let (a, b) = (f.root.join("a"), f.root.join("b"));
    train(&f, &a, &["--seed", "11"]);
    train(&f, &b, &["--seed", "11"]);
    for name in ["checkpoint.pfck", "train_log.jsonl"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
    let ck = a.join("checkpoint.pfck");
    let eval = |out: &Path, seed: &str| {
        ok(&["evaluate", "--store", s(&f.store), "--checkpoint", s(&ck), "--out", s(out), "--seed", seed]);
        std::fs::read(out.join("report.json")).unwrap()
    };
    let r1 = eval(&f.root.join("e1"), "5");
    assert_eq!(r1, eval(&f.root.join("e2"), "5"));
    assert_ne!(r1, eval(&f.root.join("e3"), "6"));
}

#[test]
fn predict_rejects_components_outside_the_schema() {
    let f = fixture("40");
    let out = f.root.join("train");
    train(&f, &out, &[]);
    let net = f.root.join("extra.cir");
    std::fs::write(&net, ".class rc_lowpass\nV1 in 0 DC 1\nR1 in out 1k\nC1 out 0 1n\nR9 out 0 10k\n").unwrap();
    let res = pingnn(&["predict", "--checkpoint", s(&out.join("checkpoint.pfck")), "--netlist", s(&net)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("R9"));
}
