//! Manifest-driven corpus ingestion and synthetic corpus generation.

use std::path::{Path, PathBuf};

use pingnn_core::circuit::{parse_netlist_with_source, validate_with_source, Circuit, Level};
use pingnn_core::dataset::{
    assign_splits, synth_bindings, synth_header, synth_rows, synth_schema, synth_targets, CorpusManifest, GraphRecord,
    GraphStore, RowBinder, SynthKind, RC_CLASS, RC_TEMPLATE,
};
use pingnn_core::graph::{circuit_to_graph, FeatureSchema};
use rayon::prelude::*;

use crate::error::{io, Error, Result};
use crate::pgf::{SplitCounts, StoreMeta, FORMAT_VERSION};
use crate::schema::{load_schema, read_json, save_schema, schema_hash, write_json, SchemaFile};

/// Environment variable holding the ingestion worker count.
pub const WORKERS_ENV: &str = "PINGNN_WORKERS";

/// Worker count from [`WORKERS_ENV`], else the available parallelism.
pub fn default_workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn load_template(path: &Path) -> Result<Circuit> {
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    let (c, source) = parse_netlist_with_source(&text).map_err(|source| Error::Netlist { path: path.into(), source })?;
    let errors: Vec<String> = validate_with_source(&c, &source)
        .into_iter()
        .filter(|d| d.level == Level::Error)
        .map(|d| match d.line {
            Some(l) => format!("line {l}: {}", d.message),
            None => d.message,
        })
        .collect();
    if !errors.is_empty() {
        return Err(Error::Invalid(format!("{}: {}", path.display(), errors.join("; "))));
    }
    Ok(c)
}

pub struct Corpus {
    pub manifest: CorpusManifest,
    pub template: Circuit,
    pub schema: FeatureSchema,
    pub header: Vec<String>,
    pub rows: Vec<csv::StringRecord>,
}

pub fn load_corpus(manifest_path: &Path) -> Result<Corpus> {
    let manifest: CorpusManifest = read_json(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let template = load_template(&resolve(base, &manifest.netlist_template))?;
    let schema = load_schema(&resolve(base, &manifest.schema))?;
    for (what, class) in [("netlist template", &template.circuit_class), ("schema", &schema.circuit_class)] {
        if !class.is_empty() && class != &manifest.circuit_class {
            return Err(Error::Invalid(format!(
                "{what} declares class `{class}` but the manifest declares `{}`",
                manifest.circuit_class
            )));
        }
    }
    let csv_path = resolve(base, &manifest.csv);
    let csv_err = |source| Error::Csv { path: csv_path.clone(), source };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(&csv_path).map_err(csv_err)?;
    let header = reader.headers().map_err(csv_err)?.iter().map(str::to_owned).collect();
    let rows = reader.records().collect::<Result<Vec<_>, _>>().map_err(csv_err)?;
    Ok(Corpus { manifest, template, schema, header, rows })
}

/// Builds the graph store described by a manifest. Rows are processed by
/// `workers` threads and merged in input order, so the store does not depend
/// on the worker count.
pub fn ingest(manifest_path: &Path, workers: usize) -> Result<(GraphStore, StoreMeta)> {
    let corpus = load_corpus(manifest_path)?;
    let Corpus { manifest, template, schema, header, rows } = &corpus;
    let binder = RowBinder::new(template, &manifest.targets, &manifest.bindings, header)?;
    let splits = assign_splits(rows.len(), &manifest.ratios, manifest.seed)?;
    let build = |i: usize| -> Result<GraphRecord> {
        let wrap = |e: Error| Error::Row { row: i + 1, source: Box::new(e) };
        let fields: Vec<&str> = rows[i].iter().collect();
        let (c, y) = binder.bind(template, i + 1, &fields).map_err(|e| wrap(e.into()))?;
        let graph = circuit_to_graph(&c, schema, &manifest.targets, Some(&y)).map_err(|e| wrap(e.into()))?;
        Ok(GraphRecord { graph, split: splits[i] })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Invalid(format!("cannot start ingestion workers: {e}")))?;
    let records = pool.install(|| (0..rows.len()).into_par_iter().map(build).collect::<Vec<_>>());
    let records = records.into_iter().collect::<Result<Vec<_>>>()?;
    let hash = schema_hash(schema);
    let store = GraphStore { schema_hash: hash, targets: manifest.targets.clone(), records };
    let meta = StoreMeta {
        format_version: FORMAT_VERSION,
        circuit_class: manifest.circuit_class.clone(),
        schema_hash: hash,
        feature_dim: schema.feature_dim(),
        records: store.records.len(),
        splits: SplitCounts::of(&store),
        ratios: manifest.ratios,
        seed: manifest.seed,
        targets: manifest.targets.clone(),
        schema: SchemaFile::from_schema(schema),
    };
    Ok((store, meta))
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TEMPLATE_FILE: &str = "template.cir";
pub const SCHEMA_FILE: &str = "schema.json";
pub const CSV_FILE: &str = "data.csv";

/// Writes a synthetic RC corpus (manifest, netlist template, schema and CSV)
/// under `out` and returns the manifest path.
pub fn write_synthetic_corpus(kind: SynthKind, n: usize, seed: u64, out: &Path) -> Result<PathBuf> {
    let rows = synth_rows(kind, n, seed)?;
    std::fs::create_dir_all(out).map_err(io(out))?;
    let template = out.join(TEMPLATE_FILE);
    std::fs::write(&template, RC_TEMPLATE).map_err(io(&template))?;
    save_schema(&out.join(SCHEMA_FILE), &synth_schema())?;

    let csv_path = out.join(CSV_FILE);
    let csv_err = |source| Error::Csv { path: csv_path.clone(), source };
    let mut w = csv::Writer::from_path(&csv_path).map_err(csv_err)?;
    w.write_record(synth_header(kind)).map_err(csv_err)?;
    for r in &rows {
        let mut rec = vec![format!("{:e}", r.r), format!("{:e}", r.c), format!("{:e}", r.f_c)];
        if let Some(t) = r.t {
            rec.push(format!("{t:e}"));
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(io(&csv_path))?;

    let manifest = CorpusManifest {
        circuit_class: RC_CLASS.into(),
        netlist_template: TEMPLATE_FILE.into(),
        schema: SCHEMA_FILE.into(),
        csv: CSV_FILE.into(),
        targets: synth_targets(kind),
        bindings: synth_bindings(kind),
        ratios: Default::default(),
        seed,
    };
    let path = out.join(MANIFEST_FILE);
    write_json(&path, &manifest)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use pingnn_core::dataset::{cutoff_hz, Split};

    #[test]
    fn synthetic_corpus_ingests_with_closed_form_targets() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_synthetic_corpus(SynthKind::RcBimodal, 40, 5, dir.path()).unwrap();
        let (store, meta) = ingest(&manifest, 2).unwrap();
        assert_eq!(store.records.len(), 40);
        assert_eq!(meta.splits, SplitCounts { train: 20, val: 10, test: 10 });
        let rows = synth_rows(SynthKind::RcBimodal, 40, 5).unwrap();
        for (rec, row) in store.records.iter().zip(&rows) {
            let g = &rec.graph;
            assert_eq!((g.n, g.d), (6, 7));
            let f = g.y[0];
            assert!((f - cutoff_hz(row.r, row.c)).abs() <= 1e-9 * f);
            assert!((g.y[1] - (f.log10() + row.sign.unwrap() * 0.5)).abs() < 1e-9);
            assert_eq!(g.y_mask, vec![true, true]);
        }
        assert!(store.records.iter().any(|r| r.split == Split::Test));
    }

    #[test]
    fn malformed_cell_reports_its_row() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_synthetic_corpus(SynthKind::RcLowpass, 12, 1, dir.path()).unwrap();
        let csv = dir.path().join(CSV_FILE);
        let text = std::fs::read_to_string(&csv).unwrap();
        let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
        lines[3] = lines[3].replacen(|c: char| c.is_ascii_digit(), "x", 1);
        std::fs::write(&csv, lines.join("\n") + "\n").unwrap();
        match ingest(&manifest, 1) {
            Err(Error::Row { row: 3, .. }) => {}
            other => panic!("expected a row-3 error, got {other:?}"),
        }
    }

    #[test]
    fn too_small_synthetic_corpus_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            write_synthetic_corpus(SynthKind::RcLowpass, 5, 1, dir.path()),
            Err(Error::Dataset(pingnn_core::dataset::DatasetError::SynthTooSmall(5)))
        ));
    }
}
