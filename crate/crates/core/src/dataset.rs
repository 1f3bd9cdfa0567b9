//! Corpus manifests, row binding, deterministic splits and the synthetic RC
//! corpus.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::circuit::{Circuit, VALUE};
use crate::graph::{FeatureSchema, PinGraph, Slot, SlotTransform};
use crate::rng::{CounterRng, Domain};
use crate::target::{HeadKind, HeadSpec, TargetSpec, TargetTransform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
#[repr(u8)]
pub enum Split {
    Train = 0,
    Val = 1,
    Test = 2,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Split::Train),
            1 => Some(Split::Val),
            2 => Some(Split::Test),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("split ratios must be positive and sum to 1, got ({0}, {1}, {2})")]
    BadRatios(f64, f64, f64),
    #[error("{n} records give split sizes {sizes:?}; every split needs at least one record")]
    TooSmall { n: usize, sizes: [usize; 3] },
    #[error("binding for column `{column}`: {reason}")]
    BindError { column: String, reason: String },
    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    RowParseError { row: usize, column: String, value: String },
    #[error("synthetic corpora need n >= 10, got {0}")]
    SynthTooSmall(usize),
    #[error("unknown synthetic corpus kind `{0}`")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.5, val: 0.25, test: 0.25 }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let r = [self.train, self.val, self.test];
        if r.iter().any(|v| !(v.is_finite() && *v > 0.0)) || libm::fabs(r.iter().sum::<f64>() - 1.0) > 1e-9 {
            return Err(DatasetError::BadRatios(self.train, self.val, self.test));
        }
        Ok(())
    }

    /// `(floor(n·r_train), floor(n·r_val), remainder)`. A `1e-9` guard keeps
    /// products such as `0.35 · 20` from flooring below their exact value.
    pub fn sizes(&self, n: usize) -> [usize; 3] {
        let f = |r: f64| (libm::floor(n as f64 * r + 1e-9) as usize).min(n);
        let train = f(self.train);
        let val = f(self.val).min(n - train);
        [train, val, n - train - val]
    }
}

/// Seeded split tags for `n` records.
pub fn assign_splits(n: usize, ratios: &SplitRatios, seed: u64) -> Result<Vec<Split>, DatasetError> {
    ratios.validate()?;
    let sizes = ratios.sizes(n);
    if sizes.contains(&0) {
        return Err(DatasetError::TooSmall { n, sizes });
    }
    let mut order: Vec<usize> = (0..n).collect();
    CounterRng::new(seed, Domain::Split, 0).shuffle(&mut order);
    let mut tags = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        tags[i] = if rank < sizes[0] {
            Split::Train
        } else if rank < sizes[0] + sizes[1] {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(tags)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphRecord {
    pub graph: PinGraph,
    pub split: Split,
}

/// Ingested corpus: graphs with split tags plus the metadata needed to
/// rebuild and interpret them.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphStore {
    pub schema_hash: u32,
    pub targets: TargetSpec,
    pub records: Vec<GraphRecord>,
}

impl GraphStore {
    pub fn split(&self, s: Split) -> impl Iterator<Item = &GraphRecord> + '_ {
        self.records.iter().filter(move |r| r.split == s)
    }

    pub fn count(&self, s: Split) -> usize {
        self.split(s).count()
    }
}

/// Where a CSV column goes.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(untagged, deny_unknown_fields))]
pub enum Binding {
    Param { component: String, param: String },
    Global { global: String },
    Target { target: String },
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct CorpusManifest {
    pub circuit_class: String,
    /// Paths are relative to the manifest's directory unless absolute.
    pub netlist_template: String,
    pub schema: String,
    pub csv: String,
    pub targets: TargetSpec,
    pub bindings: BTreeMap<String, Binding>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub ratios: SplitRatios,
    #[cfg_attr(feature = "serde", serde(default))]
    pub seed: u64,
}

enum Resolved {
    Param { component: usize, param: String },
    Global(String),
    Target(usize),
}

/// Column bindings checked against a template, a target spec and a CSV header.
pub struct RowBinder {
    columns: Vec<(usize, String, Resolved)>,
    heads: usize,
}

impl RowBinder {
    pub fn new(
        template: &Circuit,
        targets: &TargetSpec,
        bindings: &BTreeMap<String, Binding>,
        header: &[String],
    ) -> Result<Self, DatasetError> {
        let mut columns = Vec::new();
        for (column, binding) in bindings {
            let bind_err = |reason: String| DatasetError::BindError { column: column.clone(), reason };
            let idx = header
                .iter()
                .position(|h| h == column)
                .ok_or_else(|| bind_err("column is missing from the CSV header".into()))?;
            let resolved = match binding {
                Binding::Param { component, param } => {
                    let ci = template
                        .components
                        .iter()
                        .position(|c| &c.name == component)
                        .ok_or_else(|| bind_err(alloc::format!("template has no component `{component}`")))?;
                    let comp = &template.components[ci];
                    let key = if param == VALUE { param.clone() } else { param.to_uppercase() };
                    if !comp.params.contains_key(&key) {
                        return Err(bind_err(alloc::format!("`{component}` has no parameter `{param}` in the template")));
                    }
                    Resolved::Param { component: ci, param: key }
                }
                Binding::Global { global } => Resolved::Global(global.clone()),
                Binding::Target { target } => Resolved::Target(
                    targets.index_of(target).ok_or_else(|| bind_err(alloc::format!("unknown target head `{target}`")))?,
                ),
            };
            columns.push((idx, column.clone(), resolved));
        }
        for h in targets.heads() {
            if !bindings.values().any(|b| matches!(b, Binding::Target { target } if target == &h.name)) {
                return Err(DatasetError::BindError {
                    column: String::new(),
                    reason: alloc::format!("target head `{}` is not bound to any column", h.name),
                });
            }
        }
        Ok(Self { columns, heads: targets.len() })
    }

    /// Applies one CSV row to a copy of `template`. Empty target cells leave
    /// that head absent.
    pub fn bind(&self, template: &Circuit, row_index: usize, row: &[&str]) -> Result<(Circuit, Vec<Option<f64>>), DatasetError> {
        let mut c = template.clone();
        let mut y = vec![None; self.heads];
        for (idx, column, resolved) in &self.columns {
            let raw = row.get(*idx).copied().unwrap_or("").trim();
            let parse = || {
                raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| DatasetError::RowParseError {
                    row: row_index,
                    column: column.clone(),
                    value: raw.to_owned(),
                })
            };
            match resolved {
                Resolved::Param { component, param } => {
                    c.components[*component].params.insert(param.clone(), parse()?);
                }
                Resolved::Global(g) => {
                    c.globals.insert(g.clone(), parse()?);
                }
                Resolved::Target(h) => {
                    if !raw.is_empty() {
                        y[*h] = Some(parse()?);
                    }
                }
            }
        }
        Ok((c, y))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    RcLowpass,
    RcBimodal,
}

impl SynthKind {
    pub fn parse(s: &str) -> Result<Self, DatasetError> {
        match s {
            "rc_lowpass" => Ok(SynthKind::RcLowpass),
            "rc_bimodal" => Ok(SynthKind::RcBimodal),
            other => Err(DatasetError::UnknownKind(other.to_owned())),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SynthKind::RcLowpass => "rc_lowpass",
            SynthKind::RcBimodal => "rc_bimodal",
        }
    }
}

/// Half-distance between the two modes of the bimodal target, in decades.
pub const BIMODAL_DELTA: f64 = 0.5;

pub const RC_CLASS: &str = "rc_lowpass";

pub const RC_TEMPLATE: &str = "\
* first-order RC low-pass stage
.class rc_lowpass
V1 in 0 DC 1
R1 in out 1k
C1 out 0 1n
.end
";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthRow {
    pub r: f64,
    pub c: f64,
    /// Cutoff `1/(2πRC)` in Hz.
    pub f_c: f64,
    /// Mode indicator `s ∈ {−1, +1}` (bimodal corpora only).
    pub sign: Option<f64>,
    /// `log10 f_c + s·Δ` (bimodal corpora only).
    pub t: Option<f64>,
}

pub fn cutoff_hz(r: f64, c: f64) -> f64 {
    1.0 / (core::f64::consts::TAU * r * c)
}

pub fn synth_rows(kind: SynthKind, n: usize, seed: u64) -> Result<Vec<SynthRow>, DatasetError> {
    if n < 10 {
        return Err(DatasetError::SynthTooSmall(n));
    }
    Ok((0..n)
        .map(|i| {
            let mut rng = CounterRng::new(seed, Domain::Synth, i as u64);
            let r = libm::pow(10.0, rng.uniform_in(2.0, 5.0));
            let c = libm::pow(10.0, rng.uniform_in(-12.0, -6.0));
            let f_c = cutoff_hz(r, c);
            let (sign, t) = match kind {
                SynthKind::RcLowpass => (None, None),
                SynthKind::RcBimodal => {
                    let s = if CounterRng::new(seed, Domain::Coin, i as u64).coin() { 1.0 } else { -1.0 };
                    (Some(s), Some(libm::log10(f_c) + s * BIMODAL_DELTA))
                }
            };
            SynthRow { r, c, f_c, sign, t }
        })
        .collect())
}

pub fn synth_targets(kind: SynthKind) -> TargetSpec {
    let mut heads = vec![HeadSpec::new("f_c", "Hz", HeadKind::Deterministic).with_transform(TargetTransform::Log10)];
    if kind == SynthKind::RcBimodal {
        heads.push(HeadSpec::new("t", "log10(Hz)", HeadKind::Probabilistic));
    }
    TargetSpec::new(heads).expect("static target spec")
}

/// R and C each get their own group and a log-scaled value slot; the source
/// is a group without slots.
pub fn synth_schema() -> FeatureSchema {
    let slot = |g: &str| Slot { group: g.to_string(), param: VALUE.to_string(), transform: SlotTransform::Log10 };
    FeatureSchema::new(
        RC_CLASS.to_string(),
        vec![
            ("R".to_string(), vec!["R1".to_string()]),
            ("C".to_string(), vec!["C1".to_string()]),
            ("SRC".to_string(), vec!["V1".to_string()]),
        ],
        vec![slot("R"), slot("C")],
        Vec::new(),
    )
    .expect("static schema")
}

pub fn synth_bindings(kind: SynthKind) -> BTreeMap<String, Binding> {
    let mut b = BTreeMap::new();
    b.insert("R".to_string(), Binding::Param { component: "R1".into(), param: VALUE.into() });
    b.insert("C".to_string(), Binding::Param { component: "C1".into(), param: VALUE.into() });
    b.insert("f_c".to_string(), Binding::Target { target: "f_c".into() });
    if kind == SynthKind::RcBimodal {
        b.insert("t".to_string(), Binding::Target { target: "t".into() });
    }
    b
}

pub fn synth_header(kind: SynthKind) -> Vec<&'static str> {
    match kind {
        SynthKind::RcLowpass => vec!["R", "C", "f_c"],
        SynthKind::RcBimodal => vec!["R", "C", "f_c", "t"],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::parse_netlist;
    use crate::graph::circuit_to_graph;

    #[test]
    fn split_size_examples() {
        let r = SplitRatios::default();
        assert_eq!(r.sizes(10), [5, 2, 3]);
        assert_eq!(SplitRatios { train: 0.3, val: 0.35, test: 0.35 }.sizes(4), [1, 1, 2]);
        assert_eq!(SplitRatios { train: 0.3, val: 0.35, test: 0.35 }.sizes(20), [6, 7, 7]);
        assert!(matches!(assign_splits(2, &r, 1), Err(DatasetError::TooSmall { .. })));
        assert!(SplitRatios { train: 0.5, val: 0.5, test: 0.5 }.validate().is_err());
    }

    #[test]
    fn split_tags_are_seeded_and_exhaustive() {
        let r = SplitRatios::default();
        let a = assign_splits(101, &r, 7).unwrap();
        assert_eq!(a, assign_splits(101, &r, 7).unwrap());
        assert_ne!(a, assign_splits(101, &r, 8).unwrap());
        let count = |s| a.iter().filter(|&&t| t == s).count();
        assert_eq!([count(Split::Train), count(Split::Val), count(Split::Test)], r.sizes(101));
    }

    #[test]
    fn cutoff_examples() {
        assert!((cutoff_hz(1e3, 1e-9) - 159_154.943_091_895_3).abs() < 1e-6);
        assert!((cutoff_hz(1.0, 1.0) - 0.159_154_943_091_895_3).abs() < 1e-15);
    }

    #[test]
    fn synthetic_rows_follow_their_oracle() {
        let rows = synth_rows(SynthKind::RcBimodal, 500, 3).unwrap();
        for r in &rows {
            assert!((100.0..=1e5).contains(&r.r) && (1e-12..=1e-6).contains(&r.c));
            let oracle = 1.0 / (2.0 * core::f64::consts::PI * r.r * r.c);
            assert!(((r.f_c - oracle) / oracle).abs() < 1e-9);
            let t = r.t.unwrap();
            assert!((t - libm::log10(r.f_c) - r.sign.unwrap() * 0.5).abs() < 1e-12);
        }
        assert_eq!(synth_rows(SynthKind::RcLowpass, 5, 1), Err(DatasetError::SynthTooSmall(5)));
    }

    #[test]
    fn binder_substitutes_row_values() {
        let template = parse_netlist(RC_TEMPLATE).unwrap();
        let kind = SynthKind::RcBimodal;
        let header: Vec<String> = synth_header(kind).iter().map(|s| s.to_string()).collect();
        let binder = RowBinder::new(&template, &synth_targets(kind), &synth_bindings(kind), &header).unwrap();
        let (c, y) = binder.bind(&template, 0, &["2000", "1e-9", "79577.47", ""]).unwrap();
        assert_eq!(c.component("R1").unwrap().param(VALUE), Some(2000.0));
        assert_eq!(y, vec![Some(79577.47), None]);
        let g = circuit_to_graph(&c, &synth_schema(), &synth_targets(kind), Some(&y)).unwrap();
        assert_eq!(g.n, 6);
        assert_eq!(g.y_mask, vec![true, false]);
        assert!(matches!(binder.bind(&template, 4, &["x", "1", "1", ""]), Err(DatasetError::RowParseError { row: 4, .. })));

        let short: Vec<String> = vec!["R".into(), "f_c".into(), "t".into()];
        match RowBinder::new(&template, &synth_targets(kind), &synth_bindings(kind), &short) {
            Err(DatasetError::BindError { column, .. }) => assert_eq!(column, "C"),
            _ => panic!("expected a bind error"),
        }
    }
}
