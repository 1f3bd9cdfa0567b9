//! Pin-level graphs and feature/target scaling.
//!
//! One node per component pin. Pins of a component form a clique, and all
//! pins attached to a net form a clique. Column layout of the node feature
//! row, for a schema with `S` slots and `G` globals:
//!
//! ```text
//! [ slot 0 .. slot S-1 | gate/plus source/minus drain body | global 0 .. G-1 | bias ]
//! ```

use alloc::borrow::ToOwned;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::circuit::{Circuit, Component, ComponentKind, PinRole, VALUE};
use crate::scalar::Scalar;
use crate::target::{TargetSpec, TargetTransform};

pub const PIN_ROLE_WIDTH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum SlotTransform {
    #[default]
    Identity,
    /// Writes `log10(value)`; for parameters swept over several decades.
    Log10,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slot {
    pub group: String,
    /// Parameter key. For MOSFETs `W` means width × fingers.
    pub param: String,
    pub transform: SlotTransform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Slot,
    PinRole,
    Global,
    Bias,
}

/// Column assignment for one circuit class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSchema {
    pub circuit_class: String,
    /// Groups in declaration order with their member components.
    pub groups: Vec<(String, Vec<String>)>,
    pub symmetry_map: BTreeMap<String, String>,
    pub slots: Vec<Slot>,
    pub globals: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("component `{component}` is listed in groups `{first}` and `{second}`")]
    ComponentInTwoGroups { component: String, first: String, second: String },
    #[error("group `{0}` is declared twice")]
    DuplicateGroup(String),
    #[error("slot references undeclared group `{0}`")]
    UnknownGroup(String),
    #[error("slot ({group}, {param}) is declared twice")]
    DuplicateSlot { group: String, param: String },
    #[error("global `{0}` is declared twice")]
    DuplicateGlobal(String),
    #[error("{0}")]
    Malformed(String),
}

impl FeatureSchema {
    pub fn new(
        circuit_class: String,
        groups: Vec<(String, Vec<String>)>,
        slots: Vec<Slot>,
        globals: Vec<String>,
    ) -> Result<Self, SchemaError> {
        let mut symmetry_map = BTreeMap::new();
        let mut group_names = BTreeSet::new();
        for (group, members) in &groups {
            if !group_names.insert(group.as_str()) {
                return Err(SchemaError::DuplicateGroup(group.clone()));
            }
            for m in members {
                if let Some(first) = symmetry_map.insert(m.clone(), group.clone()) {
                    return Err(SchemaError::ComponentInTwoGroups {
                        component: m.clone(),
                        first,
                        second: group.clone(),
                    });
                }
            }
        }
        let mut seen = BTreeSet::new();
        for s in &slots {
            if !group_names.contains(s.group.as_str()) {
                return Err(SchemaError::UnknownGroup(s.group.clone()));
            }
            if !seen.insert((s.group.as_str(), s.param.as_str())) {
                return Err(SchemaError::DuplicateSlot { group: s.group.clone(), param: s.param.clone() });
            }
        }
        let mut gseen = BTreeSet::new();
        for g in &globals {
            if !gseen.insert(g.as_str()) {
                return Err(SchemaError::DuplicateGlobal(g.clone()));
            }
        }
        Ok(Self { circuit_class, groups, symmetry_map, slots, globals })
    }

    pub fn feature_dim(&self) -> usize {
        self.slots.len() + PIN_ROLE_WIDTH + self.globals.len() + 1
    }

    pub fn pin_role_offset(&self) -> usize {
        self.slots.len()
    }

    pub fn global_offset(&self) -> usize {
        self.slots.len() + PIN_ROLE_WIDTH
    }

    pub fn bias_column(&self) -> usize {
        self.feature_dim() - 1
    }

    pub fn column_kind(&self, col: usize) -> ColumnKind {
        if col < self.pin_role_offset() {
            ColumnKind::Slot
        } else if col < self.global_offset() {
            ColumnKind::PinRole
        } else if col < self.bias_column() {
            ColumnKind::Global
        } else {
            ColumnKind::Bias
        }
    }

    /// Columns the min–max scaler leaves untouched (pin-role bits and bias).
    pub fn passthrough_columns(&self) -> Vec<bool> {
        (0..self.feature_dim())
            .map(|c| matches!(self.column_kind(c), ColumnKind::PinRole | ColumnKind::Bias))
            .collect()
    }

    pub fn slot_columns<'a>(&'a self, group: &'a str) -> impl Iterator<Item = (usize, &'a Slot)> + 'a {
        self.slots.iter().enumerate().filter(move |(_, s)| s.group == group)
    }

    /// Writes the schema's group assignment into `c.components[*].symmetry_group`.
    pub fn annotate(&self, c: &mut Circuit) {
        for comp in &mut c.components {
            comp.symmetry_group = self.symmetry_map.get(&comp.name).cloned();
        }
    }
}

/// Numeric pin-level graph.
#[derive(Debug, Clone, PartialEq)]
pub struct PinGraph {
    pub n: usize,
    pub d: usize,
    /// Row-major `n × d` node features.
    pub x: Vec<f32>,
    /// Undirected edges with `u < v`, sorted, no duplicates.
    pub edges: Vec<(u32, u32)>,
    /// `(component, role)` of each node. Not persisted in graph stores.
    pub node_map: Vec<(String, PinRole)>,
    /// Targets in original units; 0 where the mask is false.
    pub y: Vec<f64>,
    pub y_mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("component `{0}` has no symmetry group in the schema")]
    UnmappedComponent(String),
    #[error("circuit class `{circuit}` does not match schema class `{schema}`")]
    ClassMismatch { circuit: String, schema: String },
    #[error("expected {expected} target values, got {found}")]
    TargetArityMismatch { expected: usize, found: usize },
    #[error("component `{component}` lacks parameter `{param}` required by its slot")]
    MissingParam { component: String, param: String },
    #[error("global `{0}` required by the schema is not set")]
    MissingGlobal(String),
    #[error("feature `{what}` = {value} cannot be encoded")]
    BadFeature { what: String, value: f64 },
    #[error("graph has no nodes")]
    Empty,
    #[error("invalid graph: {0}")]
    Invalid(String),
}

/// Value a component writes into a slot.
pub fn slot_value(comp: &Component, param: &str) -> Option<f64> {
    match (comp.kind, param) {
        (ComponentKind::Mosfet, "W") => Some(comp.param("W")? * comp.param("NF").unwrap_or(1.0)),
        (ComponentKind::Mosfet, _) => comp.param(param),
        (_, p) if p == VALUE => comp.param(VALUE),
        (_, p) => comp.param(p),
    }
}

fn encode(what: &str, v: f64, t: SlotTransform) -> Result<f32, GraphError> {
    let out = match t {
        SlotTransform::Identity => v,
        SlotTransform::Log10 if v > 0.0 => libm::log10(v),
        SlotTransform::Log10 => f64::NAN,
    };
    let f = out as f32;
    if f.is_finite() {
        Ok(f)
    } else {
        Err(GraphError::BadFeature { what: what.to_owned(), value: v })
    }
}

/// Builds the pin-level graph of `c` under `schema`. `y`, when given, holds
/// one optional value per head.
pub fn circuit_to_graph(
    c: &Circuit,
    schema: &FeatureSchema,
    targets: &TargetSpec,
    y: Option<&[Option<f64>]>,
) -> Result<PinGraph, GraphError> {
    if !c.circuit_class.is_empty()
        && !schema.circuit_class.is_empty()
        && c.circuit_class != schema.circuit_class
    {
        return Err(GraphError::ClassMismatch {
            circuit: c.circuit_class.clone(),
            schema: schema.circuit_class.clone(),
        });
    }
    let h = targets.len();
    let (yv, mask) = match y {
        None => (vec![0.0; h], vec![false; h]),
        Some(vals) if vals.len() == h => (
            vals.iter().map(|v| v.unwrap_or(0.0)).collect(),
            vals.iter().map(Option::is_some).collect(),
        ),
        Some(vals) => return Err(GraphError::TargetArityMismatch { expected: h, found: vals.len() }),
    };

    let d = schema.feature_dim();
    let mut globals_row = vec![0f32; schema.globals.len()];
    for (i, g) in schema.globals.iter().enumerate() {
        let v = *c.globals.get(g).ok_or_else(|| GraphError::MissingGlobal(g.clone()))?;
        globals_row[i] = encode(g, v, SlotTransform::Identity)?;
    }

    let n = c.pin_count();
    if n == 0 {
        return Err(GraphError::Empty);
    }
    let mut x = vec![0f32; n * d];
    let mut node_map = Vec::with_capacity(n);
    let mut edges = BTreeSet::new();
    let mut node_of: BTreeMap<(&str, PinRole), u32> = BTreeMap::new();

    for comp in &c.components {
        let group = schema
            .symmetry_map
            .get(&comp.name)
            .ok_or_else(|| GraphError::UnmappedComponent(comp.name.clone()))?;
        let mut slot_row = Vec::new();
        for (col, slot) in schema.slot_columns(group) {
            let v = slot_value(comp, &slot.param).ok_or_else(|| GraphError::MissingParam {
                component: comp.name.clone(),
                param: slot.param.clone(),
            })?;
            slot_row.push((col, encode(&slot.param, v, slot.transform)?));
        }
        let first = node_map.len();
        for (role, _) in &comp.pins {
            let v = node_map.len();
            let row = &mut x[v * d..(v + 1) * d];
            for &(col, val) in &slot_row {
                row[col] = val;
            }
            row[schema.pin_role_offset() + role.one_hot_index()] = 1.0;
            for (i, g) in globals_row.iter().enumerate() {
                row[schema.global_offset() + i] = *g;
            }
            row[d - 1] = 1.0;
            node_of.insert((comp.name.as_str(), *role), v as u32);
            node_map.push((comp.name.clone(), *role));
        }
        let last = node_map.len();
        for a in first..last {
            for b in a + 1..last {
                edges.insert((a as u32, b as u32));
            }
        }
    }

    for pins in c.nets.values() {
        let ids: Vec<u32> = pins
            .iter()
            .filter_map(|p| node_of.get(&(p.component.as_str(), p.role)).copied())
            .collect();
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                if a != b {
                    edges.insert((a.min(b), a.max(b)));
                }
            }
        }
    }

    Ok(PinGraph { n, d, x, edges: edges.into_iter().collect(), node_map, y: yv, y_mask: mask })
}

impl PinGraph {
    pub fn row(&self, v: usize) -> &[f32] {
        &self.x[v * self.d..(v + 1) * self.d]
    }

    /// Checks the structural invariants.
    pub fn check(&self) -> Result<(), GraphError> {
        if self.x.len() != self.n * self.d {
            return Err(GraphError::Invalid("feature matrix size".into()));
        }
        if self.y.len() != self.y_mask.len() {
            return Err(GraphError::Invalid("target and mask lengths differ".into()));
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(GraphError::Invalid("non-finite feature".into()));
        }
        for w in self.edges.windows(2) {
            if w[0] >= w[1] {
                return Err(GraphError::Invalid("edges not sorted and unique".into()));
            }
        }
        for &(u, v) in &self.edges {
            if u >= v || v as usize >= self.n {
                return Err(GraphError::Invalid("edge out of range or not u < v".into()));
            }
        }
        Ok(())
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(u, v) in &self.edges {
            deg[u as usize] += 1;
            deg[v as usize] += 1;
        }
        deg
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScalerError {
    #[error("cannot fit a scaler on an empty split")]
    EmptySplit,
    #[error("head `{0}` has no present targets in the training split")]
    NoTargets(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("head `{0}` has a target outside the domain of its transform")]
    TransformDomain(String),
}

/// Per-column min–max feature scaler.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FeatureScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub passthrough: Vec<bool>,
    pub fitted_on: String,
}

impl FeatureScaler {
    pub fn fit<'a>(
        graphs: impl IntoIterator<Item = &'a PinGraph>,
        passthrough: Vec<bool>,
        fitted_on: &str,
    ) -> Result<Self, ScalerError> {
        let d = passthrough.len();
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        let mut any = false;
        for g in graphs {
            if g.d != d {
                return Err(ScalerError::DimensionMismatch { expected: d, found: g.d });
            }
            for row in g.x.chunks_exact(d) {
                any = true;
                for (c, &v) in row.iter().enumerate() {
                    let v = v as f64;
                    min[c] = min[c].min(v);
                    max[c] = max[c].max(v);
                }
            }
        }
        if !any {
            return Err(ScalerError::EmptySplit);
        }
        Ok(Self { min, max, passthrough, fitted_on: fitted_on.to_owned() })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    #[inline]
    pub fn apply_value(&self, col: usize, v: f64) -> f64 {
        if self.passthrough[col] {
            return v;
        }
        let range = self.max[col] - self.min[col];
        if range > 0.0 {
            (v - self.min[col]) / range
        } else {
            0.0
        }
    }

    /// Scaled copy of the feature matrix of `g`.
    pub fn apply<T: Scalar>(&self, g: &PinGraph) -> Result<Vec<T>, ScalerError> {
        let d = self.dim();
        if g.d != d {
            return Err(ScalerError::DimensionMismatch { expected: d, found: g.d });
        }
        Ok(g.x
            .chunks_exact(d)
            .flat_map(|row| row.iter().enumerate().map(|(c, &v)| T::lit(self.apply_value(c, v as f64))))
            .collect())
    }
}

/// Per-head z-score target standardizer (population statistics).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TargetScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub transforms: Vec<TargetTransform>,
    pub fitted_on: String,
}

impl TargetScaler {
    pub fn fit<'a>(
        graphs: impl IntoIterator<Item = &'a PinGraph>,
        targets: &TargetSpec,
        fitted_on: &str,
    ) -> Result<Self, ScalerError> {
        let h = targets.len();
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); h];
        let mut any = false;
        for g in graphs {
            any = true;
            if g.y.len() != h {
                return Err(ScalerError::DimensionMismatch { expected: h, found: g.y.len() });
            }
            for i in 0..h {
                if g.y_mask[i] {
                    let t = targets.heads()[i].transform.forward(g.y[i]);
                    if !t.is_finite() {
                        return Err(ScalerError::TransformDomain(targets.heads()[i].name.clone()));
                    }
                    cols[i].push(t);
                }
            }
        }
        if !any {
            return Err(ScalerError::EmptySplit);
        }
        let mut mean = Vec::with_capacity(h);
        let mut std = Vec::with_capacity(h);
        for (i, col) in cols.iter().enumerate() {
            if col.is_empty() {
                return Err(ScalerError::NoTargets(targets.heads()[i].name.clone()));
            }
            let (m, s) = mean_and_population_std(col);
            mean.push(m);
            std.push(s);
        }
        let transforms = targets.heads().iter().map(|h| h.transform).collect();
        Ok(Self { mean, std, transforms, fitted_on: fitted_on.to_owned() })
    }

    fn transform(&self, head: usize) -> TargetTransform {
        self.transforms.get(head).copied().unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Original units to standardized units.
    #[inline]
    pub fn apply(&self, head: usize, y: f64) -> f64 {
        let y = self.transform(head).forward(y);
        if self.std[head] > 0.0 {
            (y - self.mean[head]) / self.std[head]
        } else {
            0.0
        }
    }

    /// Standardized units back to original units.
    #[inline]
    pub fn invert(&self, head: usize, y_std: f64) -> f64 {
        self.transform(head).inverse(self.invert_transformed(head, y_std))
    }

    /// Standardized units back to the transformed (for example log10) scale.
    #[inline]
    pub fn invert_transformed(&self, head: usize, y_std: f64) -> f64 {
        if self.std[head] > 0.0 {
            y_std * self.std[head] + self.mean[head]
        } else {
            self.mean[head]
        }
    }

    pub fn apply_all(&self, y: &[f64]) -> Result<Vec<f64>, ScalerError> {
        self.check_len(y.len())?;
        Ok(y.iter().enumerate().map(|(i, &v)| self.apply(i, v)).collect())
    }

    pub fn invert_all(&self, y: &[f64]) -> Result<Vec<f64>, ScalerError> {
        self.check_len(y.len())?;
        Ok(y.iter().enumerate().map(|(i, &v)| self.invert(i, v)).collect())
    }

    fn check_len(&self, n: usize) -> Result<(), ScalerError> {
        if n == self.len() {
            Ok(())
        } else {
            Err(ScalerError::DimensionMismatch { expected: self.len(), found: n })
        }
    }
}

/// Two-pass mean and population standard deviation.
pub fn mean_and_population_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, libm::sqrt(var))
}
