//! JSON form of a [`FeatureSchema`].
//!
//! ```json
//! {
//!   "circuit_class": "rc_lowpass",
//!   "symmetry_groups": {"R": ["R1"], "C": ["C1"]},
//!   "slots": [{"group": "R", "param": "value", "transform": "log10"}],
//!   "globals": ["vdd"]
//! }
//! ```
//!
//! Group order is the order of keys in the document.

use std::path::Path;

use crc::{Crc, CRC_32_ISO_HDLC};
use pingnn_core::graph::{FeatureSchema, SchemaError, Slot, SlotTransform};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{io, json, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlotFile {
    pub group: String,
    pub param: String,
    #[serde(default, skip_serializing_if = "is_identity")]
    pub transform: SlotTransform,
}

fn is_identity(t: &SlotTransform) -> bool {
    *t == SlotTransform::Identity
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaFile {
    pub circuit_class: String,
    pub symmetry_groups: Map<String, Value>,
    #[serde(default)]
    pub slots: Vec<SlotFile>,
    #[serde(default)]
    pub globals: Vec<String>,
}

impl SchemaFile {
    pub fn from_schema(s: &FeatureSchema) -> Self {
        let symmetry_groups = s
            .groups
            .iter()
            .map(|(g, members)| (g.clone(), Value::from(members.clone())))
            .collect();
        Self {
            circuit_class: s.circuit_class.clone(),
            symmetry_groups,
            slots: s
                .slots
                .iter()
                .map(|sl| SlotFile { group: sl.group.clone(), param: sl.param.clone(), transform: sl.transform })
                .collect(),
            globals: s.globals.clone(),
        }
    }

    pub fn to_schema(&self) -> Result<FeatureSchema, SchemaError> {
        let mut groups = Vec::with_capacity(self.symmetry_groups.len());
        for (name, members) in &self.symmetry_groups {
            let members: Vec<String> = serde_json::from_value(members.clone()).map_err(|_| {
                SchemaError::Malformed(format!("group `{name}` must be a list of component names"))
            })?;
            groups.push((name.clone(), members));
        }
        let slots = self
            .slots
            .iter()
            .map(|s| Slot { group: s.group.clone(), param: s.param.clone(), transform: s.transform })
            .collect();
        FeatureSchema::new(self.circuit_class.clone(), groups, slots, self.globals.clone())
    }
}

pub fn parse_schema(text: &str) -> Result<FeatureSchema, SchemaError> {
    let file: SchemaFile = serde_json::from_str(text).map_err(|e| SchemaError::Malformed(e.to_string()))?;
    file.to_schema()
}

pub fn load_schema(path: &Path) -> Result<FeatureSchema> {
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    Ok(parse_schema(&text)?)
}

pub fn schema_json(s: &FeatureSchema) -> String {
    serde_json::to_string_pretty(&SchemaFile::from_schema(s)).expect("schema serializes")
}

pub fn save_schema(path: &Path, s: &FeatureSchema) -> Result<()> {
    std::fs::write(path, schema_json(s) + "\n").map_err(io(path))
}

/// CRC-32 (ISO-HDLC) of the compact canonical JSON form.
pub fn schema_hash(s: &FeatureSchema) -> u32 {
    let bytes = serde_json::to_vec(&SchemaFile::from_schema(s)).expect("schema serializes");
    Crc::<u32>::new(&CRC_32_ISO_HDLC).checksum(&bytes)
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    serde_json::from_str(&text).map_err(json(path))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(json(path))?;
    text.push('\n');
    std::fs::write(path, text).map_err(io(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use pingnn_core::dataset::synth_schema;

    const TWO_GROUPS: &str = r#"{
        "circuit_class": "amp",
        "symmetry_groups": {"DP": ["M1", "M2"], "LOAD": ["R1"]},
        "slots": [{"group": "DP", "param": "W"}, {"group": "LOAD", "param": "value"}],
        "globals": ["vdd"]
    }"#;

    #[test]
    fn column_count_examples() {
        assert_eq!(parse_schema(TWO_GROUPS).unwrap().feature_dim(), 8);
        let empty = r#"{"circuit_class": "x", "symmetry_groups": {"G": ["R1"]}}"#;
        assert_eq!(parse_schema(empty).unwrap().feature_dim(), 5);
    }

    #[test]
    fn component_in_two_groups_is_rejected() {
        let bad = r#"{"circuit_class": "x", "symmetry_groups": {"A": ["M1"], "B": ["M1"]}}"#;
        assert!(matches!(parse_schema(bad), Err(SchemaError::ComponentInTwoGroups { .. })));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let bad = r#"{"circuit_class": "x", "symmetry_groups": {}, "colour": 1}"#;
        assert!(matches!(parse_schema(bad), Err(SchemaError::Malformed(_))));
        let bad_slot = r#"{"circuit_class": "x", "symmetry_groups": {"A": ["R1"]},
            "slots": [{"group": "A", "param": "value", "scale": 2}]}"#;
        assert!(matches!(parse_schema(bad_slot), Err(SchemaError::Malformed(_))));
    }

    #[test]
    fn group_order_follows_the_document() {
        let s = parse_schema(r#"{"circuit_class": "x", "symmetry_groups": {"Z": ["R2"], "A": ["R1"]}}"#).unwrap();
        assert_eq!(s.groups[0].0, "Z");
        assert_eq!(s.groups[1].0, "A");
    }

    #[test]
    fn json_round_trip_and_stable_hash() {
        let s = synth_schema();
        let back = parse_schema(&schema_json(&s)).unwrap();
        assert_eq!(back, s);
        assert_eq!(schema_hash(&back), schema_hash(&s));
        let other = parse_schema(TWO_GROUPS).unwrap();
        assert_ne!(schema_hash(&other), schema_hash(&s));
    }
}
