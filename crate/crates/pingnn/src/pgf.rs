//! PGF graph-store files.
//!
//! Little-endian layout:
//!
//! | field | type |
//! |---|---|
//! | magic `PGF1` | 4 bytes |
//! | format version | u32 |
//! | schema hash | u32 |
//! | head count H | u32 |
//! | record count | u32 |
//! | per record: n, d, e | u32 ×3 |
//! | per record: split tag (0 train, 1 val, 2 test) | u8 |
//! | per record: features, row-major | n·d × f32 |
//! | per record: edges `(u, v)` with `u < v` | e × 2 × u32 |
//! | per record: targets | H × f64 |
//! | per record: target mask | H × u8 |
//! | checksum | u64 |
//!
//! The checksum is CRC-64/XZ (ECMA-182 polynomial `0x42F0E1EBA9EA3693`,
//! reflected, init and xor-out all ones) over every preceding byte.
//!
//! Head names, units and the schema itself live in a JSON sidecar next to
//! the store (`<file>.json`), see [`StoreMeta`].

use std::path::{Path, PathBuf};

use crc::{Crc, CRC_64_XZ};
use pingnn_core::dataset::{GraphRecord, GraphStore, Split, SplitRatios};
use pingnn_core::graph::PinGraph;
use pingnn_core::target::TargetSpec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{io, Error, Result};
use crate::schema::{read_json, write_json, SchemaFile};

pub const MAGIC: &[u8; 4] = b"PGF1";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;
const CHECKSUM_LEN: usize = 8;
pub const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PgfError {
    #[error("not a PGF file")]
    BadMagic,
    #[error("PGF format version {found} is not supported (expected {expected})")]
    FormatVersionMismatch { found: u32, expected: u32 },
    #[error("PGF checksum mismatch or truncated file")]
    ChecksumError,
    #[error("malformed PGF record {record}: {reason}")]
    Malformed { record: usize, reason: String },
    #[error("store has {store} heads but its metadata lists {meta}")]
    HeadCountMismatch { store: usize, meta: usize },
    #[error("store schema hash {store:08x} does not match metadata {meta:08x}")]
    SchemaHashMismatch { store: u32, meta: u32 },
}

/// Raw contents of a PGF file.
#[derive(Debug, Clone, PartialEq)]
pub struct PgfContents {
    pub schema_hash: u32,
    pub heads: usize,
    pub records: Vec<GraphRecord>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("PGF field exceeds u32").to_le_bytes());
}

pub fn encode(schema_hash: u32, heads: usize, records: &[GraphRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&schema_hash.to_le_bytes());
    put_u32(&mut out, heads);
    put_u32(&mut out, records.len());
    for r in records {
        let g = &r.graph;
        put_u32(&mut out, g.n);
        put_u32(&mut out, g.d);
        put_u32(&mut out, g.edges.len());
        out.push(r.split as u8);
        for v in &g.x {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &(u, v) in &g.edges {
            out.extend_from_slice(&u.to_le_bytes());
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &g.y {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend(g.y_mask.iter().map(|&m| m as u8));
    }
    let sum = CRC64.checksum(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    record: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], PgfError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(PgfError::Malformed {
            record: self.record,
            reason: "record runs past the end of the data".into(),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, PgfError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn len(&mut self, per_item: usize) -> Result<usize, PgfError> {
        let n = self.u32()? as usize;
        if n.saturating_mul(per_item) > self.bytes.len() - self.pos {
            return Err(PgfError::Malformed { record: self.record, reason: "length field exceeds the file".into() });
        }
        Ok(n)
    }
}

pub fn decode(bytes: &[u8]) -> Result<PgfContents, PgfError> {
    if bytes.len() < MAGIC.len() {
        return Err(PgfError::ChecksumError);
    }
    if &bytes[..4] != MAGIC {
        return Err(PgfError::BadMagic);
    }
    if bytes.len() < HEADER_LEN + CHECKSUM_LEN {
        return Err(PgfError::ChecksumError);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(PgfError::FormatVersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    let (body, tail) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if CRC64.checksum(body) != u64::from_le_bytes(tail.try_into().unwrap()) {
        return Err(PgfError::ChecksumError);
    }
    let mut r = Reader { bytes: body, pos: 8, record: 0 };
    let schema_hash = r.u32()?;
    let heads = r.u32()? as usize;
    let count = r.len(13)?;
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        r.record = i;
        let n = r.u32()? as usize;
        let d = r.u32()? as usize;
        let e = r.u32()? as usize;
        let split = Split::from_tag(r.take(1)?[0])
            .ok_or(PgfError::Malformed { record: i, reason: "unknown split tag".into() })?;
        let x = r.take(n.saturating_mul(d).saturating_mul(4))?;
        let x = x.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        let edges: Vec<(u32, u32)> = r
            .take(e.saturating_mul(8))?
            .chunks_exact(8)
            .map(|b| (u32::from_le_bytes(b[..4].try_into().unwrap()), u32::from_le_bytes(b[4..].try_into().unwrap())))
            .collect();
        let y = r.take(heads * 8)?.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        let y_mask = r
            .take(heads)?
            .iter()
            .map(|&m| match m {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(PgfError::Malformed { record: i, reason: "mask byte is not 0 or 1".into() }),
            })
            .collect::<Result<_, _>>()?;
        let graph = PinGraph { n, d, x, edges, node_map: Vec::new(), y, y_mask };
        graph.check().map_err(|e| PgfError::Malformed { record: i, reason: e.to_string() })?;
        records.push(GraphRecord { graph, split });
    }
    if r.pos != body.len() {
        return Err(PgfError::Malformed { record: count, reason: "trailing bytes after the last record".into() });
    }
    Ok(PgfContents { schema_hash, heads, records })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn of(store: &GraphStore) -> Self {
        Self { train: store.count(Split::Train), val: store.count(Split::Val), test: store.count(Split::Test) }
    }
}

/// Sidecar metadata written next to every store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreMeta {
    pub format_version: u32,
    pub circuit_class: String,
    pub schema_hash: u32,
    pub feature_dim: usize,
    pub records: usize,
    pub splits: SplitCounts,
    pub ratios: SplitRatios,
    pub seed: u64,
    pub targets: TargetSpec,
    pub schema: SchemaFile,
}

pub fn sidecar_path(store: &Path) -> PathBuf {
    let mut s = store.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_store(path: &Path, store: &GraphStore, meta: &StoreMeta) -> Result<()> {
    let bytes = encode(store.schema_hash, store.targets.len(), &store.records);
    std::fs::write(path, bytes).map_err(io(path))?;
    write_json(&sidecar_path(path), meta)
}

pub fn load_store(path: &Path) -> Result<(GraphStore, StoreMeta)> {
    let bytes = std::fs::read(path).map_err(io(path))?;
    let contents = decode(&bytes)?;
    let meta: StoreMeta = read_json(&sidecar_path(path))?;
    if contents.heads != meta.targets.len() {
        return Err(PgfError::HeadCountMismatch { store: contents.heads, meta: meta.targets.len() }.into());
    }
    if contents.schema_hash != meta.schema_hash {
        return Err(PgfError::SchemaHashMismatch { store: contents.schema_hash, meta: meta.schema_hash }.into());
    }
    if let Some(bad) = contents.records.iter().position(|r| r.graph.d != meta.feature_dim) {
        return Err(Error::Invalid(format!("record {bad} has a feature width other than {}", meta.feature_dim)));
    }
    let store = GraphStore { schema_hash: contents.schema_hash, targets: meta.targets.clone(), records: contents.records };
    Ok((store, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(i: usize) -> GraphRecord {
        let n = 2 + i % 3;
        let d = 3;
        let x = (0..n * d).map(|k| (k as f32 + 0.1) * (i as f32 + 1.0).sqrt()).collect();
        let edges = (1..n as u32).map(|v| (v - 1, v)).collect();
        let graph = PinGraph {
            n,
            d,
            x,
            edges,
            node_map: Vec::new(),
            y: vec![i as f64 * 1e-7 + 0.3, -1.0 / (i as f64 + 1.0)],
            y_mask: vec![true, i % 4 != 0],
        };
        GraphRecord { graph, split: Split::ALL[i % 3] }
    }

    #[test]
    fn hundred_records_round_trip_field_by_field() {
        let records: Vec<_> = (0..100).map(record).collect();
        let bytes = encode(0xdead_beef, 2, &records);
        let back = decode(&bytes).unwrap();
        assert_eq!(back.schema_hash, 0xdead_beef);
        assert_eq!(back.heads, 2);
        assert_eq!(back.records, records);
        for (a, b) in back.records.iter().zip(&records) {
            for (p, q) in a.graph.x.iter().zip(&b.graph.x) {
                assert_eq!(p.to_bits(), q.to_bits());
            }
        }
    }

    #[test]
    fn truncation_is_a_checksum_error() {
        let bytes = encode(1, 2, &[record(0), record(1)]);
        for cut in [bytes.len() - 1, bytes.len() - 9, 30, 10, 4] {
            assert_eq!(decode(&bytes[..cut]), Err(PgfError::ChecksumError), "cut {cut}");
        }
    }

    #[test]
    fn flipped_byte_is_a_checksum_error() {
        let mut bytes = encode(1, 2, &[record(3)]);
        bytes[30] ^= 0x10;
        assert_eq!(decode(&bytes), Err(PgfError::ChecksumError));
    }

    #[test]
    fn version_and_magic_are_checked() {
        let mut bytes = encode(1, 2, &[record(0)]);
        bytes[4] = 9;
        assert_eq!(decode(&bytes), Err(PgfError::FormatVersionMismatch { found: 9, expected: 1 }));
        bytes[0] = b'X';
        assert_eq!(decode(&bytes), Err(PgfError::BadMagic));
    }

    #[test]
    fn layout_is_little_endian() {
        let bytes = encode(0x0102_0304, 2, &[]);
        assert_eq!(&bytes[..4], b"PGF1");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &[4, 3, 2, 1]);
        assert_eq!(&bytes[12..20], &[2, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(bytes.len(), 28);
    }

    #[test]
    fn crc64_check_value() {
        assert_eq!(CRC64.checksum(b"123456789"), 0x995d_c9bb_df19_39fa);
    }
}
