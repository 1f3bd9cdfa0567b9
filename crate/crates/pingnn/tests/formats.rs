use pingnn::pgf::{decode, encode, PgfError};
use pingnn::schema::{parse_schema, schema_hash, schema_json};
use pingnn_core::dataset::{synth_schema, GraphRecord, Split};
use pingnn_core::graph::PinGraph;
use proptest::prelude::*;

const HEADS: usize = 3;

fn record() -> impl Strategy<Value = GraphRecord> {
    (1usize..9, 1usize..6).prop_flat_map(|(n, d)| {
        let pairs: Vec<(u32, u32)> =
            (0..n as u32).flat_map(|a| (a + 1..n as u32).map(move |b| (a, b))).collect();
        let k = pairs.len();
        (
            prop::collection::vec(-1e30f32..1e30, n * d),
            prop::sample::subsequence(pairs, 0..=k),
            prop::collection::vec(any::<u64>().prop_map(f64::from_bits), HEADS),
            prop::collection::vec(any::<bool>(), HEADS),
            0u8..3,
        )
            .prop_map(move |(x, edges, y, y_mask, tag)| GraphRecord {
                graph: PinGraph { n, d, x, edges, node_map: Vec::new(), y, y_mask },
                split: Split::from_tag(tag).unwrap(),
            })
    })
}

fn bits(r: &GraphRecord) -> (Vec<u32>, Vec<u64>) {
    (r.graph.x.iter().map(|v| v.to_bits()).collect(), r.graph.y.iter().map(|v| v.to_bits()).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pgf_round_trip_is_bit_exact(hash in any::<u32>(), records in prop::collection::vec(record(), 0..12)) {
        let bytes = encode(hash, HEADS, &records);
        let back = decode(&bytes).unwrap();
        prop_assert_eq!(back.schema_hash, hash);
        prop_assert_eq!(back.heads, HEADS);
        prop_assert_eq!(back.records.len(), records.len());
        for (a, b) in records.iter().zip(&back.records) {
            prop_assert_eq!(bits(a), bits(b));
            prop_assert_eq!(&a.graph.edges, &b.graph.edges);
            prop_assert_eq!(&a.graph.y_mask, &b.graph.y_mask);
            prop_assert_eq!((a.graph.n, a.graph.d, a.split), (b.graph.n, b.graph.d, b.split));
        }
        prop_assert_eq!(encode(hash, HEADS, &back.records), bytes);
    }

    #[test]
    fn any_corrupted_byte_is_rejected(
        records in prop::collection::vec(record(), 1..4),
        at in any::<prop::sample::Index>(),
        flip in 1u8..=255,
    ) {
        let mut bytes = encode(7, HEADS, &records);
        let i = at.index(bytes.len());
        bytes[i] ^= flip;
        prop_assert!(decode(&bytes).is_err());
    }

    #[test]
    fn truncation_is_a_checksum_error(records in prop::collection::vec(record(), 1..4), cut in any::<prop::sample::Index>()) {
        let bytes = encode(7, HEADS, &records);
        let keep = 4 + cut.index(bytes.len() - 4);
        prop_assert_eq!(decode(&bytes[..keep]), Err(PgfError::ChecksumError));
    }
}

#[test]
fn schema_json_round_trip_keeps_the_hash() {
    let s = synth_schema();
    let text = schema_json(&s);
    let back = parse_schema(&text).unwrap();
    assert_eq!(back, s);
    assert_eq!(schema_hash(&back), schema_hash(&s));
    assert_eq!(schema_json(&back), text);
}
