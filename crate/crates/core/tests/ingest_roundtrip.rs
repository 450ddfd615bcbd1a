use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rsr_core::ingest::{parse_token_stats, validate_dataset, write_token_stats, DatasetManifest};
use rsr_core::model::{TokenStat, TrajectoryDataset, TrajectoryRecord};

fn random_record(rng: &mut ChaCha8Rng, i: usize) -> TrajectoryRecord {
    let k_ext = 1000;
    let len = rng.random_range(1..40);
    let tokens = (0..len)
        .map(|_| {
            let mut t = if rng.random_bool(0.02) {
                TokenStat::new(k_ext, rng.random_range(5.0..25.0)).saturated()
            } else {
                TokenStat::new(rng.random_range(1..k_ext), rng.random_range(0.0..12.0))
            };
            if rng.random_bool(0.3) {
                t = t.with_local_surprisal(rng.random_range(0.0..12.0));
            }
            if rng.random_bool(0.3) {
                t = t.with_entropy(rng.random_range(0.0..6.0));
            }
            t
        })
        .collect();
    let mut r = TrajectoryRecord::new(format!("prob-{:05}", i / 3), format!("teacher-{}", i % 3), 1 + (i % 3) as u32, tokens);
    if rng.random_bool(0.5) {
        r = r.with_text(format!("step {i}: \"quoted\" \\ unicode \u{3b1}\nnext line"));
    }
    if rng.random_bool(0.5) {
        r = r.with_correct(rng.random_bool(0.5));
    }
    if rng.random_bool(0.3) {
        r = r.with_score("g_norm", rng.random_range(-5.0..5.0));
    }
    r
}

fn manifest() -> DatasetManifest {
    DatasetManifest::new("fixture", "student")
}

#[test]
fn five_thousand_records_round_trip_bytes() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let records: Vec<_> = (0..5000).map(|i| random_record(&mut rng, i)).collect();
    let ds = TrajectoryDataset::new("fixture", "student", 1000, records);
    let mut first = Vec::new();
    write_token_stats(&ds, &mut first).unwrap();
    let parsed = parse_token_stats(first.as_slice(), Some(&manifest())).unwrap();
    assert_eq!(parsed.len(), 5000);
    assert_eq!(parsed, ds);
    let mut second = Vec::new();
    write_token_stats(&parsed, &mut second).unwrap();
    assert_eq!(first, second);
    let report = validate_dataset(&parsed, 100);
    assert!(report.is_ok(), "{:?}", report.violations);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parse_serialize_parse_is_identity(seed in any::<u64>(), n in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let records: Vec<_> = (0..n).map(|i| random_record(&mut rng, i)).collect();
        let ds = TrajectoryDataset::new("fixture", "student", 1000, records);
        let mut buf = Vec::new();
        write_token_stats(&ds, &mut buf).unwrap();
        let once = parse_token_stats(buf.as_slice(), Some(&manifest())).unwrap();
        let mut again = Vec::new();
        write_token_stats(&once, &mut again).unwrap();
        let twice = parse_token_stats(again.as_slice(), Some(&manifest())).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn arbitrary_lines_never_panic(lines in prop::collection::vec(".{0,80}", 0..10)) {
        let text = lines.join("\n");
        let _ = parse_token_stats(text.as_bytes(), None);
        let _ = rsr_core::ingest::validate_source(text.as_bytes(), None, 100);
    }
}
