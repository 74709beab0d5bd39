use chrono::Duration;
use proptest::prelude::*;
use watermain::features::{self, jan1, one_hot_sums, Coverage, FeatureSpec, Vocabularies};
use watermain::ingest::{self, BlockTable, BreakEvent, IngestConfig};
use watermain::synth::{self, SynthParams};
use watermain::EventId;

fn table(seed: u64) -> BlockTable {
    let city = synth::generate_city(&SynthParams { seed, ..SynthParams::default() }.with_blocks(150, 15)).unwrap();
    let cfg = IngestConfig { current_year: 2016, ..IngestConfig::default() };
    let (raw, _) = ingest::parse_city(&city.files(), &cfg).unwrap();
    BlockTable::build(&raw, 25.0).unwrap()
}

fn spec(t: &BlockTable) -> FeatureSpec {
    FeatureSpec::default().with_vocab(Vocabularies::from_table(t))
}

#[test]
fn one_hot_families_sum_to_one() {
    let t = table(1);
    let m = features::build_features(&t, &spec(&t), jan1(2010), &Coverage::years(2005, 2015)).unwrap();
    for r in 0..m.n_rows() {
        let sums = one_hot_sums(&m, r);
        assert_eq!(sums.len(), 4);
        assert!(sums.values().all(|&s| s == 1.0), "row {r}: {sums:?}");
    }
}

#[test]
fn columns_match_spec_names() {
    let t = table(2);
    let s = spec(&t);
    let m = features::build_features(&t, &s, jan1(2012), &Coverage::years(2005, 2015)).unwrap();
    assert_eq!(m.columns, s.column_names());
    assert!(m.columns.iter().any(|c| c == "breaks_all"));
}

#[test]
fn reference_outside_coverage_is_rejected() {
    let t = table(3);
    assert!(features::build_features(&t, &spec(&t), jan1(2020), &Coverage::years(2005, 2015)).is_err());
}

#[test]
fn matrix_csv_round_trip() {
    let t = table(4);
    let m = features::labeled_matrix(&t, &spec(&t), jan1(2011), 3, &Coverage::years(2005, 2015)).unwrap();
    assert_eq!(features::FeatureMatrix::from_csv(&m.to_csv()).unwrap(), m);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn later_breaks_do_not_leak(seed in 0u64..50, block in 0usize..150, ref_year in 2006i32..2015, offset in 0i64..2000) {
        let t = table(seed % 5);
        let s = spec(&t);
        let cov = Coverage::years(2005, 2015);
        let reference = jan1(ref_year);
        let before = features::build_features(&t, &s, reference, &cov).unwrap();
        let mut changed = t.clone();
        let row = &mut changed.rows[block % t.rows.len()];
        let point = row.geometry.point_at_fraction(0.3);
        row.breaks.push(BreakEvent { event_id: EventId(u64::MAX), date: reference + Duration::days(offset), point });
        row.breaks.sort_by_key(|e| (e.date, e.event_id));
        let after = features::build_features(&changed, &s, reference, &cov).unwrap();
        prop_assert_eq!(before, after);
    }
}
