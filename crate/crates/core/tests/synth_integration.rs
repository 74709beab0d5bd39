use std::collections::{BTreeMap, BTreeSet};

use chrono::Datelike;
use watermain::eval::{self, precision_recall_at_k, top_k_count, ExperimentConfig, RankedList, Strategy};
use watermain::ingest::{self, BlockTable, IngestConfig};
use watermain::synth::{self, three_year_rate, HazardWeights, SynthCity, SynthParams};
use watermain::BlockId;

fn ingest(city: &SynthCity) -> (BlockTable, usize) {
    let cfg = IngestConfig { current_year: city.params.last_year() + 1, ..IngestConfig::default() };
    let (raw, report) = ingest::parse_city(&city.files(), &cfg).unwrap();
    (BlockTable::build(&raw, 25.0).unwrap(), report.rejects.len())
}

/// Per block, whether it broke in each data year.
fn broke_by_year(table: &BlockTable, first: i32, years: usize) -> BTreeMap<BlockId, Vec<bool>> {
    table
        .rows
        .iter()
        .map(|r| {
            let mut v = vec![false; years];
            for b in &r.breaks {
                v[(b.date.year() - first) as usize] = true;
            }
            (r.block_id, v)
        })
        .collect()
}

#[test]
fn zero_weights_hit_the_target_rate() {
    for seed in 0..3 {
        let mut p = SynthParams { seed, ..SynthParams::default() };
        p.weights = HazardWeights::zero();
        let city = synth::generate_city(&p).unwrap();
        let (table, _) = ingest(&city);
        let broke: Vec<Vec<bool>> = broke_by_year(&table, p.first_year, p.years as usize).into_values().collect();
        let rate = three_year_rate(&broke);
        assert!((rate - 0.09).abs() <= 0.015, "seed {seed}: rate {rate}");
    }
}

fn mean_hazard_after_break(city: &SynthCity) -> f64 {
    let (table, _) = ingest(city);
    let broke = broke_by_year(&table, city.params.first_year, city.params.years as usize);
    let hs: Vec<f64> = city
        .hazards
        .iter()
        .filter(|h| {
            let i = (h.year - city.params.first_year) as usize;
            i > 0 && broke[&h.block_id][i - 1]
        })
        .map(|h| h.hazard)
        .collect();
    hs.iter().sum::<f64>() / hs.len() as f64
}

#[test]
fn stronger_excitation_raises_post_break_hazard() {
    let p = SynthParams { seed: 8, ..SynthParams::default() };
    let mut doubled = p.clone();
    doubled.weights.past_break *= 2.0;
    let base = mean_hazard_after_break(&synth::generate_city(&p).unwrap());
    let strong = mean_hazard_after_break(&synth::generate_city(&doubled).unwrap());
    assert!(strong > base, "{strong} <= {base}");
}

#[test]
fn generated_data_ingests_cleanly() {
    for seed in [0, 17, 99] {
        let city = synth::generate_city(&SynthParams { seed, ..SynthParams::default() }).unwrap();
        let (table, rejects) = ingest(&city);
        assert_eq!(rejects, 0);
        assert!(table.unmapped_mains.is_empty());
        assert_eq!(table.rows.len(), 500);
    }
}

#[test]
fn blank_fraction_controls_recorded_mains() {
    let city = synth::generate_city(&SynthParams { seed: 2, blank_fraction: 0.98, ..SynthParams::default() }).unwrap();
    let mains = &city.city.mains;
    let recorded = mains.iter().filter(|m| m.install_year.is_some()).count() as f64 / mains.len() as f64;
    assert!((0.005..=0.04).contains(&recorded), "recorded fraction {recorded}");
}

#[test]
fn same_seed_same_city() {
    let p = SynthParams { seed: 5, ..SynthParams::default() }.with_blocks(80, 10);
    let a = synth::generate_city(&p).unwrap();
    let b = synth::generate_city(&p).unwrap();
    assert_eq!(a.files(), b.files());
    assert_eq!(a.hazards_csv(), b.hazards_csv());
}

#[test]
fn true_hazard_ranking_beats_baselines() {
    let seeds = 20;
    let mut truth_mean = 0.0;
    let mut baseline_means: BTreeMap<Strategy, f64> = BTreeMap::new();
    for seed in 0..seeds {
        let city = synth::generate_city(&SynthParams { seed, ..SynthParams::default() }).unwrap();
        let (table, _) = ingest(&city);
        let plan = eval::make_split_plan(2005, 2015, 3, 3).unwrap();
        let report = eval::run_experiment(&table, &ExperimentConfig::default(), &plan).unwrap().report;
        for s in Strategy::BASELINES {
            *baseline_means.entry(s).or_default() += report.mean_precision(s).unwrap() / seeds as f64;
        }
        let modeled: BTreeSet<BlockId> = table.rows.iter().filter(|r| !r.main_less()).map(|r| r.block_id).collect();
        for split in &plan.splits {
            let t = split.test_year;
            // probability of at least one break in [t, t + 3)
            let mut survive: BTreeMap<BlockId, f64> = modeled.iter().map(|&b| (b, 1.0)).collect();
            for h in city.hazards.iter().filter(|h| (t..t + 3).contains(&h.year)) {
                if let Some(s) = survive.get_mut(&h.block_id) {
                    *s *= 1.0 - h.hazard;
                }
            }
            let ids: Vec<BlockId> = survive.keys().copied().collect();
            let scores: Vec<f64> = survive.values().map(|s| 1.0 - s).collect();
            let labels: BTreeMap<BlockId, u8> = table
                .rows
                .iter()
                .filter(|r| modeled.contains(&r.block_id))
                .map(|r| (r.block_id, u8::from(r.breaks.iter().any(|b| (t..t + 3).contains(&b.date.year())))))
                .collect();
            let k = top_k_count(ids.len(), 1.0);
            let pr = precision_recall_at_k(&RankedList::from_scores(&ids, &scores), &labels, k).unwrap();
            truth_mean += pr.precision / (seeds as f64 * plan.splits.len() as f64);
        }
    }
    for (s, m) in baseline_means {
        assert!(truth_mean >= m, "true hazard {truth_mean} below {s} {m}");
    }
}
