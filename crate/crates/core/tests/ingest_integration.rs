use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use watermain::ingest::{self, BlockTable, IngestConfig, IngestError, RawFiles};
use watermain::synth::{self, SynthParams};

fn small_city() -> RawFiles {
    synth::generate_city(&SynthParams { seed: 3, ..SynthParams::default() }.with_blocks(120, 12)).unwrap().files()
}

fn cfg() -> IngestConfig {
    IngestConfig { current_year: 2016, ..IngestConfig::default() }
}

fn shuffle_rows(text: &str, rng: &mut ChaCha8Rng) -> String {
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    let mut rows: Vec<&str> = lines.collect();
    rows.shuffle(rng);
    std::iter::once(header).chain(rows).map(|l| format!("{l}\n")).collect()
}

fn map_files(files: &RawFiles, mut f: impl FnMut(&str) -> String) -> RawFiles {
    RawFiles {
        work_orders: f(&files.work_orders),
        mains: f(&files.mains),
        blocks: f(&files.blocks),
        road_ratings: f(&files.road_ratings),
        parcels: f(&files.parcels),
        notebook: f(&files.notebook),
    }
}

#[test]
fn csv_round_trip_is_lossless() {
    let files = small_city();
    let (raw, report) = ingest::parse_city(&files, &cfg()).unwrap();
    assert!(report.rejects.is_empty());
    let again = RawFiles::from_city(&raw);
    let (raw2, _) = ingest::parse_city(&again, &cfg()).unwrap();
    assert_eq!(raw, raw2);
}

#[test]
fn write_and_read_dir_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let files = small_city();
    files.write_dir(dir.path()).unwrap();
    assert_eq!(RawFiles::read_dir(dir.path()).unwrap(), files);
}

#[test]
fn row_order_does_not_change_the_table() {
    let files = small_city();
    let (raw, _) = ingest::parse_city(&files, &cfg()).unwrap();
    let base = BlockTable::build(&raw, 25.0).unwrap();
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shuffled = map_files(&files, |t| shuffle_rows(t, &mut rng));
        let (raw2, _) = ingest::parse_city(&shuffled, &cfg()).unwrap();
        assert_eq!(BlockTable::build(&raw2, 25.0).unwrap(), base);
    }
}

fn corrupt_mains(files: &RawFiles, every: usize) -> RawFiles {
    let mut out = files.clone();
    out.mains = files
        .mains
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i > 0 && i % every == 0 {
                let (id, rest) = l.split_once(',').unwrap();
                let (_, tail) = rest.split_once(',').unwrap();
                format!("{id},not a line,{tail}\n")
            } else {
                format!("{l}\n")
            }
        })
        .collect();
    out
}

#[test]
fn few_bad_rows_are_rejected_and_tallied() {
    let files = corrupt_mains(&small_city(), 20);
    let (_, report) = ingest::parse_city(&files, &cfg()).unwrap();
    let bad = report.rejects.iter().filter(|r| r.file == ingest::MAINS).count();
    assert!(bad > 0);
    let stats = report.files.iter().find(|f| f.file == ingest::MAINS).unwrap();
    assert_eq!(stats.rejected, bad);
    assert!(report.rejects_csv().lines().count() > bad);
}

#[test]
fn too_many_bad_rows_are_fatal() {
    let files = corrupt_mains(&small_city(), 5);
    match ingest::parse_city(&files, &cfg()) {
        Err(IngestError::TooManyRejects { file, .. }) => assert_eq!(file, ingest::MAINS),
        other => panic!("expected reject threshold error, got {other:?}"),
    }
}

#[test]
fn duplicate_ids_are_fatal() {
    let mut files = small_city();
    let second = files.blocks.lines().nth(1).unwrap().to_string();
    files.blocks.push_str(&format!("{second}\n"));
    assert!(matches!(ingest::parse_city(&files, &cfg()), Err(IngestError::Duplicate { .. })));
}

#[test]
fn missing_file_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    small_city().write_dir(dir.path()).unwrap();
    std::fs::remove_file(dir.path().join(ingest::MAINS)).unwrap();
    let err = RawFiles::read_dir(dir.path()).unwrap_err();
    assert!(matches!(err, IngestError::MissingFile(_)));
    assert!(err.to_string().contains(ingest::MAINS));
}

#[test]
fn missing_column_is_fatal() {
    let mut files = small_city();
    files.parcels = files.parcels.replacen("first_tax_year", "tax_year", 1);
    assert!(matches!(ingest::parse_city(&files, &cfg()), Err(IngestError::MissingColumn { .. })));
}
