//! End-to-end commands: each reads a [`RunConfig`], writes its outputs into
//! `config.out` and echoes the resolved config as `run_config.json`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::Serialize;

use crate::config::RunConfig;
use crate::eval::{self, ExperimentRun, RankedList, ReliabilityBin, Strategy};
use crate::features::{self, jan1, Coverage, FeatureMatrix, Vocabularies};
use crate::gbdt::{self, Dataset};
use crate::ids::BlockId;
use crate::ingest::{self, csv_writer, finish, BlockTable, IngestReport, RawFiles};
use crate::synth::{self, SynthCity};
use crate::Error;

pub const REPORT_JSON: &str = "report.json";
pub const RANKINGS_CSV: &str = "rankings.csv";
pub const RELIABILITY_CSV: &str = "reliability.csv";
pub const PR_CURVE_CSV: &str = "pr_curve.csv";
pub const BLOCK_TABLE_CSV: &str = "block_table.csv";
pub const REJECTS_CSV: &str = "rejects.csv";
pub const INGEST_JSON: &str = "ingest_report.json";
pub const RUN_CONFIG_JSON: &str = "run_config.json";
pub const MODEL_JSON: &str = "model.json";

#[derive(Serialize)]
struct ConfigEcho<'a> {
    command: &'a str,
    config: &'a RunConfig,
}

fn write(dir: &Path, name: &str, body: &str) -> Result<(), Error> {
    let path = dir.join(name);
    fs::write(&path, body).map_err(|source| Error::Io { path, source })
}

fn prepare_out(cfg: &RunConfig, command: &str) -> Result<(), Error> {
    fs::create_dir_all(&cfg.out).map_err(|source| Error::Io { path: cfg.out.clone(), source })?;
    let echo = serde_json::to_string_pretty(&ConfigEcho { command, config: cfg }).expect("config serializes");
    write(&cfg.out, RUN_CONFIG_JSON, &(echo + "\n"))
}

/// Validate, aggregate and impute the dataset in `cfg.data`.
pub fn load_table(cfg: &RunConfig) -> Result<(BlockTable, IngestReport, Option<(NaiveDate, NaiveDate)>), Error> {
    let files = RawFiles::read_dir(&cfg.data)?;
    let (raw, report) = ingest::parse_city(&files, &cfg.ingest_config())?;
    let range = raw.event_date_range();
    let table = BlockTable::build(&raw, cfg.halfwidth)?;
    Ok((table, report, range))
}

/// Event-data years: explicit config values win, otherwise the work-order
/// date range.
pub fn data_years(cfg: &RunConfig, range: Option<(NaiveDate, NaiveDate)>) -> Result<(i32, i32), Error> {
    let first = cfg.start_year.or(range.map(|r| r.0.year()));
    let last = cfg.end_year.or(range.map(|r| r.1.year()));
    match (first, last) {
        (Some(f), Some(l)) => Ok((f, l)),
        _ => Err(Error::NoEventData),
    }
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<SynthCity, Error> {
    let city = synth::generate_city(&cfg.synth_params())?;
    city.write_dir(&cfg.out)?;
    prepare_out(cfg, "synth")?;
    Ok(city)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestSummary {
    pub files: Vec<ingest::FileStats>,
    pub rejected_rows: usize,
    pub blocks: usize,
    pub modeled_blocks: usize,
    pub unmapped_mains: usize,
    pub main_breaks: usize,
}

pub fn cmd_ingest(cfg: &RunConfig) -> Result<IngestSummary, Error> {
    let (table, report, _) = load_table(cfg)?;
    prepare_out(cfg, "ingest")?;
    let mut rejects = report.rejects.clone();
    rejects.extend(table.rejects.iter().cloned());
    let summary = IngestSummary {
        files: report.files.clone(),
        rejected_rows: rejects.len(),
        blocks: table.rows.len(),
        modeled_blocks: table.modeled().count(),
        unmapped_mains: table.unmapped_mains.len(),
        main_breaks: table.rows.iter().map(|r| r.breaks.len()).sum(),
    };
    write(&cfg.out, BLOCK_TABLE_CSV, &table.to_csv())?;
    write(&cfg.out, REJECTS_CSV, &ingest::write_rejects_csv(&rejects))?;
    write(&cfg.out, INGEST_JSON, &(serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n"))?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub run: ExperimentRun,
    /// GBDT ranking of the final test split.
    pub final_rows: Vec<RankingRow>,
}

/// Run temporal cross-validation over the configured data range.
pub fn run_evaluation(cfg: &RunConfig) -> Result<Evaluation, Error> {
    cfg.validate()?;
    let (table, _, range) = load_table(cfg)?;
    let (first, last) = data_years(cfg, range)?;
    let plan = eval::make_split_plan(first, last, cfg.horizon, cfg.min_history)?;
    let run = eval::run_experiment(&table, &cfg.experiment_config(), &plan)?;
    let final_rows = ranking_rows(&table, &run.final_split.ranking, run.final_split.test_year);
    Ok(Evaluation { run, final_rows })
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<Evaluation, Error> {
    let ev = run_evaluation(cfg)?;
    prepare_out(cfg, "evaluate")?;
    let run = &ev.run;
    write(&cfg.out, REPORT_JSON, &(run.report.to_json() + "\n"))?;
    let fs = &run.final_split;
    write(&cfg.out, RANKINGS_CSV, &rankings_csv(&ev.final_rows, Some(&fs.labels)))?;
    write(&cfg.out, RELIABILITY_CSV, &reliability_csv(&run.report.reliability))?;
    let curve = eval::pr_curve(&fs.ranking, &fs.labels)?;
    write(&cfg.out, PR_CURVE_CSV, &pr_curve_csv(&curve))?;
    Ok(ev)
}

pub fn cmd_calibrate(cfg: &RunConfig) -> Result<Vec<ReliabilityBin>, Error> {
    let ev = run_evaluation(cfg)?;
    prepare_out(cfg, "calibrate")?;
    write(&cfg.out, RELIABILITY_CSV, &reliability_csv(&ev.run.report.reliability))?;
    Ok(ev.run.report.reliability)
}

/// One published ranking row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingRow {
    pub rank: usize,
    pub block_id: BlockId,
    pub label: String,
    pub road_rating: u8,
    pub probability: f64,
}

impl RankingRow {
    /// `round(100 * p)` of the clamped probability.
    pub fn risk_score(&self) -> u8 {
        (100.0 * self.probability.clamp(0.0, 1.0)).round() as u8
    }
}

pub fn ranking_rows(table: &BlockTable, ranking: &RankedList, reference_year: i32) -> Vec<RankingRow> {
    ranking
        .entries
        .iter()
        .enumerate()
        .map(|(i, &(id, p))| {
            let row = table.get(id).expect("ranked block is in the table");
            RankingRow {
                rank: i + 1,
                block_id: id,
                label: row.label.clone(),
                road_rating: row.road_rating_before(reference_year),
                probability: p,
            }
        })
        .collect()
}

pub fn rankings_csv(rows: &[RankingRow], outcomes: Option<&BTreeMap<BlockId, u8>>) -> String {
    let mut header = vec!["rank", "block_id", "label", "road_rating", "risk_score", "probability"];
    if outcomes.is_some() {
        header.push("outcome");
    }
    let mut w = csv_writer(&header);
    for r in rows {
        let mut rec = vec![
            r.rank.to_string(),
            r.block_id.to_string(),
            r.label.clone(),
            r.road_rating.to_string(),
            r.risk_score().to_string(),
            r.probability.to_string(),
        ];
        if let Some(o) = outcomes {
            rec.push(o.get(&r.block_id).copied().unwrap_or(0).to_string());
        }
        w.write_record(&rec).expect("in-memory write");
    }
    finish(w)
}

pub fn reliability_csv(bins: &[ReliabilityBin]) -> String {
    let mut w = csv_writer(&["bin_lower", "bin_upper", "count", "positives", "mean_predicted", "mean_empirical"]);
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for b in bins {
        w.write_record([
            b.lower.to_string(),
            b.upper.to_string(),
            b.count.to_string(),
            b.positives.to_string(),
            opt(b.mean_predicted),
            opt(b.mean_empirical),
        ])
        .expect("in-memory write");
    }
    finish(w)
}

pub fn pr_curve_csv(curve: &[(usize, f64, f64)]) -> String {
    let mut w = csv_writer(&["k", "precision", "recall"]);
    for (k, p, r) in curve {
        w.write_record([k.to_string(), p.to_string(), r.to_string()]).expect("in-memory write");
    }
    finish(w)
}

/// Model-vs-baselines precision table for the terminal.
pub fn comparison_table(run: &ExperimentRun) -> String {
    let r = &run.report;
    let last = r.splits.last().expect("report has splits");
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<32} {:>12} {:>14}",
        "Heuristic/Model",
        format!("P@{}% mean", r.config.percent),
        format!("final ({})", r.final_test_year)
    );
    for s in Strategy::ALL {
        let _ = writeln!(
            out,
            "{:<32} {:>12.3} {:>14.3}",
            s.display_name(),
            r.mean_precision(s).unwrap_or(0.0),
            last.precision(s).unwrap_or(0.0)
        );
    }
    let _ = write!(out, "k = {} of {} blocks, {} split(s)", last.k, last.n_blocks, r.splits.len());
    out
}

/// Training references for a ranking made on `as_of`: every January 1st
/// with a full label window ending by `as_of` and by the data end.
pub fn rank_training_years(cfg: &RunConfig, first: i32, last: i32, as_of: NaiveDate) -> Result<Vec<i32>, Error> {
    let coverage = Coverage::years(first, last);
    if as_of < coverage.start || as_of > coverage.end {
        return Err(features::FeatureError::OutsideCoverage { date: as_of, start: coverage.start, end: coverage.end }.into());
    }
    let h = cfg.horizon as i32;
    let newest = (as_of.year() - h).min(last + 1 - h);
    let oldest = first + cfg.min_history as i32;
    if newest < oldest {
        return Err(Error::NotTrainable { as_of, earliest: jan1(oldest + h) });
    }
    Ok((oldest..=newest).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub as_of: NaiveDate,
    pub train_years: Vec<i32>,
    pub rows: Vec<RankingRow>,
    pub model: gbdt::GbdtModel,
}

/// Train on all history before `as_of` and rank every modeled block.
pub fn run_rank(cfg: &RunConfig) -> Result<Ranking, Error> {
    cfg.validate()?;
    let (table, _, range) = load_table(cfg)?;
    let (first, last) = data_years(cfg, range)?;
    let as_of = cfg.as_of.unwrap_or(jan1(last + 1));
    let years = rank_training_years(cfg, first, last, as_of)?;
    let coverage = Coverage::years(first, last);
    let spec = cfg.feature_spec().with_vocab(Vocabularies::from_table(&table));
    let train: Vec<FeatureMatrix> = years
        .iter()
        .map(|&y| features::labeled_matrix(&table, &spec, jan1(y), cfg.horizon, &coverage))
        .collect::<Result<_, _>>()?;
    let data = Dataset::from_matrices(&train.iter().collect::<Vec<_>>())?;
    let model = gbdt::train(&data, &cfg.train_config())?;
    let m = features::build_features(&table, &spec, as_of, &coverage)?;
    let scores = model.predict_matrix(&m)?;
    let ranking = RankedList::from_scores(&m.block_ids, &scores);
    Ok(Ranking { as_of, train_years: years, rows: ranking_rows(&table, &ranking, as_of.year()), model })
}

pub fn cmd_rank(cfg: &RunConfig) -> Result<Ranking, Error> {
    let ranking = run_rank(cfg)?;
    prepare_out(cfg, "rank")?;
    write(&cfg.out, RANKINGS_CSV, &rankings_csv(&ranking.rows, None))?;
    write(&cfg.out, MODEL_JSON, &(ranking.model.to_json() + "\n"))?;
    Ok(ranking)
}
