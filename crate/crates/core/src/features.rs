//! Labeled per-block feature matrices at a reference date.
//!
//! Feature values only ever read events dated strictly before the reference
//! date; labels only read events in `[reference, reference + horizon)`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, Months, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{self, Point2};
use crate::ids::{BlockId, EventId};
use crate::ingest::{BlockRow, BlockTable};

pub const PIPE_AGE: &str = "pipe_age";
pub const INSTALL_YEAR: &str = "install_year";
pub const DIAMETER: &str = "diameter_in";
pub const ROAD_RATING: &str = "road_rating";
pub const BREAKS_NEARBY: &str = "breaks_nearby";
pub const YEAR_IMPUTED: &str = "install_year_imputed";
pub const DIAMETER_IMPUTED: &str = "diameter_imputed";
pub const OTHER_CATEGORY: &str = "other";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("reference date {date} outside data coverage {start}..{end}")]
    OutsideCoverage { date: NaiveDate, start: NaiveDate, end: NaiveDate },
    #[error("label window {from}..{to} extends past data end {end}")]
    HorizonPastEnd { from: NaiveDate, to: NaiveDate, end: NaiveDate },
    #[error("invalid feature spec: {0}")]
    InvalidSpec(String),
    #[error("features.csv: {0}")]
    Parse(String),
    #[error("matrices have different columns")]
    ColumnMismatch,
}

/// A break-count window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Window {
    Years(u32),
    /// Every event before the reference date.
    All,
}

impl Window {
    pub fn column_name(&self) -> String {
        match self {
            Window::Years(y) => format!("breaks_{y}y"),
            Window::All => "breaks_all".to_string(),
        }
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Window::Years(y) => write!(f, "{y}"),
            Window::All => f.write_str("inf"),
        }
    }
}

impl FromStr for Window {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "inf" | "all" | "∞" => Ok(Window::All),
            t => t
                .parse::<u32>()
                .map(Window::Years)
                .map_err(|_| format!("invalid window `{s}`")),
        }
    }
}

/// Category lists for the one-hot families, frozen once and reused for every
/// matrix. Values not listed map to the family's `other` column.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Vocabularies {
    pub material: Vec<String>,
    pub soil_type: Vec<String>,
    pub rock_type: Vec<String>,
    pub pressure_zone: Vec<String>,
}

impl Vocabularies {
    /// Sorted distinct values over the modeled blocks.
    pub fn from_table(table: &BlockTable) -> Self {
        fn collect<'a>(it: impl Iterator<Item = &'a str>) -> Vec<String> {
            it.filter(|v| *v != OTHER_CATEGORY)
                .map(str::to_string)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect()
        }
        Self {
            material: collect(table.modeled().map(|r| r.material.as_str())),
            soil_type: collect(table.modeled().map(|r| r.soil_type.as_str())),
            rock_type: collect(table.modeled().map(|r| r.rock_type.as_str())),
            pressure_zone: collect(table.modeled().map(|r| r.pressure_zone.as_str())),
        }
    }

    fn families(&self) -> [(&'static str, &[String]); 4] {
        [
            ("material", &self.material),
            ("soil", &self.soil_type),
            ("rock", &self.rock_type),
            ("zone", &self.pressure_zone),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub windows: Vec<Window>,
    pub nearby_radius_ft: f64,
    pub lookback_years: u32,
    pub vocab: Vocabularies,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self {
            windows: vec![
                Window::Years(1),
                Window::Years(2),
                Window::Years(3),
                Window::Years(5),
                Window::All,
            ],
            nearby_radius_ft: 100.0,
            lookback_years: 6,
            vocab: Vocabularies::default(),
        }
    }
}

impl FeatureSpec {
    pub fn with_vocab(mut self, vocab: Vocabularies) -> Self {
        self.vocab = vocab;
        self
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        let bad = |m: String| Err(FeatureError::InvalidSpec(m));
        if self.windows.is_empty() {
            return bad("no break-count windows".into());
        }
        if self.windows.contains(&Window::Years(0)) {
            return bad("windows must be positive".into());
        }
        if self.windows.windows(2).any(|p| p[0] >= p[1]) {
            return bad("windows must be strictly increasing".into());
        }
        let max_finite = self
            .windows
            .iter()
            .filter_map(|w| match w {
                Window::Years(y) => Some(*y),
                Window::All => None,
            })
            .max()
            .unwrap_or(0);
        if self.lookback_years < max_finite {
            return bad(format!("lookback {} shorter than window {max_finite}", self.lookback_years));
        }
        if !(self.nearby_radius_ft > 0.0) {
            return bad("nearby radius must be positive".into());
        }
        Ok(())
    }

    /// Column names in matrix order.
    pub fn column_names(&self) -> Vec<String> {
        let mut cols: Vec<String> =
            [PIPE_AGE, INSTALL_YEAR, DIAMETER, ROAD_RATING].iter().map(|s| s.to_string()).collect();
        cols.extend(self.windows.iter().map(Window::column_name));
        cols.push(BREAKS_NEARBY.into());
        cols.push(YEAR_IMPUTED.into());
        cols.push(DIAMETER_IMPUTED.into());
        for (family, values) in self.vocab.families() {
            cols.extend(values.iter().map(|v| format!("{family}={v}")));
            cols.push(format!("{family}={OTHER_CATEGORY}"));
        }
        cols
    }
}

/// Half-open date span `[start, end)` covered by the event data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coverage {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl Coverage {
    /// Whole calendar years `first..=last`.
    pub fn years(first: i32, last: i32) -> Self {
        Self { start: jan1(first), end: jan1(last + 1) }
    }
}

pub fn jan1(year: i32) -> NaiveDate {
    NaiveDate::from_ymd_opt(year, 1, 1).expect("valid year")
}

fn years_before(date: NaiveDate, years: u32) -> NaiveDate {
    date.checked_sub_months(Months::new(12 * years)).unwrap_or(NaiveDate::MIN)
}

fn years_after(date: NaiveDate, years: u32) -> NaiveDate {
    date.checked_add_months(Months::new(12 * years)).unwrap_or(NaiveDate::MAX)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub block_ids: Vec<BlockId>,
    pub columns: Vec<String>,
    /// Row-major, `block_ids.len() * columns.len()` values.
    pub values: Vec<f64>,
    pub labels: Option<Vec<u8>>,
    pub reference_date: NaiveDate,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.block_ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.n_cols();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.column_index(name)?;
        Some((0..self.n_rows()).map(|i| self.row(i)[j]).collect())
    }

    pub fn with_labels(mut self, labels: Vec<u8>) -> Self {
        assert_eq!(labels.len(), self.n_rows(), "one label per row");
        self.labels = Some(labels);
        self
    }

    pub fn to_csv(&self) -> String {
        let mut header = vec!["block_id".to_string(), "reference_date".to_string()];
        header.extend(self.columns.iter().cloned());
        if self.labels.is_some() {
            header.push("label".into());
        }
        let hdr: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut w = crate::ingest::csv_writer(&hdr);
        let date = self.reference_date.format("%Y-%m-%d").to_string();
        for i in 0..self.n_rows() {
            let mut rec = vec![self.block_ids[i].to_string(), date.clone()];
            rec.extend(self.row(i).iter().map(|v| v.to_string()));
            if let Some(l) = &self.labels {
                rec.push(l[i].to_string());
            }
            w.write_record(&rec).expect("in-memory write");
        }
        crate::ingest::finish(w)
    }

    pub fn from_csv(text: &str) -> Result<Self, FeatureError> {
        let err = |m: String| FeatureError::Parse(m);
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let headers = rdr.headers().map_err(|e| err(e.to_string()))?.clone();
        let names: Vec<&str> = headers.iter().collect();
        if names.len() < 2 || names[0] != "block_id" || names[1] != "reference_date" {
            return Err(err("header must start with block_id,reference_date".into()));
        }
        let has_label = names.last() == Some(&"label");
        let columns: Vec<String> = names[2..names.len() - usize::from(has_label)]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut m = FeatureMatrix {
            block_ids: Vec::new(),
            columns,
            values: Vec::new(),
            labels: has_label.then(Vec::new),
            reference_date: NaiveDate::MIN,
        };
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| err(e.to_string()))?;
            m.block_ids.push(rec[0].parse().map_err(|_| err(format!("bad block_id `{}`", &rec[0])))?);
            let date = NaiveDate::parse_from_str(&rec[1], "%Y-%m-%d")
                .map_err(|_| err(format!("bad reference_date `{}`", &rec[1])))?;
            if i == 0 {
                m.reference_date = date;
            } else if date != m.reference_date {
                return Err(err("mixed reference dates".into()));
            }
            for j in 0..m.columns.len() {
                let v: f64 = rec[2 + j].parse().map_err(|_| err(format!("bad value `{}`", &rec[2 + j])))?;
                m.values.push(v);
            }
            if let Some(l) = m.labels.as_mut() {
                l.push(rec[rec.len() - 1].parse().map_err(|_| err("bad label".into()))?);
            }
        }
        Ok(m)
    }
}

fn check_coverage(date: NaiveDate, cov: &Coverage) -> Result<(), FeatureError> {
    if date < cov.start || date > cov.end {
        return Err(FeatureError::OutsideCoverage { date, start: cov.start, end: cov.end });
    }
    Ok(())
}

/// Unlabeled feature matrix over the modeled blocks of `table`.
pub fn build_features(
    table: &BlockTable,
    spec: &FeatureSpec,
    reference_date: NaiveDate,
    coverage: &Coverage,
) -> Result<FeatureMatrix, FeatureError> {
    spec.validate()?;
    check_coverage(reference_date, coverage)?;

    let history_start = years_before(reference_date, spec.lookback_years);
    let recent: Vec<(EventId, Point2)> = table
        .rows
        .iter()
        .flat_map(|r| r.breaks.iter())
        .filter(|e| e.date >= history_start && e.date < reference_date)
        .map(|e| (e.event_id, e.point))
        .collect();

    let columns = spec.column_names();
    let rows: Vec<&BlockRow> = table.modeled().collect();
    let values: Vec<Vec<f64>> = rows
        .par_iter()
        .map(|r| block_features(r, spec, reference_date, &recent))
        .collect();
    debug_assert!(values.iter().all(|v| v.len() == columns.len()));

    Ok(FeatureMatrix {
        block_ids: rows.iter().map(|r| r.block_id).collect(),
        columns,
        values: values.into_iter().flatten().collect(),
        labels: None,
        reference_date,
    })
}

fn block_features(r: &BlockRow, spec: &FeatureSpec, reference: NaiveDate, recent: &[(EventId, Point2)]) -> Vec<f64> {
    let ref_year = reference.year();
    let mut v = vec![
        f64::from(ref_year - r.install_year),
        f64::from(r.install_year),
        r.diameter,
        f64::from(r.road_rating_before(ref_year)),
    ];
    let past = r.breaks.iter().filter(|e| e.date < reference);
    for w in &spec.windows {
        let n = match w {
            Window::Years(y) => {
                let from = years_before(reference, *y);
                past.clone().filter(|e| e.date >= from).count()
            }
            Window::All => past.clone().count(),
        };
        v.push(n as f64);
    }
    let own: BTreeSet<EventId> = r.breaks.iter().map(|e| e.event_id).collect();
    v.push(geo::breaks_within_radius(recent, &r.geometry, spec.nearby_radius_ft, &own) as f64);
    v.push(f64::from(u8::from(r.year_imputed())));
    v.push(f64::from(u8::from(r.diameter_imputed())));
    let material = r.material.as_str();
    for (value, (_, vocab)) in [material, &r.soil_type, &r.rock_type, &r.pressure_zone]
        .into_iter()
        .zip(spec.vocab.families())
    {
        let hit = vocab.iter().position(|c| c == value);
        v.extend((0..vocab.len()).map(|i| f64::from(u8::from(hit == Some(i)))));
        v.push(f64::from(u8::from(hit.is_none())));
    }
    v
}

/// 1 iff the block has a main break in `[reference, reference + horizon)`.
/// With `coverage` given, the window must end on or before the data end.
pub fn label_blocks(
    table: &BlockTable,
    reference_date: NaiveDate,
    horizon_years: u32,
    coverage: Option<&Coverage>,
) -> Result<Vec<u8>, FeatureError> {
    let until = years_after(reference_date, horizon_years);
    if let Some(cov) = coverage {
        check_coverage(reference_date, cov)?;
        if until > cov.end {
            return Err(FeatureError::HorizonPastEnd { from: reference_date, to: until, end: cov.end });
        }
    }
    Ok(table
        .modeled()
        .map(|r| u8::from(r.breaks.iter().any(|e| e.date >= reference_date && e.date < until)))
        .collect())
}

/// Features plus labels for one reference date.
pub fn labeled_matrix(
    table: &BlockTable,
    spec: &FeatureSpec,
    reference_date: NaiveDate,
    horizon_years: u32,
    coverage: &Coverage,
) -> Result<FeatureMatrix, FeatureError> {
    let labels = label_blocks(table, reference_date, horizon_years, Some(coverage))?;
    Ok(build_features(table, spec, reference_date, coverage)?.with_labels(labels))
}

/// Per-family one-hot sums for a row; every entry should be exactly 1.
pub fn one_hot_sums(m: &FeatureMatrix, row: usize) -> BTreeMap<String, f64> {
    let mut sums = BTreeMap::new();
    for (name, v) in m.columns.iter().zip(m.row(row)) {
        if let Some((family, _)) = name.split_once('=') {
            *sums.entry(family.to_string()).or_insert(0.0) += v;
        }
    }
    sums
}
