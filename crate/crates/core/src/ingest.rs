//! CSV ingest, validation, main-to-block aggregation and attribute imputation.
//!
//! Loading produces a [`RawCity`] whose record vectors are sorted by id, so the
//! result does not depend on input row order. Rows that fail validation are
//! collected in an [`IngestReport`]; structural problems (missing files,
//! missing columns, duplicate ids, too many rejects) are fatal.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{self, BBox, GeoError, Point2, Polyline};
use crate::ids::{BlockId, EventId, MainId, StreetId};

pub const WORK_ORDERS: &str = "work_orders.csv";
pub const MAINS: &str = "mains.csv";
pub const BLOCKS: &str = "blocks.csv";
pub const ROAD_RATINGS: &str = "road_ratings.csv";
pub const PARCELS: &str = "parcels.csv";
pub const NOTEBOOK: &str = "notebook.csv";

/// Fraction of rejected rows in any one file above which ingest aborts.
pub const MAX_REJECT_FRACTION: f64 = 0.10;

const CAST_IRON_BEFORE: i32 = 1920;
const DUCTILE_IRON_AFTER: i32 = 1960;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing input file {0}")]
    MissingFile(PathBuf),
    #[error("{file}: missing required column `{column}`")]
    MissingColumn { file: &'static str, column: &'static str },
    #[error("{file}: {source}")]
    Csv {
        file: &'static str,
        #[source]
        source: csv::Error,
    },
    #[error("{file} row {row}: duplicate {what} {id}")]
    Duplicate {
        file: &'static str,
        row: usize,
        what: &'static str,
        id: String,
    },
    #[error("{file}: {rejected} of {total} rows rejected (limit {limit_pct}%)")]
    TooManyRejects {
        file: &'static str,
        rejected: usize,
        total: usize,
        limit_pct: f64,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Geo(#[from] GeoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Material {
    CastIron,
    DuctileIron,
    Universal,
    Other,
    Unknown,
}

impl Material {
    pub const ALL: [Material; 5] = [
        Material::CastIron,
        Material::DuctileIron,
        Material::Universal,
        Material::Other,
        Material::Unknown,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Material::CastIron => "cast_iron",
            Material::DuctileIron => "ductile_iron",
            Material::Universal => "universal",
            Material::Other => "other",
            Material::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Material {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Material {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        Material::ALL
            .into_iter()
            .find(|m| m.as_str() == norm)
            .ok_or_else(|| format!("unknown material `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkKind {
    MainBreak,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Location {
    Main(MainId),
    Point(Point2),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkOrder {
    pub event_id: EventId,
    pub date: NaiveDate,
    pub description: String,
    pub kind: WorkKind,
    pub location: Location,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MainSegment {
    pub main_id: MainId,
    pub geometry: Polyline,
    pub diameter: Option<f64>,
    pub material: Option<Material>,
    pub install_year: Option<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub block_id: BlockId,
    pub street_id: StreetId,
    pub label: String,
    pub geometry: Polyline,
    /// Survey year to rating; 0 means the block was not rated that year.
    pub road_ratings: BTreeMap<i32, u8>,
    pub soil_type: String,
    pub rock_type: String,
    pub pressure_zone: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParcelRecord {
    pub block_id: BlockId,
    pub first_tax_year: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NotebookEntry {
    pub street_id: StreetId,
    pub material: Material,
    pub diameter: f64,
}

/// Validated contents of one dataset directory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RawCity {
    pub blocks: Vec<BlockRecord>,
    pub mains: Vec<MainSegment>,
    pub work_orders: Vec<WorkOrder>,
    pub parcels: Vec<ParcelRecord>,
    pub notebook: Vec<NotebookEntry>,
}

impl RawCity {
    /// First and last dates among all work orders.
    pub fn event_date_range(&self) -> Option<(NaiveDate, NaiveDate)> {
        let first = self.work_orders.iter().map(|w| w.date).min()?;
        let last = self.work_orders.iter().map(|w| w.date).max()?;
        Some((first, last))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reject {
    pub file: String,
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileStats {
    pub file: String,
    pub accepted: usize,
    pub rejected: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub files: Vec<FileStats>,
    pub rejects: Vec<Reject>,
}

impl IngestReport {
    pub fn rejects_csv(&self) -> String {
        write_rejects_csv(&self.rejects)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestConfig {
    /// Work orders outside this inclusive date range are rejected.
    pub date_range: Option<(NaiveDate, NaiveDate)>,
    /// Coordinates outside this box are rejected.
    pub bbox: Option<BBox>,
    /// Case-insensitive substrings of the description that mark a main break.
    pub break_keywords: Vec<String>,
    pub current_year: i32,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            date_range: None,
            bbox: None,
            break_keywords: vec!["Main Break/Leak".to_string()],
            current_year: chrono::Local::now().year(),
        }
    }
}

impl IngestConfig {
    fn classify(&self, description: &str) -> WorkKind {
        let lower = description.to_lowercase();
        if self
            .break_keywords
            .iter()
            .any(|k| !k.is_empty() && lower.contains(&k.to_lowercase()))
        {
            WorkKind::MainBreak
        } else {
            WorkKind::Other
        }
    }

    fn check_point(&self, p: &Point2) -> Result<(), String> {
        match &self.bbox {
            Some(b) if !b.contains(p) => Err(format!("point ({}, {}) outside bounding box", p.x, p.y)),
            _ => Ok(()),
        }
    }

    fn check_line(&self, l: &Polyline) -> Result<(), String> {
        l.vertices().iter().try_for_each(|p| self.check_point(p))
    }
}

/// Raw text of the six input CSV files.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawFiles {
    pub work_orders: String,
    pub mains: String,
    pub blocks: String,
    pub road_ratings: String,
    pub parcels: String,
    pub notebook: String,
}

impl RawFiles {
    pub fn read_dir(dir: &Path) -> Result<Self, IngestError> {
        let read = |name: &str| {
            let path = dir.join(name);
            if !path.is_file() {
                return Err(IngestError::MissingFile(path));
            }
            fs::read_to_string(&path).map_err(|source| IngestError::Io { path, source })
        };
        Ok(Self {
            work_orders: read(WORK_ORDERS)?,
            mains: read(MAINS)?,
            blocks: read(BLOCKS)?,
            road_ratings: read(ROAD_RATINGS)?,
            parcels: read(PARCELS)?,
            notebook: read(NOTEBOOK)?,
        })
    }

    pub fn write_dir(&self, dir: &Path) -> Result<(), IngestError> {
        fs::create_dir_all(dir).map_err(|source| IngestError::Io { path: dir.to_path_buf(), source })?;
        for (name, body) in self.entries() {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|source| IngestError::Io { path, source })?;
        }
        Ok(())
    }

    pub fn entries(&self) -> [(&'static str, &str); 6] {
        [
            (WORK_ORDERS, &self.work_orders),
            (MAINS, &self.mains),
            (BLOCKS, &self.blocks),
            (ROAD_RATINGS, &self.road_ratings),
            (PARCELS, &self.parcels),
            (NOTEBOOK, &self.notebook),
        ]
    }

    /// Normalized CSV rendering of a validated city. Loading the result
    /// reproduces `city` exactly.
    pub fn from_city(city: &RawCity) -> Self {
        let mut wo = csv_writer(&["event_id", "date", "description", "main_id", "x", "y"]);
        for w in &city.work_orders {
            let (main, x, y) = match w.location {
                Location::Main(m) => (m.to_string(), String::new(), String::new()),
                Location::Point(p) => (String::new(), p.x.to_string(), p.y.to_string()),
            };
            let date = w.date.format("%Y-%m-%d").to_string();
            wo.write_record([&w.event_id.to_string(), &date, &w.description, &main, &x, &y])
                .expect("in-memory write");
        }

        let mut mains = csv_writer(&["main_id", "geometry", "diameter_in", "material", "install_year"]);
        for m in &city.mains {
            mains
                .write_record([
                    m.main_id.to_string(),
                    format_geometry(&m.geometry),
                    opt_string(m.diameter),
                    m.material.map(|x| x.to_string()).unwrap_or_default(),
                    opt_string(m.install_year),
                ])
                .expect("in-memory write");
        }

        let mut blocks = csv_writer(&[
            "block_id",
            "street_id",
            "label",
            "geometry",
            "soil_type",
            "rock_type",
            "pressure_zone",
        ]);
        let mut ratings = csv_writer(&["block_id", "year", "rating"]);
        for b in &city.blocks {
            blocks
                .write_record([
                    b.block_id.to_string(),
                    b.street_id.to_string(),
                    b.label.clone(),
                    format_geometry(&b.geometry),
                    b.soil_type.clone(),
                    b.rock_type.clone(),
                    b.pressure_zone.clone(),
                ])
                .expect("in-memory write");
            for (year, rating) in &b.road_ratings {
                ratings
                    .write_record([b.block_id.to_string(), year.to_string(), rating.to_string()])
                    .expect("in-memory write");
            }
        }

        let mut parcels = csv_writer(&["block_id", "first_tax_year"]);
        for p in &city.parcels {
            parcels
                .write_record([p.block_id.to_string(), p.first_tax_year.to_string()])
                .expect("in-memory write");
        }

        let mut notebook = csv_writer(&["street_id", "material", "diameter_in"]);
        for n in &city.notebook {
            notebook
                .write_record([n.street_id.to_string(), n.material.to_string(), n.diameter.to_string()])
                .expect("in-memory write");
        }

        Self {
            work_orders: finish(wo),
            mains: finish(mains),
            blocks: finish(blocks),
            road_ratings: finish(ratings),
            parcels: finish(parcels),
            notebook: finish(notebook),
        }
    }
}

pub(crate) fn csv_writer(header: &[&str]) -> csv::Writer<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    w
}

pub(crate) fn finish(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

fn opt_string<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn format_geometry(line: &Polyline) -> String {
    line.vertices()
        .iter()
        .map(|p| format!("{} {}", p.x, p.y))
        .collect::<Vec<_>>()
        .join(";")
}

pub fn parse_geometry(s: &str) -> Result<Polyline, String> {
    let mut pts = Vec::new();
    for pair in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let mut it = pair.split_whitespace();
        let (Some(x), Some(y), None) = (it.next(), it.next(), it.next()) else {
            return Err(format!("bad vertex `{pair}`"));
        };
        let x: f64 = x.parse().map_err(|_| format!("bad coordinate `{x}`"))?;
        let y: f64 = y.parse().map_err(|_| format!("bad coordinate `{y}`"))?;
        pts.push(Point2::new(x, y).map_err(|e| e.to_string())?);
    }
    Polyline::new(pts).map_err(|e| e.to_string())
}

/// One parsed CSV file with header lookup.
struct Table {
    columns: Vec<Option<usize>>,
    rows: Vec<(usize, csv::StringRecord)>,
}

impl Table {
    fn parse(
        file: &'static str,
        text: &str,
        required: &[&'static str],
        optional: &[&'static str],
    ) -> Result<Self, IngestError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = rdr
            .headers()
            .map_err(|source| IngestError::Csv { file, source })?
            .clone();
        let find = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
        let mut columns = Vec::new();
        for &c in required {
            columns.push(Some(find(c).ok_or(IngestError::MissingColumn { file, column: c })?));
        }
        columns.extend(optional.iter().map(|c| find(c)));
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|source| IngestError::Csv { file, source })?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            rows.push((line, rec));
        }
        Ok(Self { columns, rows })
    }

    fn get<'r>(&self, rec: &'r csv::StringRecord, col: usize) -> &'r str {
        self.columns[col].and_then(|i| rec.get(i)).unwrap_or("")
    }
}

fn parse_req<T: FromStr>(s: &str, what: &str) -> Result<T, String> {
    if s.is_empty() {
        return Err(format!("missing {what}"));
    }
    s.parse().map_err(|_| format!("invalid {what} `{s}`"))
}

fn parse_opt<T: FromStr>(s: &str, what: &str) -> Result<Option<T>, String> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_req(s, what).map(Some)
    }
}

/// Accumulates per-file accept/reject counts.
struct Tally<'a> {
    report: &'a mut IngestReport,
    file: &'static str,
    accepted: usize,
    rejected: usize,
}

impl<'a> Tally<'a> {
    fn new(report: &'a mut IngestReport, file: &'static str) -> Self {
        Self { report, file, accepted: 0, rejected: 0 }
    }

    fn record<T>(&mut self, row: usize, r: Result<T, String>) -> Option<T> {
        match r {
            Ok(v) => {
                self.accepted += 1;
                Some(v)
            }
            Err(reason) => {
                self.rejected += 1;
                self.report.rejects.push(Reject { file: self.file.to_string(), row, reason });
                None
            }
        }
    }

    fn close(self) -> Result<(), IngestError> {
        let total = self.accepted + self.rejected;
        self.report.files.push(FileStats {
            file: self.file.to_string(),
            accepted: self.accepted,
            rejected: self.rejected,
        });
        if total > 0 && self.rejected as f64 > MAX_REJECT_FRACTION * total as f64 {
            return Err(IngestError::TooManyRejects {
                file: self.file,
                rejected: self.rejected,
                total,
                limit_pct: MAX_REJECT_FRACTION * 100.0,
            });
        }
        Ok(())
    }
}

/// Read and validate a dataset directory.
pub fn load_raw_city(dir: &Path, cfg: &IngestConfig) -> Result<(RawCity, IngestReport), IngestError> {
    parse_city(&RawFiles::read_dir(dir)?, cfg)
}

/// Validate the six CSV texts into a [`RawCity`].
pub fn parse_city(files: &RawFiles, cfg: &IngestConfig) -> Result<(RawCity, IngestReport), IngestError> {
    let mut report = IngestReport::default();

    // blocks
    let t = Table::parse(
        BLOCKS,
        &files.blocks,
        &["block_id", "street_id", "label", "geometry", "soil_type", "rock_type", "pressure_zone"],
        &[],
    )?;
    let mut blocks: BTreeMap<BlockId, BlockRecord> = BTreeMap::new();
    let mut tally = Tally::new(&mut report, BLOCKS);
    for (row, rec) in &t.rows {
        let parsed = (|| {
            let block_id: BlockId = parse_req(t.get(rec, 0), "block_id")?;
            let street_id: StreetId = parse_req(t.get(rec, 1), "street_id")?;
            let geometry = parse_geometry(t.get(rec, 3))?;
            cfg.check_line(&geometry)?;
            Ok(BlockRecord {
                block_id,
                street_id,
                label: t.get(rec, 2).to_string(),
                geometry,
                road_ratings: BTreeMap::new(),
                soil_type: t.get(rec, 4).to_string(),
                rock_type: t.get(rec, 5).to_string(),
                pressure_zone: t.get(rec, 6).to_string(),
            })
        })();
        if let Some(b) = tally.record(*row, parsed) {
            if blocks.contains_key(&b.block_id) {
                return Err(dup(BLOCKS, *row, "block_id", b.block_id));
            }
            blocks.insert(b.block_id, b);
        }
    }
    tally.close()?;
    let streets: BTreeSet<StreetId> = blocks.values().map(|b| b.street_id).collect();

    // road ratings
    let t = Table::parse(ROAD_RATINGS, &files.road_ratings, &["block_id", "year", "rating"], &[])?;
    let mut tally = Tally::new(&mut report, ROAD_RATINGS);
    for (row, rec) in &t.rows {
        let parsed = (|| {
            let block_id: BlockId = parse_req(t.get(rec, 0), "block_id")?;
            let year: i32 = parse_req(t.get(rec, 1), "year")?;
            let rating: u8 = parse_req(t.get(rec, 2), "rating")?;
            if rating > 10 {
                return Err(format!("rating {rating} outside 0-10"));
            }
            if !blocks.contains_key(&block_id) {
                return Err(format!("unknown block_id {block_id}"));
            }
            Ok((block_id, year, rating))
        })();
        if let Some((block_id, year, rating)) = tally.record(*row, parsed) {
            let b = blocks.get_mut(&block_id).expect("checked above");
            if b.road_ratings.insert(year, rating).is_some() {
                return Err(dup(ROAD_RATINGS, *row, "rating for block/year", format!("{block_id}/{year}")));
            }
        }
    }
    tally.close()?;

    // mains
    let t = Table::parse(MAINS, &files.mains, &["main_id", "geometry"], &["diameter_in", "material", "install_year"])?;
    let mut mains: BTreeMap<MainId, MainSegment> = BTreeMap::new();
    let mut tally = Tally::new(&mut report, MAINS);
    for (row, rec) in &t.rows {
        let parsed = (|| {
            let main_id: MainId = parse_req(t.get(rec, 0), "main_id")?;
            let geometry = parse_geometry(t.get(rec, 1))?;
            cfg.check_line(&geometry)?;
            let diameter: Option<f64> = parse_opt(t.get(rec, 2), "diameter_in")?;
            if let Some(d) = diameter {
                if !(d > 0.0 && d.is_finite()) {
                    return Err(format!("diameter {d} must be positive"));
                }
            }
            let material = match t.get(rec, 3) {
                "" => None,
                s => Some(s.parse::<Material>()?),
            };
            let install_year: Option<i32> = parse_opt(t.get(rec, 4), "install_year")?;
            if let Some(y) = install_year {
                if !(1800..=cfg.current_year).contains(&y) {
                    return Err(format!("install_year {y} outside 1800-{}", cfg.current_year));
                }
            }
            Ok(MainSegment { main_id, geometry, diameter, material, install_year })
        })();
        if let Some(m) = tally.record(*row, parsed) {
            if mains.contains_key(&m.main_id) {
                return Err(dup(MAINS, *row, "main_id", m.main_id));
            }
            mains.insert(m.main_id, m);
        }
    }
    tally.close()?;

    // work orders
    let t = Table::parse(
        WORK_ORDERS,
        &files.work_orders,
        &["event_id", "date", "description"],
        &["main_id", "x", "y"],
    )?;
    let mut orders: BTreeMap<EventId, WorkOrder> = BTreeMap::new();
    let mut tally = Tally::new(&mut report, WORK_ORDERS);
    for (row, rec) in &t.rows {
        let parsed = (|| {
            let event_id: EventId = parse_req(t.get(rec, 0), "event_id")?;
            let date_s = t.get(rec, 1);
            let date = NaiveDate::parse_from_str(date_s, "%Y-%m-%d")
                .map_err(|_| format!("invalid date `{date_s}`"))?;
            if let Some((lo, hi)) = cfg.date_range {
                if date < lo || date > hi {
                    return Err(format!("date {date} outside data range {lo}..={hi}"));
                }
            }
            let main: Option<MainId> = parse_opt(t.get(rec, 3), "main_id")?;
            let x: Option<f64> = parse_opt(t.get(rec, 4), "x")?;
            let y: Option<f64> = parse_opt(t.get(rec, 5), "y")?;
            let location = match (main, x, y) {
                (Some(m), None, None) => Location::Main(m),
                (None, Some(x), Some(y)) => {
                    let p = Point2::new(x, y).map_err(|e| e.to_string())?;
                    cfg.check_point(&p)?;
                    Location::Point(p)
                }
                (Some(_), _, _) => return Err("both main_id and coordinates present".into()),
                (None, None, None) => return Err("no location: need main_id or x/y".into()),
                _ => return Err("incomplete coordinates".into()),
            };
            let description = t.get(rec, 2).to_string();
            Ok(WorkOrder { event_id, date, kind: cfg.classify(&description), description, location })
        })();
        if let Some(w) = tally.record(*row, parsed) {
            if orders.contains_key(&w.event_id) {
                return Err(dup(WORK_ORDERS, *row, "event_id", w.event_id));
            }
            orders.insert(w.event_id, w);
        }
    }
    tally.close()?;

    // parcels
    let t = Table::parse(PARCELS, &files.parcels, &["block_id", "first_tax_year"], &[])?;
    let mut parcels = Vec::new();
    let mut tally = Tally::new(&mut report, PARCELS);
    for (row, rec) in &t.rows {
        let parsed = (|| {
            let block_id: BlockId = parse_req(t.get(rec, 0), "block_id")?;
            let first_tax_year: i32 = parse_req(t.get(rec, 1), "first_tax_year")?;
            if !blocks.contains_key(&block_id) {
                return Err(format!("unknown block_id {block_id}"));
            }
            if !(1800..=cfg.current_year).contains(&first_tax_year) {
                return Err(format!("first_tax_year {first_tax_year} out of range"));
            }
            Ok(ParcelRecord { block_id, first_tax_year })
        })();
        parcels.extend(tally.record(*row, parsed));
    }
    tally.close()?;
    parcels.sort();

    // notebook
    let t = Table::parse(NOTEBOOK, &files.notebook, &["street_id", "material", "diameter_in"], &[])?;
    let mut notebook: BTreeMap<StreetId, NotebookEntry> = BTreeMap::new();
    let mut tally = Tally::new(&mut report, NOTEBOOK);
    for (row, rec) in &t.rows {
        let parsed = (|| {
            let street_id: StreetId = parse_req(t.get(rec, 0), "street_id")?;
            let material: Material = t.get(rec, 1).parse()?;
            let diameter: f64 = parse_req(t.get(rec, 2), "diameter_in")?;
            if !(diameter > 0.0 && diameter.is_finite()) {
                return Err(format!("diameter {diameter} must be positive"));
            }
            if !streets.contains(&street_id) {
                return Err(format!("unknown street_id {street_id}"));
            }
            Ok(NotebookEntry { street_id, material, diameter })
        })();
        if let Some(n) = tally.record(*row, parsed) {
            if notebook.contains_key(&n.street_id) {
                return Err(dup(NOTEBOOK, *row, "street_id", n.street_id));
            }
            notebook.insert(n.street_id, n);
        }
    }
    tally.close()?;

    report.rejects.sort_by(|a, b| (&a.file, a.row).cmp(&(&b.file, b.row)));
    let city = RawCity {
        blocks: blocks.into_values().collect(),
        mains: mains.into_values().collect(),
        work_orders: orders.into_values().collect(),
        parcels,
        notebook: notebook.into_values().collect(),
    };
    Ok((city, report))
}

fn dup(file: &'static str, row: usize, what: &'static str, id: impl ToString) -> IngestError {
    IngestError::Duplicate { file, row, what, id: id.to_string() }
}

pub fn write_rejects_csv(rejects: &[Reject]) -> String {
    let mut w = csv_writer(&["row", "file", "reason"]);
    for r in rejects {
        w.write_record([r.row.to_string(), r.file.clone(), r.reason.clone()])
            .expect("in-memory write");
    }
    finish(w)
}

// ---------------------------------------------------------------------------
// Imputation
// ---------------------------------------------------------------------------

/// Where an attribute value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Recorded,
    Parcel,
    Notebook,
    EraRule,
    Street,
    Median,
}

/// Per-block attributes while imputation is in progress.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockAttrs {
    pub block_id: BlockId,
    pub street_id: StreetId,
    /// Summed length of the mains on the block, used to weight material votes.
    pub main_length: f64,
    pub install_year: Option<(i32, Source)>,
    pub material: Option<(Material, Source)>,
    pub diameter: Option<(f64, Source)>,
}

impl BlockAttrs {
    pub fn new(block_id: BlockId, street_id: StreetId, main_length: f64) -> Self {
        Self { block_id, street_id, main_length, install_year: None, material: None, diameter: None }
    }
}

/// Era rule: cast iron before 1920, ductile iron after 1960, otherwise the
/// street's field-notebook entry, otherwise `Unknown`.
pub fn impute_material(install_year: i32, notebook: Option<&NotebookEntry>) -> Material {
    if install_year < CAST_IRON_BEFORE {
        Material::CastIron
    } else if install_year > DUCTILE_IRON_AFTER {
        Material::DuctileIron
    } else {
        notebook.map_or(Material::Unknown, |n| n.material)
    }
}

/// Earliest recorded main year, else earliest parcel tax year.
pub fn local_install_year(recorded: &[i32], parcel_years: &[i32]) -> Option<(i32, Source)> {
    recorded
        .iter()
        .min()
        .map(|&y| (y, Source::Recorded))
        .or_else(|| parcel_years.iter().min().map(|&y| (y, Source::Parcel)))
}

/// Fill missing attributes on blocks of one street from their siblings:
/// earliest year, majority material by summed main length, smallest diameter.
/// Values are taken from the blocks resolved before the call.
pub fn propagate_street_values(blocks: &mut [BlockAttrs]) {
    let year = blocks.iter().filter_map(|b| b.install_year.map(|v| v.0)).min();
    let diameter = blocks
        .iter()
        .filter_map(|b| b.diameter.map(|v| v.0))
        .min_by(f64::total_cmp);
    let mut votes: BTreeMap<Material, f64> = BTreeMap::new();
    for b in blocks.iter() {
        if let Some((m, _)) = b.material {
            *votes.entry(m).or_default() += b.main_length;
        }
    }
    let material = majority(&votes);

    for b in blocks.iter_mut() {
        if b.install_year.is_none() {
            b.install_year = year.map(|y| (y, Source::Street));
        }
        if b.material.is_none() {
            b.material = material.map(|m| (m, Source::Street));
        }
        if b.diameter.is_none() {
            b.diameter = diameter.map(|d| (d, Source::Street));
        }
    }
}

/// Heaviest key; equal weights go to the first key in material order.
fn majority(votes: &BTreeMap<Material, f64>) -> Option<Material> {
    let mut best: Option<(Material, f64)> = None;
    for (&m, &w) in votes {
        if best.is_none_or(|(_, bw)| w > bw) {
            best = Some((m, w));
        }
    }
    best.map(|(m, _)| m)
}

fn lower_median<T: Copy>(mut v: Vec<T>, cmp: impl Fn(&T, &T) -> std::cmp::Ordering) -> Option<T> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(&cmp);
    Some(v[(v.len() - 1) / 2])
}

/// Run the full imputation chain over every block.
///
/// Year: recorded main year, parcel tax year, street siblings, global median.
/// Material: recorded, era rule on the local year, street siblings, era rule on
/// the final year. Diameter: recorded, notebook, street siblings, global
/// median. `Unknown` materials do not count as resolved until the last step.
pub fn impute(
    attrs: &mut [BlockAttrs],
    recorded: &BTreeMap<BlockId, RecordedAttrs>,
    parcels: &[ParcelRecord],
    notebook: &[NotebookEntry],
) {
    let notebook: BTreeMap<StreetId, &NotebookEntry> = notebook.iter().map(|n| (n.street_id, n)).collect();
    let mut parcel_years: BTreeMap<BlockId, Vec<i32>> = BTreeMap::new();
    for p in parcels {
        parcel_years.entry(p.block_id).or_default().push(p.first_tax_year);
    }

    for a in attrs.iter_mut() {
        let rec = recorded.get(&a.block_id).cloned().unwrap_or_default();
        let nb = notebook.get(&a.street_id).copied();
        let py = parcel_years.get(&a.block_id).map(Vec::as_slice).unwrap_or(&[]);
        a.install_year = local_install_year(&rec.years, py);
        a.material = rec.material.map(|m| (m, Source::Recorded)).or_else(|| {
            let (y, _) = a.install_year?;
            let m = impute_material(y, nb);
            let src = if (CAST_IRON_BEFORE..=DUCTILE_IRON_AFTER).contains(&y) {
                Source::Notebook
            } else {
                Source::EraRule
            };
            (m != Material::Unknown).then_some((m, src))
        });
        a.diameter = rec
            .diameter
            .map(|d| (d, Source::Recorded))
            .or_else(|| nb.map(|n| (n.diameter, Source::Notebook)));
    }

    attrs.sort_by_key(|a| (a.street_id, a.block_id));
    let mut start = 0;
    while start < attrs.len() {
        let street = attrs[start].street_id;
        let end = start + attrs[start..].iter().take_while(|a| a.street_id == street).count();
        propagate_street_values(&mut attrs[start..end]);
        start = end;
    }
    attrs.sort_by_key(|a| a.block_id);

    let median_year = lower_median(attrs.iter().filter_map(|a| a.install_year.map(|v| v.0)).collect(), i32::cmp);
    let median_diameter =
        lower_median(attrs.iter().filter_map(|a| a.diameter.map(|v| v.0)).collect(), f64::total_cmp);
    for a in attrs.iter_mut() {
        if a.install_year.is_none() {
            a.install_year = median_year.map(|y| (y, Source::Median));
        }
        if a.material.is_none() {
            let nb = notebook.get(&a.street_id).copied();
            a.material = a.install_year.map(|(y, _)| (impute_material(y, nb), Source::EraRule));
        }
        if a.diameter.is_none() {
            a.diameter = median_diameter.map(|d| (d, Source::Median));
        }
    }
}

/// Attributes aggregated from the mains assigned to one block.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecordedAttrs {
    pub years: Vec<i32>,
    /// Majority by length among mains with a known material.
    pub material: Option<Material>,
    /// Smallest recorded diameter.
    pub diameter: Option<f64>,
}

// ---------------------------------------------------------------------------
// Block table
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BreakEvent {
    pub event_id: EventId,
    pub date: NaiveDate,
    pub point: Point2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRow {
    pub block_id: BlockId,
    pub street_id: StreetId,
    pub label: String,
    pub geometry: Polyline,
    pub install_year: i32,
    pub install_year_source: Source,
    pub material: Material,
    pub material_source: Source,
    pub diameter: f64,
    pub diameter_source: Source,
    pub soil_type: String,
    pub rock_type: String,
    pub pressure_zone: String,
    pub road_ratings: BTreeMap<i32, u8>,
    pub main_ids: Vec<MainId>,
    pub main_length: f64,
    /// Sorted by (date, event id).
    pub breaks: Vec<BreakEvent>,
}

impl BlockRow {
    /// Blocks with no assigned main are kept but not modeled.
    pub fn main_less(&self) -> bool {
        self.main_ids.is_empty()
    }

    pub fn year_imputed(&self) -> bool {
        self.install_year_source == Source::Median
    }

    pub fn diameter_imputed(&self) -> bool {
        self.diameter_source == Source::Median
    }

    /// Latest rating from a survey year strictly before `year`, 0 if none.
    pub fn road_rating_before(&self, year: i32) -> u8 {
        self.road_ratings.range(..year).next_back().map_or(0, |(_, &r)| r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockTable {
    /// Sorted by block id.
    pub rows: Vec<BlockRow>,
    pub unmapped_mains: Vec<MainId>,
    pub rejects: Vec<Reject>,
}

impl BlockTable {
    /// Assign mains to blocks with buffered overlap, then aggregate and impute.
    pub fn build(raw: &RawCity, halfwidth: f64) -> Result<Self, IngestError> {
        let mains: Vec<(MainId, Polyline)> = raw.mains.iter().map(|m| (m.main_id, m.geometry.clone())).collect();
        let blocks: Vec<(BlockId, Polyline)> =
            raw.blocks.iter().map(|b| (b.block_id, b.geometry.clone())).collect();
        let assignment = geo::assign_mains_to_blocks(&mains, &blocks, halfwidth)?;
        Ok(aggregate_to_blocks(raw, &assignment))
    }

    pub fn modeled(&self) -> impl Iterator<Item = &BlockRow> {
        self.rows.iter().filter(|r| !r.main_less())
    }

    pub fn get(&self, id: BlockId) -> Option<&BlockRow> {
        self.rows.binary_search_by_key(&id, |r| r.block_id).ok().map(|i| &self.rows[i])
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv_writer(&[
            "block_id",
            "street_id",
            "label",
            "install_year",
            "install_year_source",
            "material",
            "material_source",
            "diameter_in",
            "diameter_source",
            "soil_type",
            "rock_type",
            "pressure_zone",
            "n_mains",
            "main_length_ft",
            "main_less",
            "n_breaks",
        ]);
        for r in &self.rows {
            w.write_record([
                r.block_id.to_string(),
                r.street_id.to_string(),
                r.label.clone(),
                r.install_year.to_string(),
                source_str(r.install_year_source).to_string(),
                r.material.to_string(),
                source_str(r.material_source).to_string(),
                r.diameter.to_string(),
                source_str(r.diameter_source).to_string(),
                r.soil_type.clone(),
                r.rock_type.clone(),
                r.pressure_zone.clone(),
                r.main_ids.len().to_string(),
                format!("{:.3}", r.main_length),
                r.main_less().to_string(),
                r.breaks.len().to_string(),
            ])
            .expect("in-memory write");
        }
        finish(w)
    }
}

fn source_str(s: Source) -> &'static str {
    match s {
        Source::Recorded => "recorded",
        Source::Parcel => "parcel",
        Source::Notebook => "notebook",
        Source::EraRule => "era_rule",
        Source::Street => "street",
        Source::Median => "median",
    }
}

/// Aggregate mains and break events to blocks and impute missing attributes.
pub fn aggregate_to_blocks(raw: &RawCity, assignment: &geo::Assignment) -> BlockTable {
    let mains: BTreeMap<MainId, &MainSegment> = raw.mains.iter().map(|m| (m.main_id, m)).collect();

    let mut per_block: BTreeMap<BlockId, Vec<&MainSegment>> = BTreeMap::new();
    for (main_id, block_id) in &assignment.mapping {
        if let Some(m) = mains.get(main_id) {
            per_block.entry(*block_id).or_default().push(m);
        }
    }

    let mut recorded = BTreeMap::new();
    let mut attrs = Vec::with_capacity(raw.blocks.len());
    for b in &raw.blocks {
        let ms = per_block.get(&b.block_id).map(Vec::as_slice).unwrap_or(&[]);
        let mut votes: BTreeMap<Material, f64> = BTreeMap::new();
        for m in ms {
            if let Some(mat) = m.material.filter(|x| *x != Material::Unknown) {
                *votes.entry(mat).or_default() += geo::polyline_length(&m.geometry);
            }
        }
        recorded.insert(
            b.block_id,
            RecordedAttrs {
                years: ms.iter().filter_map(|m| m.install_year).collect(),
                material: majority(&votes),
                diameter: ms.iter().filter_map(|m| m.diameter).min_by(f64::total_cmp),
            },
        );
        let length = ms.iter().map(|m| geo::polyline_length(&m.geometry)).sum();
        attrs.push(BlockAttrs::new(b.block_id, b.street_id, length));
    }
    impute(&mut attrs, &recorded, &raw.parcels, &raw.notebook);

    let mut rejects = Vec::new();
    let mut breaks: BTreeMap<BlockId, Vec<BreakEvent>> = BTreeMap::new();
    for w in raw.work_orders.iter().filter(|w| w.kind == WorkKind::MainBreak) {
        let resolved = match w.location {
            Location::Main(id) => match (mains.get(&id), assignment.mapping.get(&id)) {
                (None, _) => Err(format!("unknown main_id {id}")),
                (Some(_), None) => Err(format!("main_id {id} is not assigned to any block")),
                (Some(m), Some(&block)) => Ok((block, m.geometry.point_at_fraction(0.5))),
            },
            Location::Point(p) => Ok((nearest_block(raw, &p), p)),
        };
        match resolved {
            Ok((block, point)) => breaks
                .entry(block)
                .or_default()
                .push(BreakEvent { event_id: w.event_id, date: w.date, point }),
            Err(reason) => rejects.push(Reject {
                file: WORK_ORDERS.to_string(),
                row: 0,
                reason: format!("event {}: {reason}", w.event_id),
            }),
        }
    }

    let rows = raw
        .blocks
        .iter()
        .zip(&attrs)
        .map(|(b, a)| {
            debug_assert_eq!(b.block_id, a.block_id);
            let (install_year, install_year_source) = a.install_year.unwrap_or((0, Source::Median));
            let (material, material_source) = a.material.unwrap_or((Material::Unknown, Source::EraRule));
            let (diameter, diameter_source) = a.diameter.unwrap_or((0.0, Source::Median));
            let mut main_ids: Vec<MainId> = per_block
                .get(&b.block_id)
                .map(|ms| ms.iter().map(|m| m.main_id).collect())
                .unwrap_or_default();
            main_ids.sort();
            let mut evs = breaks.remove(&b.block_id).unwrap_or_default();
            evs.sort_by_key(|e| (e.date, e.event_id));
            BlockRow {
                block_id: b.block_id,
                street_id: b.street_id,
                label: b.label.clone(),
                geometry: b.geometry.clone(),
                install_year,
                install_year_source,
                material,
                material_source,
                diameter,
                diameter_source,
                soil_type: b.soil_type.clone(),
                rock_type: b.rock_type.clone(),
                pressure_zone: b.pressure_zone.clone(),
                road_ratings: b.road_ratings.clone(),
                main_ids,
                main_length: a.main_length,
                breaks: evs,
            }
        })
        .collect();

    BlockTable { rows, unmapped_mains: assignment.unmapped.clone(), rejects }
}

/// Nearest block polyline; equal distances go to the smallest block id.
fn nearest_block(raw: &RawCity, p: &Point2) -> BlockId {
    let mut best = (f64::INFINITY, BlockId(u64::MAX));
    for b in &raw.blocks {
        let d = geo::point_to_polyline_distance(p, &b.geometry);
        if d < best.0 {
            best = (d, b.block_id);
        }
    }
    best.1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nb(street: u64, material: Material, diameter: f64) -> NotebookEntry {
        NotebookEntry { street_id: StreetId(street), material, diameter }
    }

    #[test]
    fn era_rule_boundaries() {
        let entry = nb(1, Material::Universal, 6.0);
        assert_eq!(impute_material(1919, None), Material::CastIron);
        assert_eq!(impute_material(1961, None), Material::DuctileIron);
        assert_eq!(impute_material(1940, Some(&entry)), Material::Universal);
        assert_eq!(impute_material(1940, None), Material::Unknown);
        assert_eq!(impute_material(1920, None), Material::Unknown);
        assert_eq!(impute_material(1960, Some(&entry)), Material::Universal);
    }

    #[test]
    fn install_year_precedence() {
        assert_eq!(local_install_year(&[1950, 1920], &[1900]), Some((1920, Source::Recorded)));
        assert_eq!(local_install_year(&[], &[1931, 1940]), Some((1931, Source::Parcel)));
        assert_eq!(local_install_year(&[], &[]), None);
    }

    fn attrs(id: u64, len: f64, y: Option<i32>, m: Option<Material>, d: Option<f64>) -> BlockAttrs {
        BlockAttrs {
            block_id: BlockId(id),
            street_id: StreetId(1),
            main_length: len,
            install_year: y.map(|v| (v, Source::Recorded)),
            material: m.map(|v| (v, Source::Recorded)),
            diameter: d.map(|v| (v, Source::Recorded)),
        }
    }

    #[test]
    fn propagation_from_one_resolved_block() {
        let mut s = vec![
            attrs(1, 100.0, Some(1925), Some(Material::CastIron), Some(8.0)),
            attrs(2, 100.0, None, None, None),
            attrs(3, 100.0, None, None, None),
        ];
        propagate_street_values(&mut s);
        for b in &s {
            assert_eq!(b.install_year.unwrap().0, 1925);
            assert_eq!(b.material.unwrap().0, Material::CastIron);
            assert_eq!(b.diameter.unwrap().0, 8.0);
        }
        assert_eq!(s[1].install_year.unwrap().1, Source::Street);
    }

    #[test]
    fn propagation_noop_when_unresolved() {
        let mut s = vec![attrs(1, 10.0, None, None, None), attrs(2, 10.0, None, None, None)];
        let before = s.clone();
        propagate_street_values(&mut s);
        assert_eq!(s, before);
    }

    #[test]
    fn propagation_disagreeing_siblings() {
        let mut s = vec![
            attrs(1, 100.0, Some(1925), Some(Material::CastIron), None),
            attrs(2, 300.0, Some(1950), Some(Material::Universal), None),
            attrs(3, 50.0, None, None, None),
        ];
        propagate_street_values(&mut s);
        assert_eq!(s[2].install_year.unwrap().0, 1925);
        assert_eq!(s[2].material.unwrap().0, Material::Universal);
        // resolved blocks keep their own values
        assert_eq!(s[1].install_year.unwrap().0, 1950);
    }

    #[test]
    fn median_fallback_is_flagged() {
        let mut a = vec![
            BlockAttrs::new(BlockId(1), StreetId(1), 10.0),
            BlockAttrs::new(BlockId(2), StreetId(2), 10.0),
            BlockAttrs::new(BlockId(3), StreetId(3), 10.0),
            BlockAttrs::new(BlockId(4), StreetId(4), 10.0),
        ];
        let parcels = [
            ParcelRecord { block_id: BlockId(1), first_tax_year: 1900 },
            ParcelRecord { block_id: BlockId(2), first_tax_year: 1970 },
            ParcelRecord { block_id: BlockId(3), first_tax_year: 1940 },
        ];
        impute(&mut a, &BTreeMap::new(), &parcels, &[]);
        assert_eq!(a[3].install_year, Some((1940, Source::Median)));
        assert_eq!(a[0].material, Some((Material::CastIron, Source::EraRule)));
        assert_eq!(a[1].material, Some((Material::DuctileIron, Source::EraRule)));
        assert_eq!(a[2].material, Some((Material::Unknown, Source::EraRule)));
        // no diameters anywhere: stays absent
        assert!(a.iter().all(|x| x.diameter.is_none()));
    }

    #[test]
    fn geometry_text_round_trip() {
        let l = parse_geometry("0 0; 10.5 -3;20 1e-3").unwrap();
        assert_eq!(parse_geometry(&format_geometry(&l)).unwrap(), l);
        assert!(parse_geometry("0 0").is_err());
        assert!(parse_geometry("0 0;1").is_err());
    }

    #[test]
    fn material_parsing() {
        assert_eq!("Cast Iron".parse::<Material>().unwrap(), Material::CastIron);
        assert_eq!("ductile-iron".parse::<Material>().unwrap(), Material::DuctileIron);
        assert!("lead".parse::<Material>().is_err());
    }
}
