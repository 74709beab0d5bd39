//! Deterministic synthetic city with a known, self-exciting break process.
//!
//! Streets run east-west on a regular grid; each street is cut into equal
//! blocks, and each block carries one or two mains a few feet off the
//! centerline. Every block-year gets one Bernoulli draw whose probability is
//! a clamped logistic function of recent breaks, pipe age, diameter deficit
//! and material. All randomness comes from the single seed.

use std::fs;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::jan1;
use crate::geo::{Point2, Polyline};
use crate::ids::{BlockId, EventId, MainId, StreetId};
use crate::ingest::{
    csv_writer, finish, impute_material, BlockRecord, IngestError, Location, MainSegment, Material, NotebookEntry,
    ParcelRecord, RawCity, RawFiles, WorkKind, WorkOrder,
};

pub const TRUTH_HAZARDS: &str = "truth_hazards.csv";
pub const SYNTH_PARAMS: &str = "synth_params.json";

pub const MIN_HAZARD: f64 = 0.001;
pub const MAX_HAZARD: f64 = 0.95;

const STREET_SPACING_FT: f64 = 400.0;
const BLOCK_LENGTH_FT: f64 = 300.0;
const BREAK_DESCRIPTION: &str = "Main Break/Leak";
const OTHER_DESCRIPTIONS: [&str; 4] = ["Hydrant Repair", "Valve Exercise", "Service Line Leak", "Curb Box Repair"];
const STREET_NAMES: [&str; 12] = [
    "Hampton", "Salina", "Genesee", "Erie", "Onondaga", "Midland", "Bellevue", "Comstock", "Teall", "Burnet",
    "Geddes", "Lodi",
];
const STREET_SUFFIXES: [&str; 4] = ["Ave", "St", "Rd", "Pl"];
const SOILS: [&str; 4] = ["clay", "loam", "sand", "silt"];
const ROCKS: [&str; 3] = ["limestone", "shale", "none"];
const ZONES: [&str; 3] = ["low", "mid", "high"];
const DIAMETERS: [f64; 8] = [4.0, 6.0, 6.0, 8.0, 8.0, 8.0, 10.0, 12.0];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Io(#[from] IngestError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardWeights {
    /// Logit offset; `None` tunes it so the realized 3-year block break
    /// rate matches `SynthParams::target_rate`.
    pub intercept: Option<f64>,
    /// Per break on the block in the previous `SynthParams::memory_years`.
    pub past_break: f64,
    pub age_per_decade: f64,
    /// Per inch below `reference_diameter`.
    pub diameter_deficit: f64,
    pub reference_diameter: f64,
    pub cast_iron: f64,
    pub ductile_iron: f64,
    pub universal: f64,
    pub other: f64,
}

impl Default for HazardWeights {
    fn default() -> Self {
        Self {
            intercept: None,
            past_break: 2.8,
            age_per_decade: 0.05,
            diameter_deficit: 0.4,
            reference_diameter: 8.0,
            cast_iron: 0.8,
            ductile_iron: -0.8,
            universal: 0.3,
            other: 0.0,
        }
    }
}

impl HazardWeights {
    pub fn zero() -> Self {
        Self {
            intercept: None,
            past_break: 0.0,
            age_per_decade: 0.0,
            diameter_deficit: 0.0,
            reference_diameter: 8.0,
            cast_iron: 0.0,
            ductile_iron: 0.0,
            universal: 0.0,
            other: 0.0,
        }
    }

    fn material(&self, m: Material) -> f64 {
        match m {
            Material::CastIron => self.cast_iron,
            Material::DuctileIron => self.ductile_iron,
            Material::Universal => self.universal,
            Material::Other | Material::Unknown => self.other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub streets: usize,
    pub blocks_per_street: usize,
    /// Caps the block count below `streets * blocks_per_street`.
    pub total: Option<usize>,
    pub first_year: i32,
    pub years: u32,
    pub seed: u64,
    /// Fraction of mains whose recorded attributes are blanked.
    pub blank_fraction: f64,
    pub notebook_probability: f64,
    pub parcel_probability: f64,
    /// Non-break work orders per simulated break.
    pub other_work_ratio: f64,
    pub memory_years: u32,
    /// Years simulated before `first_year` and not emitted, so the process
    /// is near steady state when the data starts.
    pub burn_in_years: u32,
    pub target_rate: f64,
    pub weights: HazardWeights,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            streets: 20,
            blocks_per_street: 25,
            total: None,
            first_year: 2005,
            years: 11,
            seed: 0,
            blank_fraction: 0.9,
            notebook_probability: 0.8,
            parcel_probability: 0.7,
            other_work_ratio: 0.3,
            memory_years: 1,
            burn_in_years: 10,
            target_rate: 0.09,
            weights: HazardWeights::default(),
        }
    }
}

impl SynthParams {
    /// Breaks driven only by the block's own breaks in the previous five
    /// years; every static weight is zero.
    pub fn planted(seed: u64) -> Self {
        let mut weights = HazardWeights::zero();
        weights.past_break = 1.5;
        Self { seed, memory_years: 5, weights, ..Self::default() }
    }

    /// A grid with `n_blocks` blocks, `blocks_per_street` per street (the
    /// last street may be shorter).
    pub fn with_blocks(mut self, n_blocks: usize, blocks_per_street: usize) -> Self {
        self.blocks_per_street = blocks_per_street.max(1);
        self.streets = n_blocks.div_ceil(self.blocks_per_street);
        self.total = Some(n_blocks);
        self
    }

    pub fn last_year(&self) -> i32 {
        self.first_year + self.years as i32 - 1
    }

    pub fn n_blocks(&self) -> usize {
        self.total.unwrap_or(usize::MAX).min(self.streets * self.blocks_per_street)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidParams(m.to_string()));
        if self.n_blocks() == 0 {
            return bad("city needs at least one block");
        }
        if self.years == 0 {
            return bad("simulate at least one year");
        }
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.blank_fraction) || !unit(self.notebook_probability) || !unit(self.parcel_probability) {
            return bad("fractions and probabilities must lie in [0, 1]");
        }
        if !(self.other_work_ratio >= 0.0) {
            return bad("other_work_ratio must be non-negative");
        }
        if !(self.target_rate > 0.0 && self.target_rate < 1.0) {
            return bad("target_rate must lie in (0, 1)");
        }
        if self.weights.past_break < 0.0 {
            return bad("past_break weight must be non-negative");
        }
        Ok(())
    }
}

/// Attributes the break process actually uses, before blanking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockTruth {
    pub block_id: BlockId,
    pub install_year: i32,
    pub material: Material,
    pub diameter: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthHazard {
    pub block_id: BlockId,
    pub year: i32,
    pub hazard: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCity {
    pub params: SynthParams,
    /// Intercept used for simulation (tuned when the params leave it open).
    pub intercept: f64,
    pub city: RawCity,
    pub truth: Vec<BlockTruth>,
    pub hazards: Vec<TruthHazard>,
}

impl SynthCity {
    pub fn files(&self) -> RawFiles {
        RawFiles::from_city(&self.city)
    }

    pub fn hazards_csv(&self) -> String {
        let mut w = csv_writer(&["block_id", "year", "hazard"]);
        for h in &self.hazards {
            w.write_record([h.block_id.to_string(), h.year.to_string(), h.hazard.to_string()])
                .expect("in-memory write");
        }
        finish(w)
    }

    /// Six ingest CSVs, `truth_hazards.csv` and the resolved parameters.
    pub fn write_dir(&self, dir: &Path) -> Result<(), SynthError> {
        let io = |path: &Path, e| IngestError::Io { path: path.to_path_buf(), source: e };
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        self.files().write_dir(dir)?;
        let path = dir.join(TRUTH_HAZARDS);
        fs::write(&path, self.hazards_csv()).map_err(|e| io(&path, e))?;
        let mut params = self.params.clone();
        params.weights.intercept = Some(self.intercept);
        let path = dir.join(SYNTH_PARAMS);
        let json = serde_json::to_string_pretty(&params).expect("params serialize") + "\n";
        fs::write(&path, json).map_err(|e| io(&path, e))?;
        Ok(())
    }

    pub fn break_count(&self) -> usize {
        self.city.work_orders.iter().filter(|w| w.description == BREAK_DESCRIPTION).count()
    }
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Clamped annual break probability.
pub fn hazard(w: &HazardWeights, intercept: f64, recent_breaks: u32, age_years: f64, t: &BlockTruth) -> f64 {
    let z = intercept
        + w.past_break * f64::from(recent_breaks)
        + w.age_per_decade * age_years / 10.0
        + w.diameter_deficit * (w.reference_diameter - t.diameter).max(0.0)
        + w.material(t.material);
    logistic(z).clamp(MIN_HAZARD, MAX_HAZARD)
}

struct Layout {
    blocks: Vec<BlockRecord>,
    mains: Vec<(MainSegment, BlockId)>,
    parcels: Vec<ParcelRecord>,
    notebook: Vec<NotebookEntry>,
    truth: Vec<BlockTruth>,
}

fn street_name(s: usize) -> String {
    let base = STREET_NAMES[s % STREET_NAMES.len()];
    let suffix = STREET_SUFFIXES[(s / STREET_NAMES.len()) % STREET_SUFFIXES.len()];
    let dir = if (s / (STREET_NAMES.len() * STREET_SUFFIXES.len())).is_multiple_of(2) { "" } else { "W " };
    format!("{dir}{base} {suffix}")
}

fn line(a: (f64, f64), b: (f64, f64)) -> Polyline {
    Polyline::new(vec![Point2 { x: a.0, y: a.1 }, Point2 { x: b.0, y: b.1 }]).expect("grid segment is valid")
}

fn era_material(rng: &mut ChaCha8Rng) -> Material {
    match rng.gen_range(0..10) {
        0..=4 => Material::CastIron,
        5..=7 => Material::Universal,
        _ => Material::DuctileIron,
    }
}

fn layout(p: &SynthParams, rng: &mut ChaCha8Rng) -> Layout {
    let n_blocks = p.n_blocks();
    let mut out = Layout { blocks: Vec::new(), mains: Vec::new(), parcels: Vec::new(), notebook: Vec::new(), truth: Vec::new() };
    let mut next_main = 1u64;
    let rating_years: Vec<i32> = (p.first_year - 4..=p.last_year()).step_by(2).collect();
    for s in 0..p.streets {
        let street_id = StreetId(s as u64 + 1);
        let name = street_name(s);
        let y = s as f64 * STREET_SPACING_FT;
        let street_year = rng.gen_range(1890..=2000);
        let street_diameter = DIAMETERS[rng.gen_range(0..DIAMETERS.len())];
        let mid_era = era_material(rng);
        let zone = ZONES[(s * ZONES.len()) / p.streets.max(1)];
        if rng.gen_bool(p.notebook_probability) {
            out.notebook.push(NotebookEntry { street_id, material: mid_era, diameter: street_diameter });
        }
        for b in 0..p.blocks_per_street {
            let idx = s * p.blocks_per_street + b;
            if idx >= n_blocks {
                break;
            }
            let block_id = BlockId(idx as u64 + 1);
            let x0 = b as f64 * BLOCK_LENGTH_FT;
            let x1 = x0 + BLOCK_LENGTH_FT;
            let install_year = street_year + rng.gen_range(-3..=3);
            let street_entry = NotebookEntry { street_id, material: mid_era, diameter: street_diameter };
            let material = impute_material(install_year, Some(&street_entry));
            out.truth.push(BlockTruth { block_id, install_year, material, diameter: street_diameter });

            let ratings = rating_years.iter().map(|&yr| (yr, rng.gen_range(1..=10u8))).collect();
            let soil = SOILS[((x0 / 2000.0) as usize + s / 4) % SOILS.len()];
            let rock = ROCKS[rng.gen_range(0..ROCKS.len())];
            out.blocks.push(BlockRecord {
                block_id,
                street_id,
                label: format!("{name}, {}-{}", b * 100, b * 100 + 99),
                geometry: line((x0, y), (x1, y)),
                road_ratings: ratings,
                soil_type: soil.to_string(),
                rock_type: rock.to_string(),
                pressure_zone: zone.to_string(),
            });

            let offset = if rng.gen_bool(0.5) { 8.0 } else { -6.0 };
            let pieces: Vec<(f64, f64)> = if rng.gen_bool(0.3) {
                let cut = x0 + rng.gen_range(100.0..200.0_f64).round();
                vec![(x0 + 2.0, cut), (cut, x1 - 2.0)]
            } else {
                vec![(x0 + 2.0, x1 - 2.0)]
            };
            for (a, c) in pieces {
                out.mains.push((
                    MainSegment {
                        main_id: MainId(next_main),
                        geometry: line((a, y + offset), (c, y + offset)),
                        diameter: Some(street_diameter),
                        material: Some(material),
                        install_year: Some(install_year),
                    },
                    block_id,
                ));
                next_main += 1;
            }

            if rng.gen_bool(p.parcel_probability) {
                for _ in 0..rng.gen_range(1..=3) {
                    out.parcels.push(ParcelRecord { block_id, first_tax_year: install_year + rng.gen_range(0..=8) });
                }
            }
        }
    }
    let n_mains = out.mains.len();
    let n_blank = (n_mains as f64 * p.blank_fraction).round() as usize;
    for i in index::sample(rng, n_mains, n_blank.min(n_mains)) {
        let m = &mut out.mains[i].0;
        m.diameter = None;
        m.material = None;
        m.install_year = None;
    }
    out.parcels.sort();
    out
}

/// Per block-year break indicators (emitted years only) and hazards for a
/// given intercept.
///
/// The uniform draws are fixed up front, so the realized break set grows
/// monotonically with the intercept.
fn run_hazards(p: &SynthParams, truth: &[BlockTruth], draws: &[f64], intercept: f64) -> (Vec<Vec<bool>>, Vec<TruthHazard>) {
    let burn = p.burn_in_years as usize;
    let years = burn + p.years as usize;
    let mut broke = vec![vec![false; years]; truth.len()];
    let mut hazards = Vec::with_capacity(truth.len() * p.years as usize);
    for (bi, t) in truth.iter().enumerate() {
        for yi in 0..years {
            let year = p.first_year - burn as i32 + yi as i32;
            let from = yi.saturating_sub(p.memory_years as usize);
            let recent = broke[bi][from..yi].iter().filter(|&&b| b).count() as u32;
            let h = hazard(&p.weights, intercept, recent, f64::from(year - t.install_year), t);
            broke[bi][yi] = draws[bi * years + yi] < h;
            if yi >= burn {
                hazards.push(TruthHazard { block_id: t.block_id, year, hazard: h });
            }
        }
    }
    for row in &mut broke {
        row.drain(..burn);
    }
    (broke, hazards)
}

/// Fraction of (block, 3-year window) pairs with at least one break.
pub fn three_year_rate(broke: &[Vec<bool>]) -> f64 {
    let mut windows = 0usize;
    let mut hits = 0usize;
    for row in broke {
        if row.len() < 3 {
            windows += 1;
            hits += usize::from(row.iter().any(|&b| b));
            continue;
        }
        for w in row.windows(3) {
            windows += 1;
            hits += usize::from(w.iter().any(|&b| b));
        }
    }
    if windows == 0 {
        0.0
    } else {
        hits as f64 / windows as f64
    }
}

fn tune_intercept(p: &SynthParams, truth: &[BlockTruth], draws: &[f64]) -> f64 {
    let (mut lo, mut hi) = (-15.0_f64, 5.0_f64);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let (broke, _) = run_hazards(p, truth, draws, mid);
        if three_year_rate(&broke) < p.target_rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn random_date(year: i32, rng: &mut ChaCha8Rng) -> NaiveDate {
    let start = jan1(year);
    let days = (jan1(year + 1) - start).num_days();
    start + Duration::days(rng.gen_range(0..days))
}

/// Generate the city and simulate its break history.
pub fn generate_city(params: &SynthParams) -> Result<SynthCity, SynthError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let lay = layout(params, &mut rng);

    let years = params.years as usize;
    let sim_years = years + params.burn_in_years as usize;
    let draws: Vec<f64> = (0..lay.truth.len() * sim_years).map(|_| rng.gen::<f64>()).collect();
    let intercept = params.weights.intercept.unwrap_or_else(|| tune_intercept(params, &lay.truth, &draws));
    let (broke, hazards) = run_hazards(params, &lay.truth, &draws, intercept);

    let mut orders: Vec<(NaiveDate, String, Location)> = Vec::new();
    let mains_of = |b: BlockId| lay.mains.iter().filter(move |(_, blk)| *blk == b).map(|(m, _)| m.main_id);
    for (bi, t) in lay.truth.iter().enumerate() {
        let block = &lay.blocks[bi];
        for (yi, &b) in broke[bi].iter().enumerate() {
            if !b {
                continue;
            }
            let date = random_date(params.first_year + yi as i32, &mut rng);
            let location = if rng.gen_bool(0.5) {
                let ids: Vec<MainId> = mains_of(t.block_id).collect();
                Location::Main(ids[rng.gen_range(0..ids.len())])
            } else {
                Location::Point(block.geometry.point_at_fraction(rng.gen_range(0.02..0.98)))
            };
            orders.push((date, BREAK_DESCRIPTION.to_string(), location));
        }
    }
    let n_other = (orders.len() as f64 * params.other_work_ratio).round() as usize;
    for _ in 0..n_other {
        let block = &lay.blocks[rng.gen_range(0..lay.blocks.len())];
        let year = params.first_year + rng.gen_range(0..years) as i32;
        let date = random_date(year, &mut rng);
        let desc = OTHER_DESCRIPTIONS[rng.gen_range(0..OTHER_DESCRIPTIONS.len())];
        orders.push((date, desc.to_string(), Location::Point(block.geometry.point_at_fraction(rng.gen_range(0.02..0.98)))));
    }
    // stable sort keeps generation order within a day
    orders.sort_by_key(|o| o.0);
    let work_orders = orders
        .into_iter()
        .enumerate()
        .map(|(i, (date, description, location))| WorkOrder {
            event_id: EventId(i as u64 + 1),
            date,
            kind: if description == BREAK_DESCRIPTION { WorkKind::MainBreak } else { WorkKind::Other },
            description,
            location,
        })
        .collect();

    let mut mains: Vec<MainSegment> = lay.mains.into_iter().map(|(m, _)| m).collect();
    mains.sort_by_key(|m| m.main_id);
    let city = RawCity { blocks: lay.blocks, mains, work_orders, parcels: lay.parcels, notebook: lay.notebook };
    Ok(SynthCity { params: params.clone(), intercept, city, truth: lay.truth, hazards })
}

/// Drop every work order dated on or after `jan1(year)`.
pub fn truncate_events(city: &mut RawCity, year: i32) {
    city.work_orders.retain(|w| w.date.year() < year);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthParams {
        SynthParams { seed, ..SynthParams::default() }.with_blocks(60, 10)
    }

    #[test]
    fn grid_size_and_ids() {
        let c = generate_city(&SynthParams { seed: 42, ..SynthParams::default() }).unwrap();
        assert_eq!(c.city.blocks.len(), 500);
        assert_eq!(c.city.blocks.first().unwrap().block_id, BlockId(1));
        assert_eq!(c.city.blocks.last().unwrap().block_id, BlockId(500));
    }

    #[test]
    fn partial_last_street() {
        let p = SynthParams::default().with_blocks(23, 10);
        assert_eq!(p.streets, 3);
        assert_eq!(generate_city(&p).unwrap().city.blocks.len(), 23);
    }

    #[test]
    fn deterministic() {
        let a = generate_city(&small(3)).unwrap();
        let b = generate_city(&small(3)).unwrap();
        assert_eq!(a.files(), b.files());
        assert_eq!(a.hazards_csv(), b.hazards_csv());
        assert_ne!(a.files(), generate_city(&small(4)).unwrap().files());
    }

    #[test]
    fn blanking_counts() {
        for (frac, recorded) in [(0.0, 1.0), (1.0, 0.0)] {
            let mut p = small(1);
            p.blank_fraction = frac;
            let c = generate_city(&p).unwrap();
            let have = c.city.mains.iter().filter(|m| m.install_year.is_some()).count();
            assert_eq!(have as f64, recorded * c.city.mains.len() as f64);
        }
    }

    #[test]
    fn hazards_clamped() {
        let mut p = small(5);
        p.weights.intercept = Some(20.0);
        let c = generate_city(&p).unwrap();
        assert!(c.hazards.iter().all(|h| h.hazard == MAX_HAZARD));
        p.weights.intercept = Some(-40.0);
        let c = generate_city(&p).unwrap();
        assert!(c.hazards.iter().all(|h| h.hazard == MIN_HAZARD));
    }

    #[test]
    fn invalid_params() {
        assert!(generate_city(&SynthParams::default().with_blocks(0, 25)).is_err());
        let p = SynthParams { blank_fraction: 1.5, ..SynthParams::default() };
        assert!(generate_city(&p).is_err());
    }
}
