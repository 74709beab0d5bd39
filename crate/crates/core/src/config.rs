//! Flat `key = value` run configuration shared by every subcommand.
//!
//! Blank lines and lines starting with `#` are ignored. Later assignments
//! win, so command-line overrides are applied after the file.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::ExperimentConfig;
use crate::features::{FeatureSpec, Window};
use crate::gbdt::TrainConfig;
use crate::ingest::IngestConfig;
use crate::synth::SynthParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue { key: String, value: String, reason: String },
    #[error("{path}:{line}: expected `key = value`")]
    Syntax { path: String, line: usize },
    #[error("cannot read config {path}: {reason}")]
    Read { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: PathBuf,
    pub out: PathBuf,
    pub seed: u64,

    pub blocks: usize,
    pub blocks_per_street: usize,
    pub first_year: i32,
    pub years: u32,
    pub blank_fraction: f64,

    pub halfwidth: f64,
    pub break_keywords: Vec<String>,
    pub current_year: Option<i32>,

    pub windows: Vec<Window>,
    pub radius: f64,
    pub lookback: u32,
    pub horizon: u32,
    pub min_history: u32,
    /// First and last complete years of event data; derived from the work
    /// orders when unset.
    pub start_year: Option<i32>,
    pub end_year: Option<i32>,

    pub iterations: usize,
    pub max_depth: usize,
    pub subsample: f64,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    pub single_tree_depth: usize,

    pub percent: f64,
    pub bins: usize,
    pub as_of: Option<NaiveDate>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthParams::default();
        let spec = FeatureSpec::default();
        let train = TrainConfig::default();
        Self {
            data: PathBuf::from("data"),
            out: PathBuf::from("out"),
            seed: 0,
            blocks: synth.n_blocks(),
            blocks_per_street: synth.blocks_per_street,
            first_year: synth.first_year,
            years: synth.years,
            blank_fraction: synth.blank_fraction,
            halfwidth: 25.0,
            break_keywords: IngestConfig::default().break_keywords,
            current_year: None,
            windows: spec.windows,
            radius: spec.nearby_radius_ft,
            lookback: spec.lookback_years,
            horizon: 3,
            min_history: 3,
            start_year: None,
            end_year: None,
            iterations: train.iterations,
            max_depth: train.max_depth,
            subsample: train.subsample,
            learning_rate: train.learning_rate,
            min_samples_leaf: train.min_samples_leaf,
            single_tree_depth: 3,
            percent: 1.0,
            bins: 10,
            as_of: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: Display,
{
    value.trim().parse().map_err(|e: T::Err| ConfigError::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

fn parse_opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>, ConfigError>
where
    T::Err: Display,
{
    match value.trim() {
        "" | "auto" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

fn invalid(key: &str, value: impl Display, reason: &str) -> ConfigError {
    ConfigError::InvalidValue { key: key.to_string(), value: value.to_string(), reason: reason.to_string() }
}

fn opt_str<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_else(|| "auto".into())
}

impl RunConfig {
    pub const KEYS: [&'static str; 27] = [
        "data",
        "out",
        "seed",
        "blocks",
        "blocks_per_street",
        "first_year",
        "years",
        "blank_fraction",
        "halfwidth",
        "break_keywords",
        "current_year",
        "windows",
        "radius",
        "lookback",
        "horizon",
        "min_history",
        "start_year",
        "end_year",
        "iterations",
        "max_depth",
        "subsample",
        "learning_rate",
        "min_samples_leaf",
        "single_tree_depth",
        "percent",
        "bins",
        "as_of",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key.trim().replace('-', "_").as_str() {
            "data" => self.data = PathBuf::from(v),
            "out" => self.out = PathBuf::from(v),
            "seed" => self.seed = parse(key, v)?,
            "blocks" => self.blocks = parse(key, v)?,
            "blocks_per_street" => self.blocks_per_street = parse(key, v)?,
            "first_year" => self.first_year = parse(key, v)?,
            "years" => self.years = parse(key, v)?,
            "blank_fraction" => self.blank_fraction = parse(key, v)?,
            "halfwidth" => self.halfwidth = parse(key, v)?,
            "break_keywords" => {
                self.break_keywords = v.split('|').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
            }
            "current_year" => self.current_year = parse_opt(key, v)?,
            "windows" => {
                self.windows = v
                    .split(',')
                    .map(|w| w.trim().parse::<Window>().map_err(|e| invalid(key, value, &e.to_string())))
                    .collect::<Result<_, _>>()?
            }
            "radius" => self.radius = parse(key, v)?,
            "lookback" => self.lookback = parse(key, v)?,
            "horizon" => self.horizon = parse(key, v)?,
            "min_history" => self.min_history = parse(key, v)?,
            "start_year" => self.start_year = parse_opt(key, v)?,
            "end_year" => self.end_year = parse_opt(key, v)?,
            "iterations" => self.iterations = parse(key, v)?,
            "max_depth" => self.max_depth = parse(key, v)?,
            "subsample" => self.subsample = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "min_samples_leaf" => self.min_samples_leaf = parse(key, v)?,
            "single_tree_depth" => self.single_tree_depth = parse(key, v)?,
            "percent" => self.percent = parse(key, v)?,
            "bins" => self.bins = parse(key, v)?,
            "as_of" => self.as_of = parse_opt(key, v)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), ConfigError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { path: origin.to_string(), line: i + 1 })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), reason: e.to_string() })?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Every key with its resolved value, in `KEYS` order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("data", self.data.display().to_string()),
            ("out", self.out.display().to_string()),
            ("seed", self.seed.to_string()),
            ("blocks", self.blocks.to_string()),
            ("blocks_per_street", self.blocks_per_street.to_string()),
            ("first_year", self.first_year.to_string()),
            ("years", self.years.to_string()),
            ("blank_fraction", self.blank_fraction.to_string()),
            ("halfwidth", self.halfwidth.to_string()),
            ("break_keywords", self.break_keywords.join("|")),
            ("current_year", opt_str(&self.current_year)),
            ("windows", self.windows_text()),
            ("radius", self.radius.to_string()),
            ("lookback", self.lookback.to_string()),
            ("horizon", self.horizon.to_string()),
            ("min_history", self.min_history.to_string()),
            ("start_year", opt_str(&self.start_year)),
            ("end_year", opt_str(&self.end_year)),
            ("iterations", self.iterations.to_string()),
            ("max_depth", self.max_depth.to_string()),
            ("subsample", self.subsample.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("min_samples_leaf", self.min_samples_leaf.to_string()),
            ("single_tree_depth", self.single_tree_depth.to_string()),
            ("percent", self.percent.to_string()),
            ("bins", self.bins.to_string()),
            ("as_of", opt_str(&self.as_of)),
        ]
    }

    fn windows_text(&self) -> String {
        self.windows.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
    }

    /// Text accepted by [`RunConfig::apply_text`] that reproduces `self`.
    pub fn to_text(&self) -> String {
        self.to_pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.blocks == 0 {
            return Err(invalid("blocks", self.blocks, "must be at least 1"));
        }
        if self.blocks_per_street == 0 {
            return Err(invalid("blocks_per_street", 0, "must be at least 1"));
        }
        if self.years == 0 {
            return Err(invalid("years", 0, "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.blank_fraction) {
            return Err(invalid("blank_fraction", self.blank_fraction, "must lie in [0, 1]"));
        }
        if !(self.halfwidth > 0.0) {
            return Err(invalid("halfwidth", self.halfwidth, "must be positive"));
        }
        if self.horizon == 0 {
            return Err(invalid("horizon", 0, "must be at least 1"));
        }
        if !(self.percent > 0.0 && self.percent <= 100.0) {
            return Err(invalid("percent", self.percent, "must lie in (0, 100]"));
        }
        if self.bins < 2 {
            return Err(invalid("bins", self.bins, "must be at least 2"));
        }
        if self.single_tree_depth == 0 {
            return Err(invalid("single_tree_depth", 0, "must be at least 1"));
        }
        if let (Some(s), Some(e)) = (self.start_year, self.end_year) {
            if e < s {
                return Err(invalid("end_year", e, "precedes start_year"));
            }
        }
        self.feature_spec()
            .validate()
            .map_err(|e| invalid("windows", self.windows_text(), &e.to_string()))?;
        self.train_config().validate().map_err(|e| invalid("iterations", self.iterations, &e.to_string()))?;
        Ok(())
    }

    pub fn feature_spec(&self) -> FeatureSpec {
        FeatureSpec {
            windows: self.windows.clone(),
            nearby_radius_ft: self.radius,
            lookback_years: self.lookback,
            ..FeatureSpec::default()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            iterations: self.iterations,
            max_depth: self.max_depth,
            subsample: self.subsample,
            learning_rate: self.learning_rate,
            min_samples_leaf: self.min_samples_leaf,
            seed: self.seed,
        }
    }

    pub fn experiment_config(&self) -> ExperimentConfig {
        ExperimentConfig {
            features: self.feature_spec(),
            train: self.train_config(),
            single_tree_depth: self.single_tree_depth,
            percent: self.percent,
            bins: self.bins,
            seed: self.seed,
        }
    }

    pub fn ingest_config(&self) -> IngestConfig {
        let mut cfg = IngestConfig { break_keywords: self.break_keywords.clone(), ..IngestConfig::default() };
        if let Some(y) = self.current_year {
            cfg.current_year = y;
        }
        cfg
    }

    pub fn synth_params(&self) -> SynthParams {
        SynthParams {
            seed: self.seed,
            first_year: self.first_year,
            years: self.years,
            blank_fraction: self.blank_fraction,
            ..SynthParams::default()
        }
        .with_blocks(self.blocks, self.blocks_per_street)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.apply_text("seed = 9\n# comment\n\nwindows = 1, 3, inf\nas_of = 2016-01-01\nbreak_keywords = Main Break|Leak\n", "t")
            .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.windows, vec![Window::Years(1), Window::Years(3), Window::All]);
        assert_eq!(c.break_keywords, vec!["Main Break", "Leak"]);
        let mut d = RunConfig::default();
        d.apply_text(&c.to_text(), "echo").unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn keys_cover_pairs() {
        for (k, _) in RunConfig::default().to_pairs() {
            assert!(RunConfig::KEYS.contains(&k), "{k}");
        }
    }

    #[test]
    fn errors() {
        let mut c = RunConfig::default();
        assert_eq!(c.set("colour", "red"), Err(ConfigError::UnknownKey("colour".into())));
        assert!(c.set("seed", "-1").is_err());
        assert!(matches!(c.apply_text("seed 4", "f"), Err(ConfigError::Syntax { line: 1, .. })));
        c.set("blocks", "0").unwrap();
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.set("lookback", "2").unwrap();
        assert!(c.validate().is_err());
        assert!(RunConfig::default().validate().is_ok());
    }

    #[test]
    fn dashed_keys_accepted() {
        let mut c = RunConfig::default();
        c.set("learning-rate", "0.5").unwrap();
        assert_eq!(c.learning_rate, 0.5);
    }
}
