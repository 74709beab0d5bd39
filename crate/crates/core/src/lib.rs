//! Water-main break risk ranking: geometry, ingestion, features,
//! gradient-boosted trees, temporal evaluation and a synthetic city generator.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

pub mod config;
pub mod eval;
pub mod features;
pub mod gbdt;
pub mod geo;
pub mod ids;
pub mod ingest;
pub mod pipeline;
pub mod synth;

pub use ids::{BlockId, EventId, MainId, StreetId};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Ingest(#[from] ingest::IngestError),
    #[error(transparent)]
    Geo(#[from] geo::GeoError),
    #[error(transparent)]
    Feature(#[from] features::FeatureError),
    #[error(transparent)]
    Gbdt(#[from] gbdt::GbdtError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no work orders to derive the data range from; set start_year and end_year")]
    NoEventData,
    #[error("cannot rank as of {as_of}: the earliest date with a full training window is {earliest}")]
    NotTrainable { as_of: NaiveDate, earliest: NaiveDate },
}

impl Error {
    /// Configuration problems are usage errors.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Synth(synth::SynthError::InvalidParams(_)))
    }
}
