use thiserror::Error;

use crate::fairness::FairnessError;
use crate::geodata::GeodataError;
use crate::metrics::MetricError;
use crate::models::ModelError;
use crate::synth::SynthError;

/// Crate-level error, one variant per module.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Geodata(#[from] GeodataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Fairness(#[from] FairnessError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
