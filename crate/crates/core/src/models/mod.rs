//! The four generative flow models.
//!
//! Every generator is singly constrained: given per-origin totals `T_i`, it
//! returns `T_i * p(j | i)` over all destinations `j != i`. Self-flows are
//! never generated.

mod artifact;
mod features;
mod gravity;
mod net;
mod radiation;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodata::{FlowMatrix, GeodataError, Tessellation};

pub use artifact::{FittedModel, ModelArtifact, ARTIFACT_FORMAT_VERSION};
pub use features::{FeatureSpace, Standardizer, NLG_FEATURES};
pub use gravity::{fit_gravity, generate_gravity, gravity_probabilities, Deterrence, GravityFit, GravityParams};
pub use net::{
    generate_net, loss_and_gradient, train_net, train_net_on, FeedForwardNet, Layer, NeuralModel, TrainConfig,
    TrainedNet, LEAKY_SLOPE,
};
pub use radiation::{generate_radiation, radiation_probabilities};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("degenerate input: likelihood is flat in {0}")]
    Degenerate(String),
    #[error("gravity fit did not converge after {iterations} iterations (gradient inf-norm {grad_norm:e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },
    #[error("zones `{origin}` and `{destination}` are distinct but at zero distance (power deterrence is singular)")]
    ZeroDistance { origin: String, destination: String },
    #[error("zone `{0}` has non-positive population")]
    NonPositivePopulation(String),
    #[error("radiation normalization is singular for origin `{0}` (it holds the whole population)")]
    SingularNormalization(String),
    #[error("origin `{0}` has positive outflow but every destination probability is zero")]
    ZeroProbability(String),
    #[error("outflows have length {found}, tessellation has {expected} zones")]
    OutflowLength { expected: usize, found: usize },
    #[error("invalid outflow {value} for zone `{zone}`")]
    InvalidOutflow { zone: String, value: f64 },
    #[error("{0} requires POI features but the tessellation has none")]
    MissingPoi(ModelKind),
    #[error("{kind} is not a neural model")]
    NotNeural { kind: ModelKind },
    #[error("feature dimension mismatch: model expects {expected}, tessellation yields {found}")]
    FeatureMismatch { expected: usize, found: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid model artifact: {0}")]
    InvalidArtifact(String),
    #[error(transparent)]
    Geodata(#[from] GeodataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Gravity,
    Radiation,
    NonLinearGravity,
    DeepGravity,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Gravity,
        ModelKind::Radiation,
        ModelKind::DeepGravity,
        ModelKind::NonLinearGravity,
    ];

    pub fn is_neural(self) -> bool {
        matches!(self, ModelKind::NonLinearGravity | ModelKind::DeepGravity)
    }

    /// Short name used on the command line and in file names.
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Gravity => "gravity",
            ModelKind::Radiation => "radiation",
            ModelKind::NonLinearGravity => "nlg",
            ModelKind::DeepGravity => "deepgravity",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Gravity => "Gravity",
            ModelKind::Radiation => "Radiation",
            ModelKind::NonLinearGravity => "Non-Linear Gravity",
            ModelKind::DeepGravity => "Deep Gravity",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_', ' '], "").as_str() {
            "gravity" => Ok(ModelKind::Gravity),
            "radiation" => Ok(ModelKind::Radiation),
            "nlg" | "nonlineargravity" => Ok(ModelKind::NonLinearGravity),
            "dg" | "deepgravity" => Ok(ModelKind::DeepGravity),
            _ => Err(format!(
                "unknown model `{s}` (expected gravity, radiation, nlg or deepgravity)"
            )),
        }
    }
}

/// Per-origin outflow totals excluding self-flows, the `T_i` fed to the generators.
pub fn outflows(real: &FlowMatrix) -> Vec<f64> {
    let mut totals = vec![0.0; real.n_zones()];
    for (o, d, v) in real.iter() {
        if o != d {
            totals[o] += v;
        }
    }
    totals
}

pub(crate) fn check_outflows(tess: &Tessellation, outflows: &[f64]) -> Result<(), ModelError> {
    if outflows.len() != tess.len() {
        return Err(ModelError::OutflowLength {
            expected: tess.len(),
            found: outflows.len(),
        });
    }
    if let Some((i, &v)) = outflows.iter().enumerate().find(|(_, v)| !(**v >= 0.0 && v.is_finite())) {
        return Err(ModelError::InvalidOutflow {
            zone: tess.zone(i).id.clone(),
            value: v,
        });
    }
    Ok(())
}

/// Runs `row` for every origin with positive outflow, in parallel, and assembles the matrix.
///
/// `row(i)` returns destination probabilities over `j != i` (each row sums to one).
pub(crate) fn generate_rows<F>(tess: &Tessellation, outflows: &[f64], row: F) -> Result<FlowMatrix, ModelError>
where
    F: Fn(usize) -> Result<Vec<(usize, f64)>, ModelError> + Sync,
{
    check_outflows(tess, outflows)?;
    let rows: Vec<Vec<(usize, usize, f64)>> = (0..tess.len())
        .into_par_iter()
        .filter(|&i| outflows[i] > 0.0)
        .map(|i| {
            let t = outflows[i];
            Ok(row(i)?.into_iter().map(|(j, p)| (i, j, t * p)).collect())
        })
        .collect::<Result<_, ModelError>>()?;
    Ok(FlowMatrix::from_entries(tess.len(), rows.into_iter().flatten())?)
}

/// Normalizes non-negative weights in place; returns false when they sum to zero.
pub(crate) fn normalize(weights: &mut [(usize, f64)]) -> bool {
    let sum: f64 = weights.iter().map(|(_, w)| w).sum();
    if !(sum > 0.0 && sum.is_finite()) {
        return false;
    }
    for (_, w) in weights.iter_mut() {
        *w /= sum;
    }
    true
}

/// Seeded origin split: returns `(train, test)` with `round(test_fraction * n)` test origins.
pub fn split_origins(origins: &[usize], test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut shuffled = origins.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((origins.len() as f64) * test_fraction.clamp(0.0, 1.0)).round() as usize;
    let mut test = shuffled.split_off(shuffled.len() - n_test);
    shuffled.sort_unstable();
    test.sort_unstable();
    (shuffled, test)
}
