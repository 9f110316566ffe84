//! Seeded synthetic cities with planted gravity flows, and bias injection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fairness::GroupAssignment;
use crate::geodata::{FlowMatrix, SviScores, SviTheme, Tessellation, Zone, EARTH_RADIUS_KM};
use crate::models::{generate_gravity, Deterrence, GravityParams, ModelError};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic city config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SviMode {
    /// Overall SVI rises linearly west to east; sub-themes jitter around it.
    #[default]
    Gradient,
    /// Every percentile drawn uniformly.
    Random,
}

impl std::str::FromStr for SviMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gradient" => Ok(SviMode::Gradient),
            "random" => Ok(SviMode::Random),
            _ => Err(format!("unknown SVI mode `{s}` (expected gradient or random)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Grid side; the city has `n * n` zones.
    pub n: usize,
    pub population_min: f64,
    pub population_max: f64,
    pub svi_mode: SviMode,
    pub planted: GravityParams,
    /// Outflow of every zone.
    pub outflow: f64,
    /// Lower bound of the disadvantaged-flow degradation factor; 1 disables bias.
    pub bias: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 10,
            population_min: 1_000.0,
            population_max: 10_000.0,
            svi_mode: SviMode::Gradient,
            planted: GravityParams {
                gamma: 1.0,
                beta: 2.0,
                deterrence: Deterrence::Power,
            },
            outflow: 1_000.0,
            bias: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.n < 3 {
            return bad(format!("grid side n = {} (need n >= 3)", self.n));
        }
        if !(self.population_min > 0.0 && self.population_min <= self.population_max && self.population_max.is_finite()) {
            return bad(format!(
                "population range [{}, {}] (need 0 < min <= max)",
                self.population_min, self.population_max
            ));
        }
        if !(self.outflow > 0.0 && self.outflow.is_finite()) {
            return bad(format!("outflow {}", self.outflow));
        }
        if !(self.bias > 0.0 && self.bias <= 1.0) {
            return bad(format!("bias factor {} outside (0, 1]", self.bias));
        }
        self.planted
            .validate()
            .map_err(|e| SynthError::InvalidConfig(e.to_string()))
    }
}

/// Grid spacing in degrees that corresponds to 1 km along a meridian.
pub fn km_in_degrees() -> f64 {
    1.0 / (EARTH_RADIUS_KM * std::f64::consts::PI / 180.0)
}

const SUB_THEME_JITTER: f64 = 0.05;

/// An `n x n` grid at 1 km spacing around (0, 0) with planted gravity flows.
///
/// Zone ids are `r<row>c<col>` in row-major order. Each zone carries two POI
/// counts (`poi_retail`, `poi_office`) proportional to its population.
pub fn make_city(cfg: &SynthConfig) -> Result<(Tessellation, FlowMatrix), SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let step = km_in_degrees();
    let n = cfg.n;
    let mut zones = Vec::with_capacity(n * n);
    for row in 0..n {
        for col in 0..n {
            let population = rng.gen_range(cfg.population_min..=cfg.population_max);
            let mut svi = SviScores([0.0; 5]);
            match cfg.svi_mode {
                SviMode::Gradient => {
                    let total = col as f64 / (n - 1) as f64;
                    svi.set(SviTheme::Total, total);
                    for theme in &SviTheme::ALL[1..] {
                        let jitter = rng.gen_range(-SUB_THEME_JITTER..=SUB_THEME_JITTER);
                        svi.set(*theme, (total + jitter).clamp(0.0, 1.0));
                    }
                }
                SviMode::Random => {
                    for theme in SviTheme::ALL {
                        svi.set(theme, rng.gen_range(0.0..=1.0));
                    }
                }
            }
            let poi = vec![
                (population * rng.gen_range(0.01..=0.05)).round(),
                (population * rng.gen_range(0.005..=0.03)).round(),
            ];
            zones.push(Zone {
                id: format!("r{row}c{col}"),
                lon: col as f64 * step,
                lat: row as f64 * step,
                population: population.round(),
                svi,
                poi,
            });
        }
    }
    let tess = Tessellation::new(zones, vec!["retail".into(), "office".into()])
        .map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    let planted = generate_gravity(&cfg.planted, &tess, &vec![cfg.outflow; n * n])?;
    let flows = planted
        .map_entries(|_, _, v| (v * 1e6).round() / 1e6)
        .map_err(ModelError::from)?;
    Ok((tess, flows))
}

/// Multiplies every disadvantaged-pair flow by a factor drawn uniformly from `[b, 1]`.
///
/// Factors are drawn in pair order, one per pair of `groups.disadvantaged`,
/// so the result depends only on `(flows, groups, b, seed)`.
pub fn inject_bias(flows: &FlowMatrix, groups: &GroupAssignment, b: f64, seed: u64) -> Result<FlowMatrix, SynthError> {
    if !(b > 0.0 && b <= 1.0) {
        return Err(SynthError::InvalidConfig(format!("bias factor {b} outside (0, 1]")));
    }
    if b == 1.0 {
        return Ok(flows.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factors: std::collections::BTreeMap<(usize, usize), f64> = groups
        .disadvantaged
        .iter()
        .map(|&pair| (pair, rng.gen_range(b..=1.0)))
        .collect();
    flows
        .map_entries(|o, d, v| factors.get(&(o, d)).map_or(v, |f| f * v))
        .map_err(|e| SynthError::Model(e.into()))
}
