//! Demographic-parity audit of generated flows.
//!
//! OD pairs are split by SVI band: advantaged pairs have both endpoints at or
//! below the first quartile of a theme's percentile, disadvantaged pairs have
//! both at or above the third quartile. Per-origin CPC samples inside each
//! group are binned into smoothed histograms, and the KL divergence between
//! the two histograms is the fairness score (0 = equal accuracy).

mod report;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodata::{FlowMatrix, Tessellation};
use crate::metrics::{cpc_per_origin, CpcSample, MetricError, PairSet, Pairs};

pub use crate::geodata::SviTheme;
pub use report::{
    audit, render_csv, render_markdown, Cell, FairnessReport, ModelSummary, ReportMeta, ThemeRow, MEAN_CPC_SHOWN,
    REPORT_FORMAT_VERSION,
};

#[derive(Debug, Error)]
pub enum FairnessError {
    #[error("theme {theme}: fewer than 4 distinct percentile values, quartiles are degenerate")]
    DegenerateQuartiles { theme: SviTheme },
    #[error("theme {theme}: {group} group is empty")]
    EmptyGroup { theme: SviTheme, group: Group },
    #[error("theme {theme}: {group} group has no origin with a defined CPC")]
    NoValidSamples { theme: SviTheme, group: Group },
    #[error("cannot estimate a distribution from zero samples")]
    EmptySamples,
    #[error("histogram needs at least 2 bins, got {0}")]
    InvalidBins(usize),
    #[error("smoothing mass must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("distributions have {0} and {1} bins")]
    BinMismatch(usize, usize),
    #[error("invalid distribution: {0}")]
    InvalidDist(String),
    #[error("audit needs at least one model")]
    NoModels,
    #[error("model `{model}`, theme {theme}: {source}")]
    Cell {
        model: String,
        theme: SviTheme,
        #[source]
        source: Box<FairnessError>,
    },
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Advantaged,
    Disadvantaged,
}

impl std::fmt::Display for Group {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Group::Advantaged => "advantaged",
            Group::Disadvantaged => "disadvantaged",
        })
    }
}

/// Advantaged (`S`) and disadvantaged (`S'`) OD pairs for one theme.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupAssignment {
    pub theme: SviTheme,
    pub advantaged: PairSet,
    pub disadvantaged: PairSet,
    pub q1: f64,
    pub q3: f64,
}

/// Quantile by linear interpolation between order statistics (R type 7).
/// `sorted` must be ascending and non-empty.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Splits the off-diagonal support of `real` into SVI quartile bands of `theme`.
pub fn assign_groups(tess: &Tessellation, theme: SviTheme, real: &FlowMatrix) -> Result<GroupAssignment, FairnessError> {
    let mut present = vec![false; tess.len()];
    for (o, d, _) in real.iter() {
        present[o] = true;
        present[d] = true;
    }
    let mut values: Vec<f64> = (0..tess.len())
        .filter(|&i| present[i])
        .map(|i| tess.zone(i).svi.get(theme))
        .collect();
    values.sort_by(f64::total_cmp);
    let mut distinct = values.clone();
    distinct.dedup();
    if distinct.len() < 4 {
        return Err(FairnessError::DegenerateQuartiles { theme });
    }
    let q1 = quantile(&values, 0.25);
    let q3 = quantile(&values, 0.75);
    if q1 >= q3 {
        return Err(FairnessError::DegenerateQuartiles { theme });
    }
    let svi = |i: usize| tess.zone(i).svi.get(theme);
    let mut advantaged = PairSet::new();
    let mut disadvantaged = PairSet::new();
    for (o, d, _) in real.iter().filter(|&(o, d, _)| o != d) {
        if svi(o) <= q1 && svi(d) <= q1 {
            advantaged.insert((o, d));
        } else if svi(o) >= q3 && svi(d) >= q3 {
            disadvantaged.insert((o, d));
        }
    }
    if advantaged.is_empty() {
        return Err(FairnessError::EmptyGroup {
            theme,
            group: Group::Advantaged,
        });
    }
    if disadvantaged.is_empty() {
        return Err(FairnessError::EmptyGroup {
            theme,
            group: Group::Disadvantaged,
        });
    }
    Ok(GroupAssignment {
        theme,
        advantaged,
        disadvantaged,
        q1,
        q3,
    })
}

/// Smoothed histogram over `[0, 1]` with uniform bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbDist {
    pub masses: Vec<f64>,
    pub count: usize,
}

impl ProbDist {
    /// Wraps explicit masses; they must be positive and sum to one within 1e-12.
    pub fn from_masses(masses: Vec<f64>) -> Result<Self, FairnessError> {
        if masses.len() < 2 {
            return Err(FairnessError::InvalidBins(masses.len()));
        }
        if masses.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(FairnessError::InvalidDist("masses must be positive".into()));
        }
        let sum: f64 = masses.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(FairnessError::InvalidDist(format!("masses sum to {sum}")));
        }
        Ok(ProbDist { masses, count: 0 })
    }

    pub fn bins(&self) -> usize {
        self.masses.len()
    }

    /// Bin edges `0, 1/B, ..., 1`.
    pub fn edges(&self) -> Vec<f64> {
        let b = self.bins();
        (0..=b).map(|k| k as f64 / b as f64).collect()
    }
}

/// Bin of `x` among `bins` uniform bins on `[0, 1]`; 1.0 falls in the last bin.
pub fn bin_index(x: f64, bins: usize) -> usize {
    ((x * bins as f64).floor().max(0.0) as usize).min(bins - 1)
}

/// Histogram of sample CPCs with `epsilon` added to every bin count before normalizing.
pub fn estimate_dist(samples: &[CpcSample], bins: usize, epsilon: f64) -> Result<ProbDist, FairnessError> {
    if bins < 2 {
        return Err(FairnessError::InvalidBins(bins));
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(FairnessError::InvalidEpsilon(epsilon));
    }
    if samples.is_empty() {
        return Err(FairnessError::EmptySamples);
    }
    let mut counts = vec![epsilon; bins];
    for s in samples {
        counts[bin_index(s.cpc, bins)] += 1.0;
    }
    let total = samples.len() as f64 + epsilon * bins as f64;
    Ok(ProbDist {
        masses: counts.into_iter().map(|c| c / total).collect(),
        count: samples.len(),
    })
}

/// `Σ_b p_b ln(p_b / q_b)` in nats.
pub fn kl_divergence(p: &ProbDist, q: &ProbDist) -> Result<f64, FairnessError> {
    if p.bins() != q.bins() {
        return Err(FairnessError::BinMismatch(p.bins(), q.bins()));
    }
    Ok(p.masses
        .iter()
        .zip(&q.masses)
        .map(|(a, b)| a * (a / b).ln())
        .sum())
}

/// Which group's distribution is the first KL argument.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// `KL(P(CPC, S') || P(CPC, S))`
    #[default]
    DisadvantagedFirst,
    /// `KL(P(CPC, S) || P(CPC, S'))`
    AdvantagedFirst,
}

impl std::str::FromStr for KlDirection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "disadvantaged-first" | "disadvantaged_first" => Ok(KlDirection::DisadvantagedFirst),
            "advantaged-first" | "advantaged_first" => Ok(KlDirection::AdvantagedFirst),
            _ => Err(format!(
                "unknown KL direction `{s}` (expected disadvantaged-first or advantaged-first)"
            )),
        }
    }
}

/// Histogram and direction settings of a fairness evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub bins: usize,
    pub epsilon: f64,
    pub direction: KlDirection,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            bins: 10,
            epsilon: 0.5,
            direction: KlDirection::DisadvantagedFirst,
        }
    }
}

/// Fairness score of one model under one theme, with its diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThemeScore {
    /// KL divergence in the configured direction.
    pub score: f64,
    /// `KL(S'||S) + KL(S||S')`
    pub symmetric: f64,
    pub advantaged_samples: usize,
    pub disadvantaged_samples: usize,
    pub advantaged_skipped: usize,
    pub disadvantaged_skipped: usize,
}

/// KL divergence between the disadvantaged and advantaged per-origin CPC distributions.
pub fn fairness_score(
    generated: &FlowMatrix,
    real: &FlowMatrix,
    tess: &Tessellation,
    groups: &GroupAssignment,
    cfg: &ScoreConfig,
) -> Result<ThemeScore, FairnessError> {
    let theme = groups.theme;
    let adv = cpc_per_origin(generated, real, tess, Pairs::Only(&groups.advantaged))?;
    let dis = cpc_per_origin(generated, real, tess, Pairs::Only(&groups.disadvantaged))?;
    if adv.samples.is_empty() {
        return Err(FairnessError::NoValidSamples {
            theme,
            group: Group::Advantaged,
        });
    }
    if dis.samples.is_empty() {
        return Err(FairnessError::NoValidSamples {
            theme,
            group: Group::Disadvantaged,
        });
    }
    let p_adv = estimate_dist(&adv.samples, cfg.bins, cfg.epsilon)?;
    let p_dis = estimate_dist(&dis.samples, cfg.bins, cfg.epsilon)?;
    let dis_first = kl_divergence(&p_dis, &p_adv)?;
    let adv_first = kl_divergence(&p_adv, &p_dis)?;
    Ok(ThemeScore {
        score: match cfg.direction {
            KlDirection::DisadvantagedFirst => dis_first,
            KlDirection::AdvantagedFirst => adv_first,
        },
        symmetric: dis_first + adv_first,
        advantaged_samples: adv.samples.len(),
        disadvantaged_samples: dis.samples.len(),
        advantaged_skipped: adv.skipped,
        disadvantaged_skipped: dis.skipped,
    })
}
