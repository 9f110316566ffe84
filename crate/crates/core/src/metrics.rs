//! Common Part of Commuters.
//!
//! `CPC = 2 Σ min(ŷ_ij, y_ij) / (Σ ŷ_ij + Σ y_ij)` over a set of OD pairs,
//! with absent entries counting as zero. Per-origin CPC samples are the
//! population the fairness audit builds its histograms from.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodata::{FlowMatrix, Tessellation};

pub type OdPair = (usize, usize);
pub type PairSet = BTreeSet<OdPair>;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("flow matrices cover {0} and {1} zones")]
    ZoneMismatch(usize, usize),
    #[error("empty OD-pair restriction")]
    EmptyRestriction,
    #[error("CPC undefined: both flows are zero on the evaluated pairs")]
    Undefined,
    #[error("mean of an empty CPC sample list")]
    EmptySamples,
}

/// Which OD pairs a CPC evaluation covers.
#[derive(Debug, Clone, Copy)]
pub enum Pairs<'a> {
    /// Every pair in the union of both supports.
    All,
    /// The union of both supports without self-flows.
    OffDiagonal,
    /// Exactly these pairs.
    Only(&'a PairSet),
}

/// CPC of one evaluation unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpcSample {
    pub unit_id: String,
    pub origin: usize,
    pub cpc: f64,
    pub pair_count: usize,
}

#[derive(Default, Clone, Copy)]
struct Sums {
    min: f64,
    generated: f64,
    real: f64,
    pairs: usize,
}

impl Sums {
    fn add(&mut self, g: f64, r: f64) {
        self.min += g.min(r);
        self.generated += g;
        self.real += r;
        self.pairs += 1;
    }

    fn cpc(&self) -> Option<f64> {
        let denom = self.generated + self.real;
        (denom > 0.0).then(|| 2.0 * self.min / denom)
    }
}

fn check(generated: &FlowMatrix, real: &FlowMatrix) -> Result<(), MetricError> {
    if generated.n_zones() != real.n_zones() {
        return Err(MetricError::ZoneMismatch(generated.n_zones(), real.n_zones()));
    }
    Ok(())
}

/// Accumulates one origin's pairs under `pairs`.
fn origin_sums(generated: &FlowMatrix, real: &FlowMatrix, origin: usize, pairs: Pairs<'_>) -> Sums {
    let mut sums = Sums::default();
    match pairs {
        Pairs::Only(set) => {
            for &(_, d) in set.range((origin, 0)..(origin + 1, 0)) {
                sums.add(generated.get(origin, d), real.get(origin, d));
            }
        }
        Pairs::All | Pairs::OffDiagonal => {
            let dests: BTreeSet<usize> = generated
                .row(origin)
                .chain(real.row(origin))
                .map(|(d, _)| d)
                .filter(|&d| !(matches!(pairs, Pairs::OffDiagonal) && d == origin))
                .collect();
            for d in dests {
                sums.add(generated.get(origin, d), real.get(origin, d));
            }
        }
    }
    sums
}

/// Global CPC over the selected pairs.
pub fn cpc(generated: &FlowMatrix, real: &FlowMatrix, pairs: Pairs<'_>) -> Result<f64, MetricError> {
    check(generated, real)?;
    if let Pairs::Only(set) = pairs {
        if set.is_empty() {
            return Err(MetricError::EmptyRestriction);
        }
    }
    let mut total = Sums::default();
    for o in 0..real.n_zones() {
        let s = origin_sums(generated, real, o, pairs);
        total.min += s.min;
        total.generated += s.generated;
        total.real += s.real;
        total.pairs += s.pairs;
    }
    total.cpc().ok_or(MetricError::Undefined)
}

/// Per-origin CPC samples plus a tally of origins skipped for a zero denominator.
#[derive(Debug, Clone, PartialEq)]
pub struct OriginSamples {
    /// Sorted by unit id.
    pub samples: Vec<CpcSample>,
    pub skipped: usize,
}

/// One CPC sample per origin whose restricted flows are not all zero.
///
/// Origins with no pairs at all under the restriction are neither sampled
/// nor counted as skipped.
pub fn cpc_per_origin(
    generated: &FlowMatrix,
    real: &FlowMatrix,
    tess: &Tessellation,
    pairs: Pairs<'_>,
) -> Result<OriginSamples, MetricError> {
    check(generated, real)?;
    if let Pairs::Only(set) = pairs {
        if set.is_empty() {
            return Err(MetricError::EmptyRestriction);
        }
    }
    let mut samples = Vec::new();
    let mut skipped = 0;
    for o in 0..real.n_zones() {
        let s = origin_sums(generated, real, o, pairs);
        if s.pairs == 0 {
            continue;
        }
        match s.cpc() {
            Some(cpc) => samples.push(CpcSample {
                unit_id: tess.zone(o).id.clone(),
                origin: o,
                cpc,
                pair_count: s.pairs,
            }),
            None => skipped += 1,
        }
    }
    samples.sort_by(|a, b| a.unit_id.cmp(&b.unit_id));
    Ok(OriginSamples { samples, skipped })
}

/// Unweighted mean of sample CPCs.
pub fn mean_cpc(samples: &[CpcSample]) -> Result<f64, MetricError> {
    if samples.is_empty() {
        return Err(MetricError::EmptySamples);
    }
    Ok(samples.iter().map(|s| s.cpc).sum::<f64>() / samples.len() as f64)
}

/// CSV dump with header `unit_id,cpc,pair_count`.
pub fn samples_to_csv(samples: &[CpcSample]) -> String {
    let mut out = String::from("unit_id,cpc,pair_count\n");
    for s in samples {
        out.push_str(&format!("{},{},{}\n", s.unit_id, s.cpc, s.pair_count));
    }
    out
}

/// Every self-free pair in the union of both supports.
pub fn off_diagonal_support(a: &FlowMatrix, b: &FlowMatrix) -> PairSet {
    a.iter()
        .chain(b.iter())
        .filter(|&(o, d, _)| o != d)
        .map(|(o, d, _)| (o, d))
        .collect()
}
