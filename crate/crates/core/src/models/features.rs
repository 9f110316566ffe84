//! Pair features for the neural models.
//!
//! Non-linear gravity sees `[ln(1+pop_i), ln(1+pop_j), d_ij]`; deep gravity
//! appends `ln(1+poi_i)` and `ln(1+poi_j)`. Features are standardized with
//! moments taken over the training origins' candidate pairs.

use serde::{Deserialize, Serialize};

use super::{ModelError, ModelKind};
use crate::geodata::Tessellation;

/// Feature count for non-linear gravity.
pub const NLG_FEATURES: usize = 3;

/// Per-coordinate affine standardization `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population moments of `rows`; constant coordinates get `std = 1`.
    pub fn fit<'a, I>(dim: usize, rows: I) -> Self
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        let mut n = 0.0;
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        for row in &rows {
            for (s, x) in sum.iter_mut().zip(row.iter()) {
                *s += x;
            }
            n += 1.0;
        }
        let mean: Vec<f64> = sum.iter().map(|s| if n > 0.0 { s / n } else { 0.0 }).collect();
        for row in &rows {
            for ((q, x), m) in sq.iter_mut().zip(row.iter()).zip(&mean) {
                *q += (x - m) * (x - m);
            }
        }
        let std = sq
            .iter()
            .map(|q| {
                let s = if n > 0.0 { (q / n).sqrt() } else { 0.0 };
                if s > 0.0 && s.is_finite() {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, x: &mut [f64]) {
        for ((v, m), s) in x.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Feature map of a neural model kind together with its standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpace {
    pub kind: ModelKind,
    pub standardizer: Standardizer,
}

impl FeatureSpace {
    /// Feature length `kind` produces on `tess`.
    pub fn dim_for(kind: ModelKind, tess: &Tessellation) -> Result<usize, ModelError> {
        match kind {
            ModelKind::NonLinearGravity => Ok(NLG_FEATURES),
            ModelKind::DeepGravity if tess.poi_dim() == 0 => Err(ModelError::MissingPoi(kind)),
            ModelKind::DeepGravity => Ok(NLG_FEATURES + 2 * tess.poi_dim()),
            _ => Err(ModelError::NotNeural { kind }),
        }
    }

    /// Unstandardized features of the pair `(i, j)`.
    pub fn raw(kind: ModelKind, tess: &Tessellation, i: usize, j: usize) -> Result<Vec<f64>, ModelError> {
        let dim = Self::dim_for(kind, tess)?;
        let (zi, zj) = (tess.zone(i), tess.zone(j));
        let mut x = Vec::with_capacity(dim);
        x.push(zi.population.ln_1p());
        x.push(zj.population.ln_1p());
        x.push(tess.distance(i, j));
        if kind == ModelKind::DeepGravity {
            x.extend(zi.poi.iter().map(|v| v.ln_1p()));
            x.extend(zj.poi.iter().map(|v| v.ln_1p()));
        }
        Ok(x)
    }

    /// Fits the standardization on every candidate pair `(i, j != i)` of `origins`.
    pub fn fit(kind: ModelKind, tess: &Tessellation, origins: &[usize]) -> Result<Self, ModelError> {
        let dim = Self::dim_for(kind, tess)?;
        let mut rows = Vec::new();
        for &i in origins {
            for j in (0..tess.len()).filter(|&j| j != i) {
                rows.push(Self::raw(kind, tess, i, j)?);
            }
        }
        Ok(FeatureSpace {
            kind,
            standardizer: Standardizer::fit(dim, rows.iter().map(Vec::as_slice)),
        })
    }

    pub fn dim(&self) -> usize {
        self.standardizer.dim()
    }

    /// Fails when `tess` produces a different feature length than this space was fitted on.
    pub fn check(&self, tess: &Tessellation) -> Result<(), ModelError> {
        let found = Self::dim_for(self.kind, tess)?;
        if found != self.dim() {
            return Err(ModelError::FeatureMismatch {
                expected: self.dim(),
                found,
            });
        }
        Ok(())
    }

    /// Standardized features of `(i, j)`.
    pub fn features(&self, tess: &Tessellation, i: usize, j: usize) -> Result<Vec<f64>, ModelError> {
        let mut x = Self::raw(self.kind, tess, i, j)?;
        if x.len() != self.dim() {
            return Err(ModelError::FeatureMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        self.standardizer.apply(&mut x);
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodata::{SviScores, Zone};

    fn tess(poi_dim: usize) -> Tessellation {
        let zones = (0..6)
            .map(|k| Zone {
                id: format!("z{k}"),
                lon: 0.01 * k as f64,
                lat: 0.02 * ((k * k) % 5) as f64,
                population: 10.0 + 7.0 * k as f64,
                svi: SviScores([0.5; 5]),
                poi: (0..poi_dim).map(|p| (k * (p + 2)) as f64).collect(),
            })
            .collect();
        Tessellation::new(zones, (0..poi_dim).map(|p| format!("p{p}")).collect()).unwrap()
    }

    #[test]
    fn feature_lengths() {
        let t = tess(4);
        assert_eq!(FeatureSpace::raw(ModelKind::NonLinearGravity, &t, 0, 1).unwrap().len(), 3);
        assert_eq!(FeatureSpace::raw(ModelKind::DeepGravity, &t, 0, 1).unwrap().len(), 3 + 2 * 4);
        assert_eq!(FeatureSpace::raw(ModelKind::NonLinearGravity, &tess(0), 0, 1).unwrap().len(), 3);
    }

    #[test]
    fn deep_gravity_needs_poi() {
        assert!(matches!(
            FeatureSpace::fit(ModelKind::DeepGravity, &tess(0), &[0, 1]),
            Err(ModelError::MissingPoi(_))
        ));
        assert!(matches!(
            FeatureSpace::fit(ModelKind::Gravity, &tess(0), &[0]),
            Err(ModelError::NotNeural { .. })
        ));
    }

    #[test]
    fn standardized_training_moments() {
        let t = tess(2);
        let origins: Vec<usize> = (0..t.len()).collect();
        let space = FeatureSpace::fit(ModelKind::DeepGravity, &t, &origins).unwrap();
        let rows: Vec<Vec<f64>> = origins
            .iter()
            .flat_map(|&i| (0..t.len()).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| space.features(&t, i, j).unwrap())
            .collect();
        let n = rows.len() as f64;
        for c in 0..space.dim() {
            let mean = rows.iter().map(|r| r[c]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-9, "coordinate {c} mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "coordinate {c} variance {var}");
        }
    }
}
