//! Singly-constrained gravity model: `p(j|i) ∝ pop_j^gamma * f(d_ij)` over `j != i`.

use serde::{Deserialize, Serialize};

use super::{generate_rows, normalize, ModelError};
use crate::geodata::{FlowMatrix, Tessellation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Deterrence {
    /// `f(d) = d^-beta`
    Power,
    /// `f(d) = exp(-beta * d)`
    Exponential,
}

impl Deterrence {
    /// `g(d)` with `ln f(d) = -beta * g(d)`.
    fn transform(self, d: f64) -> f64 {
        match self {
            Deterrence::Power => d.ln(),
            Deterrence::Exponential => d,
        }
    }
}

impl std::str::FromStr for Deterrence {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "power" | "pow" => Ok(Deterrence::Power),
            "exponential" | "exp" => Ok(Deterrence::Exponential),
            _ => Err(format!("unknown deterrence `{s}` (expected power or exponential)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GravityParams {
    pub gamma: f64,
    pub beta: f64,
    pub deterrence: Deterrence,
}

impl GravityParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.gamma.is_finite() || !self.beta.is_finite() || self.beta <= 0.0 {
            return Err(ModelError::InvalidParams(format!(
                "gamma = {}, beta = {} (beta must be > 0, both finite)",
                self.gamma, self.beta
            )));
        }
        Ok(())
    }
}

/// Destination candidates of one origin as `(j, ln pop_j, g(d_ij))`.
fn candidates(tess: &Tessellation, i: usize, deterrence: Deterrence) -> Result<Vec<(usize, f64, f64)>, ModelError> {
    let mut out = Vec::with_capacity(tess.len().saturating_sub(1));
    for j in (0..tess.len()).filter(|&j| j != i) {
        let zone = tess.zone(j);
        if zone.population <= 0.0 {
            return Err(ModelError::NonPositivePopulation(zone.id.clone()));
        }
        let d = tess.distance(i, j);
        if deterrence == Deterrence::Power && d <= 0.0 {
            return Err(ModelError::ZeroDistance {
                origin: tess.zone(i).id.clone(),
                destination: zone.id.clone(),
            });
        }
        out.push((j, zone.population.ln(), deterrence.transform(d)));
    }
    Ok(out)
}

/// Destination probabilities `p(j|i)` for `j != i`, in index order.
pub fn gravity_probabilities(
    params: &GravityParams,
    tess: &Tessellation,
    origin: usize,
) -> Result<Vec<(usize, f64)>, ModelError> {
    let cands = candidates(tess, origin, params.deterrence)?;
    let utils: Vec<f64> = cands
        .iter()
        .map(|&(_, log_mass, g)| params.gamma * log_mass - params.beta * g)
        .collect();
    let max = utils.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<(usize, f64)> = cands
        .iter()
        .zip(&utils)
        .map(|(&(j, _, _), &u)| (j, (u - max).exp()))
        .collect();
    if !normalize(&mut weights) {
        return Err(ModelError::ZeroProbability(tess.zone(origin).id.clone()));
    }
    Ok(weights)
}

/// Generates `T_i * p(j|i)` for every origin with positive outflow.
pub fn generate_gravity(
    params: &GravityParams,
    tess: &Tessellation,
    outflows: &[f64],
) -> Result<FlowMatrix, ModelError> {
    params.validate()?;
    generate_rows(tess, outflows, |i| gravity_probabilities(params, tess, i))
}

/// Outcome of a gravity calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GravityFit {
    pub params: GravityParams,
    /// Mean log-likelihood per trip at the optimum.
    pub log_likelihood: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

const MAX_ITERATIONS: usize = 10_000;
const GRAD_TOLERANCE: f64 = 1e-8;

/// One origin's destination choice data for the likelihood.
struct Choice {
    total: f64,
    /// `(ln pop_j, g(d_ij), y_ij)` for every candidate
    cands: Vec<(f64, f64, f64)>,
}

struct Likelihood {
    choices: Vec<Choice>,
    total: f64,
}

struct Eval {
    value: f64,
    grad: [f64; 2],
    hessian: [f64; 3],
}

impl Likelihood {
    /// Mean log-likelihood, gradient w.r.t. `(gamma, beta)` and the Hessian entries `(gg, gb, bb)`.
    fn eval(&self, gamma: f64, beta: f64) -> Eval {
        let mut value = 0.0;
        let mut grad = [0.0; 2];
        let mut h = [0.0; 3];
        for c in &self.choices {
            let utils: Vec<f64> = c.cands.iter().map(|&(a, g, _)| gamma * a - beta * g).collect();
            let max = utils.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = utils.iter().map(|u| (u - max).exp()).collect();
            let z: f64 = weights.iter().sum();
            let lse = max + z.ln();
            let (mut ea, mut eg) = (0.0, 0.0);
            for (&(a, g, _), w) in c.cands.iter().zip(&weights) {
                let q = w / z;
                ea += q * a;
                eg += q * g;
            }
            let (mut vaa, mut vag, mut vgg) = (0.0, 0.0, 0.0);
            for ((&(a, g, y), u), w) in c.cands.iter().zip(&utils).zip(&weights) {
                let q = w / z;
                if y > 0.0 {
                    value += y * (u - lse);
                    grad[0] += y * (a - ea);
                    grad[1] -= y * (g - eg);
                }
                vaa += q * (a - ea) * (a - ea);
                vag += q * (a - ea) * (g - eg);
                vgg += q * (g - eg) * (g - eg);
            }
            h[0] -= c.total * vaa;
            h[1] += c.total * vag;
            h[2] -= c.total * vgg;
        }
        let n = self.total;
        Eval {
            value: value / n,
            grad: [grad[0] / n, grad[1] / n],
            hessian: [h[0] / n, h[1] / n, h[2] / n],
        }
    }
}

/// Calibrates `(gamma, beta)` by maximum likelihood of the observed destination choices.
///
/// Ascent on the mean log-likelihood per trip, starting from `(1, 1)`. Each
/// step follows the gradient preconditioned by the inverse Hessian (the
/// likelihood is concave) with Armijo backtracking; stops when the gradient
/// inf-norm drops below `1e-8`, or fails after 10,000 iterations.
pub fn fit_gravity(real: &FlowMatrix, tess: &Tessellation, deterrence: Deterrence) -> Result<GravityFit, ModelError> {
    let mut choices = Vec::new();
    let mut rich_origins = 0;
    for i in 0..tess.len() {
        let observed: Vec<(usize, f64)> = real.row(i).filter(|&(j, _)| j != i).collect();
        if observed.is_empty() {
            continue;
        }
        if observed.len() >= 2 {
            rich_origins += 1;
        }
        let mut y = vec![0.0; tess.len()];
        for &(j, v) in &observed {
            y[j] = v;
        }
        let cands = candidates(tess, i, deterrence)?
            .into_iter()
            .map(|(j, a, g)| (a, g, y[j]))
            .collect();
        choices.push(Choice {
            total: observed.iter().map(|(_, v)| v).sum(),
            cands,
        });
    }
    if rich_origins < 2 {
        return Err(ModelError::InsufficientData(format!(
            "{rich_origins} origin(s) with at least two positive destination flows, need 2"
        )));
    }
    let total = choices.iter().map(|c| c.total).sum();
    let lik = Likelihood { choices, total };

    let (mut gamma, mut beta) = (1.0, 1.0);
    let mut eval = lik.eval(gamma, beta);
    check_identifiable(&lik, &eval)?;

    let mut step: f64 = 1.0;
    let mut iterations = 0;
    loop {
        let grad_norm = eval.grad[0].abs().max(eval.grad[1].abs());
        if grad_norm < GRAD_TOLERANCE {
            break;
        }
        if iterations == MAX_ITERATIONS {
            return Err(ModelError::NonConvergence { iterations, grad_norm });
        }
        iterations += 1;
        let dir = ascent_direction(&eval);
        let slope = dir[0] * eval.grad[0] + dir[1] * eval.grad[1];
        step = (step * 2.0).min(1.0);
        let next = loop {
            let (g2, b2) = (gamma + step * dir[0], beta + step * dir[1]);
            if b2 > 0.0 {
                let cand = lik.eval(g2, b2);
                if cand.value >= eval.value + 1e-4 * step * slope {
                    break Some((g2, b2, cand));
                }
            }
            step *= 0.5;
            if step < 1e-20 {
                break None;
            }
        };
        match next {
            Some((g2, b2, cand)) => {
                gamma = g2;
                beta = b2;
                eval = cand;
            }
            None => return Err(ModelError::NonConvergence { iterations, grad_norm }),
        }
    }
    let params = GravityParams {
        gamma,
        beta,
        deterrence,
    };
    params.validate()?;
    Ok(GravityFit {
        params,
        log_likelihood: eval.value,
        iterations,
        grad_norm: eval.grad[0].abs().max(eval.grad[1].abs()),
    })
}

/// Newton direction `-H^-1 g` when the Hessian is negative definite, else the gradient.
fn ascent_direction(eval: &Eval) -> [f64; 2] {
    let [hgg, hgb, hbb] = eval.hessian;
    let det = hgg * hbb - hgb * hgb;
    let [g0, g1] = eval.grad;
    if hgg < 0.0 && det > 0.0 {
        let d = [-(hbb * g0 - hgb * g1) / det, -(-hgb * g0 + hgg * g1) / det];
        if d[0] * g0 + d[1] * g1 > 0.0 && d.iter().all(|v| v.is_finite()) {
            return d;
        }
    }
    eval.grad
}

/// Rejects inputs whose likelihood is flat along some direction in `(gamma, beta)`.
fn check_identifiable(lik: &Likelihood, eval: &Eval) -> Result<(), ModelError> {
    let [hgg, hgb, hbb] = eval.hessian;
    let scale = |f: fn(&(f64, f64, f64)) -> f64| {
        let mut s = 0.0;
        let mut n = 0.0;
        for c in &lik.choices {
            for cand in &c.cands {
                s += f(cand).powi(2);
                n += 1.0;
            }
        }
        1.0 + s / n
    };
    let tol = 1e-12;
    let (sa, sg) = (scale(|c| c.0), scale(|c| c.1));
    if -hgg <= tol * sa {
        return Err(ModelError::Degenerate("gamma (all candidate destinations share one mass)".into()));
    }
    if -hbb <= tol * sg {
        return Err(ModelError::Degenerate("beta (all candidate destinations are equidistant)".into()));
    }
    if hgg * hbb - hgb * hgb <= 1e-10 * hgg * hbb {
        return Err(ModelError::Degenerate("a combination of gamma and beta (mass and distance are collinear)".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodata::{SviScores, Zone};

    fn zone(id: &str, lon: f64, lat: f64, pop: f64) -> Zone {
        Zone {
            id: id.into(),
            lon,
            lat,
            population: pop,
            svi: SviScores([0.5; 5]),
            poi: vec![],
        }
    }

    fn km_to_deg(km: f64) -> f64 {
        km / (crate::geodata::EARTH_RADIUS_KM * std::f64::consts::PI / 180.0)
    }

    #[test]
    fn symmetric_split() {
        let tess = Tessellation::new(
            vec![zone("o", 0.0, 0.0, 10.0), zone("a", 0.0, 0.01, 7.0), zone("b", 0.0, -0.01, 7.0)],
            vec![],
        )
        .unwrap();
        let params = GravityParams {
            gamma: 1.0,
            beta: 2.0,
            deterrence: Deterrence::Power,
        };
        let flows = generate_gravity(&params, &tess, &[10.0, 0.0, 0.0]).unwrap();
        assert!((flows.get(0, 1) - 5.0).abs() < 1e-12);
        assert!((flows.get(0, 2) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn hand_evaluated_kernel() {
        // weights 100/1 and 100/2 normalize to 2/3 and 1/3
        let tess = Tessellation::new(
            vec![
                zone("o", 0.0, 0.0, 10.0),
                zone("a", 0.0, km_to_deg(1.0), 100.0),
                zone("b", 0.0, -km_to_deg(2.0), 100.0),
            ],
            vec![],
        )
        .unwrap();
        let params = GravityParams {
            gamma: 1.0,
            beta: 1.0,
            deterrence: Deterrence::Power,
        };
        let flows = generate_gravity(&params, &tess, &[90.0, 0.0, 0.0]).unwrap();
        assert!((flows.get(0, 1) - 60.0).abs() < 1e-9);
        assert!((flows.get(0, 2) - 30.0).abs() < 1e-9);
        assert_eq!(flows.get(0, 0), 0.0);
    }

    #[test]
    fn zero_distance_under_power_is_an_error() {
        let tess = Tessellation::new(
            vec![zone("o", 0.0, 0.0, 1.0), zone("twin", 0.0, 0.0, 1.0), zone("c", 1.0, 0.0, 1.0)],
            vec![],
        )
        .unwrap();
        let params = GravityParams {
            gamma: 1.0,
            beta: 1.0,
            deterrence: Deterrence::Power,
        };
        match generate_gravity(&params, &tess, &[1.0, 0.0, 0.0]) {
            Err(ModelError::ZeroDistance { origin, destination }) => {
                assert_eq!((origin.as_str(), destination.as_str()), ("o", "twin"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let exp = GravityParams {
            deterrence: Deterrence::Exponential,
            ..params
        };
        assert!(generate_gravity(&exp, &tess, &[1.0, 0.0, 0.0]).is_ok());
    }

    #[test]
    fn flat_likelihood_is_degenerate() {
        // three equal-mass zones equally spaced on the equator, equal flows everywhere
        let tess = Tessellation::new(
            vec![zone("a", 0.0, 0.0, 5.0), zone("b", 120.0, 0.0, 5.0), zone("c", -120.0, 0.0, 5.0)],
            vec![],
        )
        .unwrap();
        let real = FlowMatrix::from_entries(
            3,
            (0..3).flat_map(|i| (0..3).filter(move |&j| j != i).map(move |j| (i, j, 4.0))),
        )
        .unwrap();
        for det in [Deterrence::Power, Deterrence::Exponential] {
            assert!(matches!(fit_gravity(&real, &tess, det), Err(ModelError::Degenerate(_))));
        }
    }

    #[test]
    fn too_few_origins() {
        let tess = Tessellation::new(
            vec![zone("a", 0.0, 0.0, 5.0), zone("b", 0.1, 0.0, 3.0), zone("c", 0.0, 0.3, 5.0)],
            vec![],
        )
        .unwrap();
        let real = FlowMatrix::from_entries(3, [(0, 1, 1.0), (0, 2, 2.0), (1, 0, 1.0)]).unwrap();
        assert!(matches!(
            fit_gravity(&real, &tess, Deterrence::Power),
            Err(ModelError::InsufficientData(_))
        ));
    }

    #[test]
    fn power_law_invariant_to_distance_rescaling() {
        let zones = |s: f64| {
            vec![
                zone("o", 0.0, 0.0, 10.0),
                zone("a", 0.0, 0.01 * s, 30.0),
                zone("b", 0.02 * s, 0.0, 20.0),
                zone("c", -0.015 * s, 0.01 * s, 25.0),
            ]
        };
        let params = GravityParams {
            gamma: 0.8,
            beta: 1.7,
            deterrence: Deterrence::Power,
        };
        let p1 = gravity_probabilities(&params, &Tessellation::new(zones(1.0), vec![]).unwrap(), 0).unwrap();
        let p3 = gravity_probabilities(&params, &Tessellation::new(zones(3.0), vec![]).unwrap(), 0).unwrap();
        for ((_, a), (_, b)) in p1.iter().zip(&p3) {
            // haversine is only approximately linear in the angle at this scale
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }
}
