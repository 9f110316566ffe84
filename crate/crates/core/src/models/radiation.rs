//! Parameter-free radiation model with the finite-size correction.
//!
//! `p(j|i) = 1/(1 - m_i/M) * m_i m_j / ((m_i + s_ij)(m_i + m_j + s_ij))`
//! where `s_ij` is the population strictly closer to `i` than `j` is,
//! excluding `i` and `j`, and `M` the total population.

use super::{generate_rows, ModelError};
use crate::geodata::{FlowMatrix, Tessellation};

/// Destination probabilities `p(j|i)` for `j != i`, in index order.
///
/// Without distance ties the finite-size factor makes the row sum to one
/// exactly (the sum telescopes). Zones tied at the same distance are not
/// counted in each other's `s_ij`, which breaks the telescoping, so rows are
/// renormalized explicitly.
pub fn radiation_probabilities(tess: &Tessellation, origin: usize) -> Result<Vec<(usize, f64)>, ModelError> {
    let n = tess.len();
    if n < 2 {
        return Err(ModelError::InsufficientData("radiation needs at least two zones".into()));
    }
    let m_i = tess.zone(origin).population;
    let total = tess.total_population();
    if total - m_i <= 0.0 {
        return Err(ModelError::SingularNormalization(tess.zone(origin).id.clone()));
    }
    let finite = 1.0 / (1.0 - m_i / total);

    let mut by_distance: Vec<(f64, usize)> = (0..n)
        .filter(|&j| j != origin)
        .map(|j| (tess.distance(origin, j), j))
        .collect();
    by_distance.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut probs = Vec::with_capacity(n - 1);
    let mut inside = 0.0;
    let mut k = 0;
    while k < by_distance.len() {
        let mut end = k;
        while end < by_distance.len() && by_distance[end].0 == by_distance[k].0 {
            end += 1;
        }
        for &(_, j) in &by_distance[k..end] {
            let m_j = tess.zone(j).population;
            let p = if m_i > 0.0 && m_j > 0.0 {
                finite * m_i * m_j / ((m_i + inside) * (m_i + m_j + inside))
            } else {
                0.0
            };
            probs.push((j, p));
        }
        inside += by_distance[k..end]
            .iter()
            .map(|&(_, j)| tess.zone(j).population)
            .sum::<f64>();
        k = end;
    }
    probs.sort_by_key(|&(j, _)| j);
    if !super::normalize(&mut probs) {
        return Err(ModelError::ZeroProbability(tess.zone(origin).id.clone()));
    }
    Ok(probs)
}

/// Generates `T_i * p(j|i)` for every origin with positive outflow.
pub fn generate_radiation(tess: &Tessellation, outflows: &[f64]) -> Result<FlowMatrix, ModelError> {
    generate_rows(tess, outflows, |i| radiation_probabilities(tess, i))
}
