#![allow(dead_code)]

use flowfair::geodata::{SviScores, Tessellation, Zone};
use flowfair::FlowMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random zones scattered over roughly 20 km with the given POI dimension.
pub fn random_tess(rng: &mut ChaCha8Rng, n: usize, poi_dim: usize) -> Tessellation {
    let zones = (0..n)
        .map(|k| Zone {
            id: format!("z{k:03}"),
            lon: rng.gen_range(-0.1..0.1),
            lat: rng.gen_range(-0.1..0.1),
            population: rng.gen_range(10.0..5000.0),
            svi: SviScores([(); 5].map(|_| rng.gen_range(0.0..=1.0))),
            poi: (0..poi_dim).map(|_| rng.gen_range(0.0..40.0f64).floor()).collect(),
        })
        .collect();
    Tessellation::new(zones, (0..poi_dim).map(|p| format!("f{p}")).collect()).unwrap()
}

/// Random sparse flows with roughly `density` of pairs populated.
pub fn random_flows(rng: &mut ChaCha8Rng, n: usize, density: f64) -> FlowMatrix {
    let mut entries = Vec::new();
    for o in 0..n {
        for d in 0..n {
            if rng.gen_bool(density) {
                entries.push((o, d, rng.gen_range(0.01..100.0)));
            }
        }
    }
    FlowMatrix::from_entries(n, entries).unwrap()
}

pub fn dense(m: &FlowMatrix) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; m.n_zones()]; m.n_zones()];
    for (o, d, v) in m.iter() {
        out[o][d] = v;
    }
    out
}

/// CPC evaluated straight from the definition over every cell of two dense matrices.
pub fn dense_cpc(g: &[Vec<f64>], r: &[Vec<f64>], include: impl Fn(usize, usize) -> bool) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..g.len() {
        for j in 0..g.len() {
            if include(i, j) {
                num += g[i][j].min(r[i][j]);
                den += g[i][j] + r[i][j];
            }
        }
    }
    2.0 * num / den
}

pub fn relative_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}
