//! Acceptance checks, one PASS/FAIL line each. Runs without the libtest
//! harness; exits non-zero if any check fails. `FLOWFAIR_BLESS=1` rewrites
//! the golden report instead of comparing against it.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use flowfair::fairness::{
    assign_groups, audit, estimate_dist, fairness_score, kl_divergence, render_markdown, ProbDist, ReportMeta,
    ScoreConfig, SviTheme,
};
use flowfair::metrics::{cpc, CpcSample, Pairs};
use flowfair::models::{
    fit_gravity, generate_gravity, generate_net, generate_radiation, loss_and_gradient, outflows, Deterrence,
    FeatureSpace, FeedForwardNet, GravityParams, ModelKind, NeuralModel,
};
use flowfair::synth::{inject_bias, make_city, SynthConfig};
use flowfair::{FlowMatrix, Tessellation};
use rand::Rng;

type Check = Result<String, String>;
type CheckFn = fn() -> Check;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || format!("took {:.2} s, limit {limit_s} s", elapsed.as_secs_f64()))
}

fn cpc_correctness() -> Check {
    let start = Instant::now();
    let mut rng = common::rng(1);
    let mut worst: f64 = 0.0;
    for k in 0..1000 {
        let n = rng.gen_range(10..=50);
        let (dens_g, dens_r) = (rng.gen_range(0.05..0.6), rng.gen_range(0.05..0.6));
        let g = common::random_flows(&mut rng, n, dens_g);
        let r = common::random_flows(&mut rng, n, dens_r);
        let (dg, dr) = (common::dense(&g), common::dense(&r));
        for (pairs, include) in [
            (Pairs::All, &(|_, _| true) as &dyn Fn(usize, usize) -> bool),
            (Pairs::OffDiagonal, &|i, j| i != j),
        ] {
            let sparse = cpc(&g, &r, pairs).map_err(|e| format!("pair {k}: {e}"))?;
            let dense = common::dense_cpc(&dg, &dr, include);
            ensure((0.0..=1.0).contains(&sparse), || format!("pair {k}: CPC {sparse} outside [0, 1]"))?;
            worst = worst.max((sparse - dense).abs());
        }
        ensure(cpc(&r, &r, Pairs::All).unwrap() == 1.0, || format!("pair {k}: CPC(y, y) != 1"))?;
    }
    ensure(worst <= 1e-12, || format!("sparse vs dense differ by {worst:e}"))?;
    within(start.elapsed(), 5.0)?;
    Ok(format!("1000 pairs, max |sparse - dense| = {worst:.1e}, {:.2} s", start.elapsed().as_secs_f64()))
}

fn cpc_hand_case() -> Check {
    // zones A, B, C = 0, 1, 2
    let g = FlowMatrix::from_entries(3, [(0, 1, 2.0), (0, 2, 1.0)]).unwrap();
    let r = FlowMatrix::from_entries(3, [(0, 1, 1.0), (0, 2, 3.0)]).unwrap();
    let v = cpc(&g, &r, Pairs::All).map_err(|e| e.to_string())?;
    ensure((v - 4.0 / 7.0).abs() <= 1e-12, || format!("got {v}, want 4/7"))?;
    Ok(format!("CPC = {v:.16}"))
}

fn random_dist(rng: &mut impl Rng) -> ProbDist {
    let samples: Vec<CpcSample> = (0..rng.gen_range(1..80))
        .map(|k| CpcSample {
            unit_id: k.to_string(),
            origin: k,
            cpc: rng.gen_range(0.0..=1.0f64).powf(rng.gen_range(0.2..4.0)),
            pair_count: 1,
        })
        .collect();
    estimate_dist(&samples, 10, 0.5).unwrap()
}

fn kl_properties() -> Check {
    let start = Instant::now();
    let mut rng = common::rng(2);
    let mut self_worst: f64 = 0.0;
    for k in 0..1000 {
        let p = random_dist(&mut rng);
        let q = random_dist(&mut rng);
        self_worst = self_worst.max(kl_divergence(&p, &p).unwrap().abs());
        let kl = kl_divergence(&p, &q).unwrap();
        ensure(kl >= 0.0, || format!("pair {k}: KL = {kl}"))?;
    }
    ensure(self_worst <= 1e-12, || format!("KL(p, p) up to {self_worst:e}"))?;
    let p = ProbDist::from_masses(vec![0.5, 0.5]).unwrap();
    let q = ProbDist::from_masses(vec![0.9, 0.1]).unwrap();
    let hand = kl_divergence(&p, &q).unwrap();
    ensure((hand - 0.5108).abs() <= 1e-4, || format!("KL([.5,.5] || [.9,.1]) = {hand}"))?;
    within(start.elapsed(), 1.0)?;
    Ok(format!("max KL(p, p) = {self_worst:.1e}, hand case {hand:.6}, {:.3} s", start.elapsed().as_secs_f64()))
}

fn random_outflows(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| if rng.gen_bool(0.85) { rng.gen_range(1.0..1e4) } else { 0.0 }).collect()
}

fn totals_match(flows: &FlowMatrix, want: &[f64]) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for (i, &t) in want.iter().enumerate() {
        let got = flows.origin_total(i);
        let err = if t == 0.0 { got.abs() } else { (got - t).abs() / t };
        worst = worst.max(err);
    }
    ensure(worst <= 1e-9, || format!("relative outflow error {worst:e}"))?;
    Ok(worst)
}

fn model_normalization() -> Check {
    let mut rng = common::rng(4);
    let mut worst: f64 = 0.0;
    for trial in 0..20 {
        let n = rng.gen_range(3..=100);
        let tess = common::random_tess(&mut rng, n, 3);
        let t = random_outflows(&mut rng, n);
        let params = GravityParams {
            gamma: rng.gen_range(0.2..2.0),
            beta: rng.gen_range(0.2..3.0),
            deterrence: if trial % 2 == 0 { Deterrence::Power } else { Deterrence::Exponential },
        };
        let label = |m: &str, e| format!("{m}, trial {trial}: {e}");
        worst = worst.max(totals_match(&generate_gravity(&params, &tess, &t).map_err(|e| label("gravity", e.to_string()))?, &t)?);
        worst = worst.max(totals_match(&generate_radiation(&tess, &t).map_err(|e| label("radiation", e.to_string()))?, &t)?);
        let origins: Vec<usize> = (0..n).collect();
        for kind in [ModelKind::NonLinearGravity, ModelKind::DeepGravity] {
            let space = FeatureSpace::fit(kind, &tess, &origins).unwrap();
            let model = NeuralModel {
                kind,
                net: FeedForwardNet::new(space.dim(), &[16, 8], trial),
                space,
            };
            let flows = generate_net(&model, &tess, &t).map_err(|e| label(kind.name(), e.to_string()))?;
            worst = worst.max(totals_match(&flows, &t)?);
        }
    }
    Ok(format!("20 instances x 4 generators, max relative error {worst:.1e}"))
}

fn radiation_hand_case() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("zones.csv");
    std::fs::write(
        &path,
        concat!(
            "zone_id,lon,lat,population,svi_total,svi_socioeconomic,svi_household,svi_ethnicity,svi_transportation\n",
            "i,0,0,100,0,0,0,0,0\nj,0.01,0,50,0,0,0,0,0\nk,-0.02,0,50,0,0,0,0,0\n",
        ),
    )
    .unwrap();
    let tess = flowfair::geodata::load_zones(&path).map_err(|e| e.to_string())?;
    let flows = generate_radiation(&tess, &[90.0, 0.0, 0.0]).map_err(|e| e.to_string())?;
    let (ij, ik) = (flows.get(0, 1), flows.get(0, 2));
    ensure((ij - 60.0).abs() <= 1e-9 && (ik - 30.0).abs() <= 1e-9, || format!("got {ij} / {ik}"))?;
    Ok(format!("T_ij = {ij:.12}, T_ik = {ik:.12}"))
}

fn gravity_recovery() -> Check {
    let start = Instant::now();
    let (tess, planted) = make_city(&SynthConfig { n: 10, seed: 7, ..SynthConfig::default() }).unwrap();
    let fit = fit_gravity(&planted, &tess, Deterrence::Power).map_err(|e| e.to_string())?;
    let p = fit.params;
    ensure((p.gamma - 1.0).abs() <= 0.05 && (p.beta - 2.0).abs() <= 0.10, || format!("gamma {} beta {}", p.gamma, p.beta))?;
    let generated = generate_gravity(&p, &tess, &outflows(&planted)).unwrap();
    let score = cpc(&generated, &planted, Pairs::OffDiagonal).unwrap();
    ensure(score >= 0.98, || format!("CPC {score}"))?;
    within(start.elapsed(), 30.0)?;
    Ok(format!(
        "gamma {:.6}, beta {:.6}, CPC {score:.6}, {:.2} s",
        p.gamma,
        p.beta,
        start.elapsed().as_secs_f64()
    ))
}

fn gradient_error(kind: ModelKind) -> f64 {
    let mut rng = common::rng(5);
    let tess = common::random_tess(&mut rng, 5, 2);
    let real = common::random_flows(&mut rng, 5, 0.8);
    let origins: Vec<usize> = (0..5).filter(|&i| real.row(i).any(|(j, _)| j != i)).collect();
    let space = FeatureSpace::fit(kind, &tess, &origins).unwrap();
    let mut model = NeuralModel {
        kind,
        net: FeedForwardNet::new(space.dim(), &[6, 4], 99),
        space,
    };
    let analytic = loss_and_gradient(&model, &real, &tess, &origins).unwrap().1.params();
    let base = model.net.params();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for k in 0..base.len() {
        let mut p = base.clone();
        p[k] = base[k] + h;
        model.net.set_params(&p);
        let up = loss_and_gradient(&model, &real, &tess, &origins).unwrap().0;
        p[k] = base[k] - h;
        model.net.set_params(&p);
        let down = loss_and_gradient(&model, &real, &tess, &origins).unwrap().0;
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic[k].abs().max(numeric.abs());
        if scale > 1e-7 {
            worst = worst.max((analytic[k] - numeric).abs() / scale);
        }
    }
    worst
}

fn gradient_check() -> Check {
    let nlg = gradient_error(ModelKind::NonLinearGravity);
    let dg = gradient_error(ModelKind::DeepGravity);
    ensure(nlg <= 1e-4 && dg <= 1e-4, || format!("max relative error nlg {nlg:e}, dg {dg:e}"))?;
    Ok(format!("max relative error nlg {nlg:.1e}, deepgravity {dg:.1e}"))
}

/// Planted city, fitted-gravity output and the Total-theme groups used to inject bias.
fn fixture(seed: u64) -> (Tessellation, FlowMatrix, FlowMatrix) {
    let (tess, real) = make_city(&SynthConfig { n: 10, seed, ..SynthConfig::default() }).unwrap();
    let fit = fit_gravity(&real, &tess, Deterrence::Power).unwrap();
    let generated = generate_gravity(&fit.params, &tess, &outflows(&real)).unwrap();
    (tess, real, generated)
}

fn audit_sensitivity() -> Check {
    let start = Instant::now();
    let cfg = ScoreConfig::default();
    let (tess, real, unbiased) = fixture(7);
    let total = assign_groups(&tess, SviTheme::Total, &real).unwrap();
    let biased = inject_bias(&unbiased, &total, 0.5, 7).unwrap();
    let meta = ReportMeta { dataset_id: "synthetic".into(), seed: Some(7), config_hash: "acceptance".into() };
    let report = audit(&[("unbiased", &unbiased), ("biased", &biased)], &real, &tess, &cfg, meta).map_err(|e| e.to_string())?;
    let mut worst_unbiased: f64 = 0.0;
    let mut min_biased = f64::INFINITY;
    for row in &report.themes {
        let (u, b) = (row.cells[0].score.score, row.cells[1].score.score);
        ensure(u <= 0.05, || format!("{}: unbiased score {u}", row.theme))?;
        ensure(b >= 5.0 * u && b > u, || format!("{}: biased {b} vs unbiased {u}", row.theme))?;
        ensure(row.fairest == ["unbiased"], || format!("{}: fairest {:?}", row.theme, row.fairest))?;
        worst_unbiased = worst_unbiased.max(u);
        min_biased = min_biased.min(b);
    }
    for seed in [7, 13, 99] {
        let (tess, real, generated) = fixture(seed);
        let total = assign_groups(&tess, SviTheme::Total, &real).unwrap();
        for theme in SviTheme::ALL {
            let groups = assign_groups(&tess, theme, &real).unwrap();
            let scores: Vec<f64> = [1.0, 0.75, 0.5]
                .iter()
                .map(|&b| {
                    let flows = inject_bias(&generated, &total, b, seed).unwrap();
                    fairness_score(&flows, &real, &tess, &groups, &cfg).unwrap().score
                })
                .collect();
            ensure(scores[0] <= scores[1] && scores[1] <= scores[2], || format!("seed {seed} {theme}: {scores:?}"))?;
        }
    }
    within(start.elapsed(), 60.0)?;
    Ok(format!(
        "unbiased <= {worst_unbiased:.2e}, biased >= {min_biased:.4}, monotone for seeds 7/13/99, {:.2} s",
        start.elapsed().as_secs_f64()
    ))
}

fn flowfair(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_flowfair")).args(args).output().map_err(|e| e.to_string())?;
    ensure(out.status.success(), || format!("flowfair {args:?}: {}", String::from_utf8_lossy(&out.stderr)))
}

fn pipeline(dir: &Path) -> Result<Vec<u8>, String> {
    let d = |name: &str| dir.join(name).display().to_string();
    let out = dir.display().to_string();
    let (z, f) = (d("zones.csv"), d("flows.csv"));
    flowfair(&["synth", "--n", "10", "--seed", "7", "--bias", "0.5", "--out", &out])?;
    flowfair(&["fit", "--model", "gravity", "--zones", &z, "--flows", &f, "--out", &out])?;
    flowfair(&["fit", "--model", "deepgravity", "--seed", "7", "--epochs", "40", "--zones", &z, "--flows", &f, "--out", &out])?;
    for artifact in ["model_gravity.json", "model_deepgravity.json"] {
        flowfair(&["generate", "--artifact", &d(artifact), "--zones", &z, "--flows", &f, "--out", &out])?;
    }
    flowfair(&["generate", "--model", "radiation", "--zones", &z, "--flows", &f, "--out", &out])?;
    let gen = |name: &str, file: &str| format!("{name}={}", d(file));
    flowfair(&[
        "audit", "--zones", &z, "--flows", &f, "--seed", "7", "--out", &out,
        "--generated", &gen("Gravity", "flows_gravity.csv"),
        "--generated", &gen("Radiation", "flows_radiation.csv"),
        "--generated", &gen("Deep Gravity", "flows_deepgravity.csv"),
        "--generated", &gen("Biased", "flows_biased.csv"),
    ])?;
    std::fs::read(dir.join("report.json")).map_err(|e| e.to_string())
}

fn determinism() -> Check {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (ra, rb) = (pipeline(a.path())?, pipeline(b.path())?);
    ensure(ra == rb, || "report.json differs between runs".into())?;
    Ok(format!("report.json identical ({} bytes)", ra.len()))
}

fn report_shape() -> Check {
    let (tess, real, unbiased) = fixture(7);
    let total = assign_groups(&tess, SviTheme::Total, &real).unwrap();
    let biased = inject_bias(&unbiased, &total, 0.5, 7).unwrap();
    let radiation = generate_radiation(&tess, &outflows(&real)).unwrap();
    let meta = ReportMeta { dataset_id: "synthetic-n10-seed7".into(), seed: Some(7), config_hash: "golden".into() };
    let models = [("Gravity", &unbiased), ("Radiation", &radiation), ("Biased", &biased)];
    let report = audit(&models, &real, &tess, &ScoreConfig::default(), meta).map_err(|e| e.to_string())?;
    let md = render_markdown(&report);

    let rows: Vec<&str> = md.lines().filter(|l| l.starts_with("| ") && !l.starts_with("| |")).collect();
    let labels: Vec<&str> = rows.iter().map(|r| r.split('|').nth(1).unwrap().trim()).collect();
    let want = [
        "Mean CPC",
        "Fairness-SVI-Total",
        "Fairness-Socioeconomic",
        "Fairness-Household",
        "Fairness-Ethnicity",
        "Fairness-Transportation",
    ];
    ensure(labels == want, || format!("row labels {labels:?}"))?;
    for row in &rows {
        let cells: Vec<&str> = row.trim_matches('|').split('|').skip(1).map(str::trim).collect();
        ensure(cells.len() == models.len(), || format!("{row}: {} columns", cells.len()))?;
        ensure(cells.iter().any(|c| c.starts_with('*')), || format!("{row}: no flagged cell"))?;
    }

    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/report.md");
    if std::env::var_os("FLOWFAIR_BLESS").is_some() {
        std::fs::create_dir_all(golden.parent().unwrap()).unwrap();
        std::fs::write(&golden, &md).unwrap();
    }
    let expected = std::fs::read_to_string(&golden).map_err(|e| format!("{}: {e}", golden.display()))?;
    ensure(md == expected, || format!("report.md differs from golden:\n{md}"))?;
    Ok(format!("6 rows x {} models match tests/golden/report.md", models.len()))
}

fn main() {
    let checks: [(&str, CheckFn); 10] = [
        ("cpc correctness", cpc_correctness),
        ("cpc hand case", cpc_hand_case),
        ("kl properties", kl_properties),
        ("model normalization", model_normalization),
        ("radiation hand case", radiation_hand_case),
        ("gravity fit recovery", gravity_recovery),
        ("neural gradient check", gradient_check),
        ("audit sensitivity", audit_sensitivity),
        ("pipeline determinism", determinism),
        ("report shape", report_shape),
    ];
    let mut failed = 0;
    for (k, (name, check)) in checks.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", k + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
