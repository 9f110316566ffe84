//! The `flowfair` command line: `synth`, `fit`, `generate`, `evaluate` and `audit`.
//!
//! Every command accepts `--zones --flows --out --seed --config`. The config
//! file is JSON shaped like [`RunConfig`]; flags override its values. Exit
//! codes: 0 success, 1 domain error, 2 usage error.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::fairness::{
    assign_groups, audit, render_csv, render_markdown, KlDirection, ReportMeta, ScoreConfig, SviTheme,
};
use crate::geodata::{flows_to_csv, parse_flows, parse_zones, zones_to_csv, FlowMatrix, Tessellation};
use crate::metrics::{cpc, cpc_per_origin, mean_cpc, samples_to_csv, Pairs, PairSet};
use crate::models::{
    fit_gravity, outflows, split_origins, train_net_on, Deterrence, FittedModel, GravityParams, ModelKind, TrainConfig,
};
use crate::synth::{inject_bias, make_city, SviMode, SynthConfig};
use crate::util::{sha256_hex, write_atomic};

#[derive(Debug, Parser)]
#[command(name = "flowfair", version, about = "Generative OD flow models and a spatial fairness audit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic city (zones.csv, flows.csv, optionally flows_biased.csv).
    Synth(SynthArgs),
    /// Fit or train a model and write its JSON artifact.
    Fit(FitArgs),
    /// Generate flows from an artifact or a parameter-free model.
    Generate(GenerateArgs),
    /// Global and per-origin CPC of generated flows against real flows.
    Evaluate(EvaluateArgs),
    /// Group-fairness audit of one or more generated flow files.
    Audit(AuditArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    #[arg(long, value_name = "PATH")]
    pub zones: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub flows: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON run configuration; flags take precedence.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Grid side (zones = n * n).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub pop_min: Option<f64>,
    #[arg(long)]
    pub pop_max: Option<f64>,
    #[arg(long)]
    pub svi_mode: Option<SviMode>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub deterrence: Option<Deterrence>,
    #[arg(long)]
    pub outflow: Option<f64>,
    /// Also write flows_biased.csv with disadvantaged flows degraded by factors in [bias, 1].
    #[arg(long)]
    pub bias: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// gravity, radiation, nlg or deepgravity.
    #[arg(long)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub deterrence: Option<Deterrence>,
    /// Hidden layer widths, e.g. 64,32.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Origins per mini-batch.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Hold out this fraction of origins (seeded) and report their CPC.
    #[arg(long)]
    pub holdout: Option<f64>,
    /// Artifact path (default: <out>/model_<kind>.json).
    #[arg(long, value_name = "PATH")]
    pub artifact: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_name = "PATH")]
    pub artifact: Option<PathBuf>,
    /// Parameter-free model to run without an artifact (radiation).
    #[arg(long)]
    pub model: Option<ModelKind>,
    /// CSV `zone_id,outflow`; default: per-origin totals of --flows.
    #[arg(long, value_name = "PATH")]
    pub outflows: Option<PathBuf>,
    /// Output flows file (default: <out>/flows_<kind>.csv).
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Generated flows to score against --flows.
    #[arg(long, value_name = "PATH")]
    pub generated: PathBuf,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Generated flows as NAME=PATH (or PATH, named by file stem); repeatable.
    #[arg(long, value_name = "NAME=PATH", required = true)]
    pub generated: Vec<String>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub kl_direction: Option<KlDirection>,
    #[arg(long)]
    pub dataset_id: Option<String>,
    /// Report formats, any of json, md, csv.
    #[arg(long, value_delimiter = ',')]
    pub format: Option<Vec<String>>,
}

/// Model section of [`RunConfig`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: Option<ModelKind>,
    pub deterrence: Option<Deterrence>,
    pub hidden: Option<Vec<usize>>,
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub holdout: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditSection {
    pub bins: Option<usize>,
    pub epsilon: Option<f64>,
    pub kl_direction: Option<KlDirection>,
    pub dataset_id: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n: Option<usize>,
    pub population_min: Option<f64>,
    pub population_max: Option<f64>,
    pub svi_mode: Option<SviMode>,
    pub gamma: Option<f64>,
    pub beta: Option<f64>,
    pub deterrence: Option<Deterrence>,
    pub outflow: Option<f64>,
    pub bias: Option<f64>,
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub zones: Option<PathBuf>,
    pub flows: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub model: ModelSection,
    pub audit: AuditSection,
    pub synth: SynthSection,
    pub formats: Option<Vec<String>>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Domain(Error),
}

fn domain<E: Into<Error>>(e: E) -> CliError {
    CliError::Domain(e.into())
}

fn usage<S: Into<String>>(msg: S) -> CliError {
    CliError::Usage(msg.into())
}

type CliResult<T> = Result<T, CliError>;

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\n{}", Cli::command().render_usage());
            2
        }
        Err(CliError::Domain(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::Synth(a) => cmd_synth(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Audit(a) => cmd_audit(a),
    }
}

/// Common flags merged over the config file.
struct Resolved {
    cfg: RunConfig,
}

impl Resolved {
    fn new(common: &CommonArgs) -> CliResult<Self> {
        let mut cfg = match &common.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| {
                    domain(Error::Io {
                        context: format!("reading {}", path.display()),
                        source,
                    })
                })?;
                serde_json::from_str::<RunConfig>(&text)
                    .map_err(|e| usage(format!("config {}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        if common.zones.is_some() {
            cfg.zones = common.zones.clone();
        }
        if common.flows.is_some() {
            cfg.flows = common.flows.clone();
        }
        if common.out.is_some() {
            cfg.out = common.out.clone();
        }
        if common.seed.is_some() {
            cfg.seed = common.seed;
        }
        Ok(Resolved { cfg })
    }

    fn zones(&self) -> CliResult<&Path> {
        self.cfg.zones.as_deref().ok_or_else(|| usage("--zones is required"))
    }

    fn flows(&self) -> CliResult<&Path> {
        self.cfg.flows.as_deref().ok_or_else(|| usage("--flows is required"))
    }

    fn out(&self) -> CliResult<PathBuf> {
        let out = self.cfg.out.clone().unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&out).map_err(|source| {
            domain(Error::Io {
                context: format!("creating {}", out.display()),
                source,
            })
        })?;
        Ok(out)
    }
}

fn read_bytes(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|source| {
        domain(Error::Io {
            context: format!("reading {}", path.display()),
            source,
        })
    })
}

struct Inputs {
    tess: Tessellation,
    real: FlowMatrix,
    dataset_id: String,
}

fn load_tess(path: &Path) -> CliResult<(Tessellation, String)> {
    let text = read_bytes(path)?;
    let tess = parse_zones(&text, &path.display().to_string()).map_err(domain)?;
    Ok((tess, text))
}

fn load_matrix(path: &Path, tess: &Tessellation) -> CliResult<(FlowMatrix, String)> {
    let text = read_bytes(path)?;
    let flows = parse_flows(&text, &path.display().to_string(), tess).map_err(domain)?;
    Ok((flows, text))
}

fn load_inputs(r: &Resolved) -> CliResult<Inputs> {
    let (tess, zones_text) = load_tess(r.zones()?)?;
    let (real, flows_text) = load_matrix(r.flows()?, &tess)?;
    let dataset_id = sha256_hex(format!("{zones_text}\u{0}{flows_text}").as_bytes())[..16].to_string();
    Ok(Inputs { tess, real, dataset_id })
}

/// Short hash of a serializable configuration.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config serializes");
    sha256_hex(json.as_bytes())[..16].to_string()
}

fn write(path: &Path, contents: &str) -> CliResult<()> {
    write_atomic(path, contents.as_bytes()).map_err(CliError::Domain)
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: &'a str,
    files: Vec<String>,
}

/// Sidecar recording the config hash of CSV outputs, whose headers are fixed.
fn write_manifest(out: &Path, command: &str, hash: &str, files: &[&Path]) -> CliResult<()> {
    let manifest = Manifest {
        command,
        config_hash: hash,
        files: files
            .iter()
            .map(|p| p.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned()))
            .collect(),
    };
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    write(&out.join(format!("{command}.manifest.json")), &json)
}

fn synth_config(a: &SynthArgs, r: &Resolved) -> SynthConfig {
    let s = &r.cfg.synth;
    let d = SynthConfig::default();
    SynthConfig {
        n: a.n.or(s.n).unwrap_or(d.n),
        population_min: a.pop_min.or(s.population_min).unwrap_or(d.population_min),
        population_max: a.pop_max.or(s.population_max).unwrap_or(d.population_max),
        svi_mode: a.svi_mode.or(s.svi_mode).unwrap_or(d.svi_mode),
        planted: GravityParams {
            gamma: a.gamma.or(s.gamma).unwrap_or(d.planted.gamma),
            beta: a.beta.or(s.beta).unwrap_or(d.planted.beta),
            deterrence: a.deterrence.or(s.deterrence).unwrap_or(d.planted.deterrence),
        },
        outflow: a.outflow.or(s.outflow).unwrap_or(d.outflow),
        bias: a.bias.or(s.bias).unwrap_or(d.bias),
        seed: r.cfg.seed.unwrap_or(d.seed),
    }
}

pub fn cmd_synth(a: SynthArgs) -> CliResult<()> {
    let r = Resolved::new(&a.common)?;
    let cfg = synth_config(&a, &r);
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let (tess, flows) = make_city(&cfg).map_err(domain)?;
    let out = r.out()?;
    let hash = config_hash(&("synth", &cfg));
    let zones_path = out.join("zones.csv");
    let flows_path = out.join("flows.csv");
    write(&zones_path, &zones_to_csv(&tess))?;
    write(&flows_path, &flows_to_csv(&flows, &tess))?;
    let mut files = vec![zones_path.as_path(), flows_path.as_path()];
    let biased_path = out.join("flows_biased.csv");
    if cfg.bias < 1.0 {
        let groups = assign_groups(&tess, SviTheme::Total, &flows).map_err(domain)?;
        let biased = inject_bias(&flows, &groups, cfg.bias, cfg.seed).map_err(domain)?;
        write(&biased_path, &flows_to_csv(&biased, &tess))?;
        files.push(&biased_path);
    }
    write_manifest(&out, "synth", &hash, &files)?;
    println!("zones={} flows={} config_hash={hash}", tess.len(), flows.len());
    Ok(())
}

#[derive(Serialize)]
struct FitHash<'a> {
    command: &'a str,
    kind: ModelKind,
    deterrence: Option<Deterrence>,
    train: Option<&'a TrainConfig>,
    holdout: Option<f64>,
    seed: Option<u64>,
}

pub fn cmd_fit(a: FitArgs) -> CliResult<()> {
    let r = Resolved::new(&a.common)?;
    let m = &r.cfg.model;
    let kind = a.model.or(m.kind).ok_or_else(|| usage("--model is required (gravity, radiation, nlg, deepgravity)"))?;
    let holdout = a.holdout.or(m.holdout);
    if let Some(h) = holdout {
        if !(h > 0.0 && h < 1.0) {
            return Err(usage(format!("--holdout {h} must be in (0, 1)")));
        }
    }
    let needs_seed = kind.is_neural() || holdout.is_some();
    let seed = r.cfg.seed;
    if needs_seed && seed.is_none() {
        return Err(usage(format!("--seed is required for {}", if kind.is_neural() { kind.name() } else { "--holdout" })));
    }
    let inputs = load_inputs(&r)?;
    let (tess, real) = (&inputs.tess, &inputs.real);

    let with_flow: Vec<usize> = (0..tess.len()).filter(|&i| real.row(i).any(|(j, _)| j != i)).collect();
    let (train, test) = match holdout {
        Some(h) => split_origins(&with_flow, h, seed.unwrap_or_default()),
        None => (with_flow.clone(), Vec::new()),
    };
    let train_set: BTreeSet<usize> = train.iter().copied().collect();
    let train_flows = real
        .map_entries(|o, _, v| if train_set.contains(&o) { v } else { 0.0 })
        .map_err(domain)?;

    let defaults = TrainConfig::default();
    let train_cfg = TrainConfig {
        hidden: a.hidden.clone().or_else(|| m.hidden.clone()).unwrap_or(defaults.hidden),
        learning_rate: a.lr.or(m.learning_rate).unwrap_or(defaults.learning_rate),
        epochs: a.epochs.or(m.epochs).unwrap_or(defaults.epochs),
        batch_size: a.batch.or(m.batch_size).unwrap_or(defaults.batch_size),
        seed: seed.unwrap_or_default(),
    };
    let deterrence = a.deterrence.or(m.deterrence).unwrap_or(Deterrence::Power);

    let (model, summary) = match kind {
        ModelKind::Gravity => {
            let fit = fit_gravity(&train_flows, tess, deterrence).map_err(domain)?;
            let p = fit.params;
            let summary = format!(
                "gamma={} beta={} deterrence={:?} iterations={} log_likelihood={}",
                p.gamma, p.beta, p.deterrence, fit.iterations, fit.log_likelihood
            )
            .to_lowercase();
            (FittedModel::Gravity(p), summary)
        }
        ModelKind::Radiation => (FittedModel::Radiation, "radiation has no parameters".to_string()),
        _ => {
            let trained = train_net_on(&train_flows, tess, kind, &train_cfg, &train).map_err(domain)?;
            let summary = format!("final_loss={}", trained.final_loss);
            (FittedModel::Neural(trained.model), summary)
        }
    };
    let hash = config_hash(&FitHash {
        command: "fit",
        kind,
        deterrence: (kind == ModelKind::Gravity).then_some(deterrence),
        train: kind.is_neural().then_some(&train_cfg),
        holdout,
        seed: if needs_seed { seed } else { None },
    });
    println!("{summary}");
    if !test.is_empty() {
        let generated = model.generate(tess, &outflows(real)).map_err(domain)?;
        let pairs: PairSet = real
            .iter()
            .chain(generated.iter())
            .filter(|&(o, d, _)| o != d && test.binary_search(&o).is_ok())
            .map(|(o, d, _)| (o, d))
            .collect();
        let score = cpc(&generated, real, Pairs::Only(&pairs)).map_err(domain)?;
        println!("holdout_origins={} holdout_cpc={score}", test.len());
    }
    let out = r.out()?;
    let path = a.artifact.unwrap_or_else(|| out.join(format!("model_{}.json", kind.name())));
    let mut artifact = model.to_artifact();
    artifact.config_hash = Some(hash);
    write(&path, &artifact.to_json())?;
    println!("artifact={}", path.display());
    Ok(())
}

fn read_outflows(path: &Path, tess: &Tessellation) -> CliResult<Vec<f64>> {
    let text = read_bytes(path)?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut totals = vec![0.0; tess.len()];
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let row = k + 2;
        let id = record.get(0).unwrap_or("").trim();
        let i = tess
            .index_of(id)
            .ok_or_else(|| usage(format!("{} row {row}: unknown zone `{id}`", path.display())))?;
        let v: f64 = record
            .get(1)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| usage(format!("{} row {row}: bad outflow", path.display())))?;
        totals[i] += v;
    }
    Ok(totals)
}

pub fn cmd_generate(a: GenerateArgs) -> CliResult<()> {
    let r = Resolved::new(&a.common)?;
    let (model, artifact_hash) = match (&a.artifact, a.model.or(r.cfg.model.kind)) {
        (Some(path), _) => {
            let text = read_bytes(path)?;
            let artifact: crate::models::ModelArtifact = serde_json::from_str(&text)
                .map_err(|e| domain(crate::models::ModelError::InvalidArtifact(e.to_string())))?;
            let hash = artifact.config_hash.clone();
            (artifact.into_model().map_err(domain)?, hash)
        }
        (None, Some(ModelKind::Radiation)) => (FittedModel::Radiation, None),
        (None, Some(kind)) => return Err(usage(format!("{kind} needs --artifact (run `fit` first)"))),
        (None, None) => return Err(usage("--artifact or --model radiation is required")),
    };
    let (tess, _) = load_tess(r.zones()?)?;
    let totals = match (&a.outflows, &r.cfg.flows) {
        (Some(path), _) => read_outflows(path, &tess)?,
        (None, Some(flows)) => outflows(&load_matrix(flows, &tess)?.0),
        (None, None) => return Err(usage("--flows or --outflows is needed for per-origin totals")),
    };
    let generated = model.generate(&tess, &totals).map_err(domain)?;
    let out = r.out()?;
    let path = a
        .output
        .unwrap_or_else(|| out.join(format!("flows_{}.csv", model.kind().name())));
    write(&path, &flows_to_csv(&generated, &tess))?;
    let hash = config_hash(&("generate", model.kind(), artifact_hash));
    write_manifest(path.parent().unwrap_or(&out), "generate", &hash, &[path.as_path()])?;
    println!("model={} entries={} total={} output={}", model.kind().name(), generated.len(), generated.total(), path.display());
    Ok(())
}

pub fn cmd_evaluate(a: EvaluateArgs) -> CliResult<()> {
    let r = Resolved::new(&a.common)?;
    let inputs = load_inputs(&r)?;
    let (generated, _) = load_matrix(&a.generated, &inputs.tess)?;
    let global = cpc(&generated, &inputs.real, Pairs::OffDiagonal).map_err(domain)?;
    let per_origin = cpc_per_origin(&generated, &inputs.real, &inputs.tess, Pairs::OffDiagonal).map_err(domain)?;
    let mean = mean_cpc(&per_origin.samples).map_err(domain)?;
    let out = r.out()?;
    let path = out.join("cpc_samples.csv");
    write(&path, &samples_to_csv(&per_origin.samples))?;
    write_manifest(&out, "evaluate", &config_hash(&("evaluate", &inputs.dataset_id)), &[path.as_path()])?;
    println!(
        "global_cpc={global} mean_cpc={mean} origins={} skipped={}",
        per_origin.samples.len(),
        per_origin.skipped
    );
    Ok(())
}

fn parse_generated(arg: &str) -> CliResult<(String, PathBuf)> {
    let (name, path) = match arg.split_once('=') {
        Some((n, p)) => (n.to_string(), PathBuf::from(p)),
        None => {
            let p = PathBuf::from(arg);
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            (stem, p)
        }
    };
    if name.is_empty() || name.contains([',', '|', '\n', '"']) {
        return Err(usage(format!("invalid model name in `{arg}`")));
    }
    Ok((name, path))
}

#[derive(Serialize)]
struct AuditHash<'a> {
    command: &'a str,
    models: Vec<&'a str>,
    score: ScoreConfig,
    seed: Option<u64>,
}

pub fn cmd_audit(a: AuditArgs) -> CliResult<()> {
    let r = Resolved::new(&a.common)?;
    let s = &r.cfg.audit;
    let defaults = ScoreConfig::default();
    let score_cfg = ScoreConfig {
        bins: a.bins.or(s.bins).unwrap_or(defaults.bins),
        epsilon: a.epsilon.or(s.epsilon).unwrap_or(defaults.epsilon),
        direction: a.kl_direction.or(s.kl_direction).unwrap_or(defaults.direction),
    };
    if score_cfg.bins < 2 {
        return Err(usage(format!("--bins {} (need >= 2)", score_cfg.bins)));
    }
    if !(score_cfg.epsilon > 0.0 && score_cfg.epsilon.is_finite()) {
        return Err(usage(format!("--epsilon {} (need > 0)", score_cfg.epsilon)));
    }
    let formats = a
        .format
        .clone()
        .or_else(|| r.cfg.formats.clone())
        .unwrap_or_else(|| vec!["json".into(), "md".into(), "csv".into()]);
    if let Some(f) = formats.iter().find(|f| !matches!(f.as_str(), "json" | "md" | "csv")) {
        return Err(usage(format!("unknown report format `{f}`")));
    }
    let specs = a.generated.iter().map(|g| parse_generated(g)).collect::<CliResult<Vec<_>>>()?;
    let names: BTreeSet<&str> = specs.iter().map(|(n, _)| n.as_str()).collect();
    if names.len() != specs.len() {
        return Err(usage("model names must be unique"));
    }

    let inputs = load_inputs(&r)?;
    let matrices = specs
        .iter()
        .map(|(_, p)| load_matrix(p, &inputs.tess).map(|m| m.0))
        .collect::<CliResult<Vec<_>>>()?;
    let models: Vec<(&str, &FlowMatrix)> = specs.iter().map(|(n, _)| n.as_str()).zip(&matrices).collect();
    let hash = config_hash(&AuditHash {
        command: "audit",
        models: models.iter().map(|m| m.0).collect(),
        score: score_cfg,
        seed: r.cfg.seed,
    });
    let meta = ReportMeta {
        dataset_id: a.dataset_id.clone().or_else(|| s.dataset_id.clone()).unwrap_or(inputs.dataset_id.clone()),
        seed: r.cfg.seed,
        config_hash: hash,
    };
    let report = audit(&models, &inputs.real, &inputs.tess, &score_cfg, meta).map_err(domain)?;
    for row in &report.themes {
        for c in &row.cells {
            if c.score.advantaged_skipped + c.score.disadvantaged_skipped > 0 {
                eprintln!(
                    "{} / {}: skipped {} advantaged and {} disadvantaged origins with undefined CPC",
                    c.model, row.theme, c.score.advantaged_skipped, c.score.disadvantaged_skipped
                );
            }
        }
    }
    let out = r.out()?;
    for f in &formats {
        match f.as_str() {
            "json" => write(&out.join("report.json"), &report.to_json())?,
            "md" => write(&out.join("report.md"), &render_markdown(&report))?,
            _ => write(&out.join("report.csv"), &render_csv(&report))?,
        }
    }
    print!("{}", render_markdown(&report));
    Ok(())
}
