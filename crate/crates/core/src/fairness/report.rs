//! Model x theme audit and its JSON, Markdown and CSV renderings.

use std::io;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{assign_groups, fairness_score, FairnessError, GroupAssignment, KlDirection, ScoreConfig, SviTheme, ThemeScore};
use crate::geodata::{FlowMatrix, Tessellation};
use crate::metrics::{cpc, cpc_per_origin, mean_cpc, Pairs};

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Label of the aggregate shown in the Mean CPC row.
pub const MEAN_CPC_SHOWN: &str = "per_origin_mean";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub dataset_id: String,
    pub seed: Option<u64>,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub name: String,
    /// Unweighted mean of per-origin CPCs (self-flows excluded).
    pub mean_cpc_per_origin: f64,
    /// One CPC over all off-diagonal pairs.
    pub mean_cpc_global: f64,
    pub origins_scored: usize,
    pub origins_skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub model: String,
    #[serde(flatten)]
    pub score: ThemeScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThemeRow {
    pub theme: SviTheme,
    pub q1: f64,
    pub q3: f64,
    pub advantaged_pairs: usize,
    pub disadvantaged_pairs: usize,
    /// One cell per model, in input order.
    pub cells: Vec<Cell>,
    /// Models with the lowest score on this row.
    pub fairest: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub format_version: u32,
    pub meta: ReportMeta,
    pub config: ScoreConfig,
    pub mean_cpc_shown: String,
    pub models: Vec<ModelSummary>,
    /// One row per theme, in [`SviTheme::ALL`] order.
    pub themes: Vec<ThemeRow>,
}

/// Scores every model under every SVI theme against `real`.
pub fn audit(
    models: &[(&str, &FlowMatrix)],
    real: &FlowMatrix,
    tess: &Tessellation,
    cfg: &ScoreConfig,
    meta: ReportMeta,
) -> Result<FairnessReport, FairnessError> {
    if models.is_empty() {
        return Err(FairnessError::NoModels);
    }
    let cell_err = |model: &str, theme: SviTheme| {
        let model = model.to_string();
        move |e: FairnessError| FairnessError::Cell {
            model,
            theme,
            source: Box::new(e),
        }
    };

    let summaries = models
        .iter()
        .map(|&(name, flows)| {
            let per_origin = cpc_per_origin(flows, real, tess, Pairs::OffDiagonal)
                .map_err(|e| cell_err(name, SviTheme::Total)(e.into()))?;
            let global = cpc(flows, real, Pairs::OffDiagonal).map_err(|e| cell_err(name, SviTheme::Total)(e.into()))?;
            Ok(ModelSummary {
                name: name.to_string(),
                mean_cpc_per_origin: mean_cpc(&per_origin.samples)
                    .map_err(|e| cell_err(name, SviTheme::Total)(e.into()))?,
                mean_cpc_global: global,
                origins_scored: per_origin.samples.len(),
                origins_skipped: per_origin.skipped,
            })
        })
        .collect::<Result<Vec<_>, FairnessError>>()?;

    let groups: Vec<GroupAssignment> = SviTheme::ALL
        .iter()
        .map(|&theme| assign_groups(tess, theme, real))
        .collect::<Result<_, _>>()?;

    let cells: Vec<Vec<ThemeScore>> = groups
        .par_iter()
        .map(|g| {
            models
                .iter()
                .map(|&(name, flows)| fairness_score(flows, real, tess, g, cfg).map_err(cell_err(name, g.theme)))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;

    let themes = groups
        .iter()
        .zip(cells)
        .map(|(g, scores)| {
            let min = scores.iter().map(|s| s.score).fold(f64::INFINITY, f64::min);
            ThemeRow {
                theme: g.theme,
                q1: g.q1,
                q3: g.q3,
                advantaged_pairs: g.advantaged.len(),
                disadvantaged_pairs: g.disadvantaged.len(),
                fairest: models
                    .iter()
                    .zip(&scores)
                    .filter(|(_, s)| s.score == min)
                    .map(|((name, _), _)| name.to_string())
                    .collect(),
                cells: models
                    .iter()
                    .zip(scores)
                    .map(|((name, _), score)| Cell {
                        model: name.to_string(),
                        score,
                    })
                    .collect(),
            }
        })
        .collect();

    Ok(FairnessReport {
        format_version: REPORT_FORMAT_VERSION,
        meta,
        config: *cfg,
        mean_cpc_shown: MEAN_CPC_SHOWN.to_string(),
        models: summaries,
        themes,
    })
}

/// Pretty JSON formatter writing every float with 17 significant digits.
struct SigDigits(serde_json::ser::PrettyFormatter<'static>);

impl serde_json::ser::Formatter for SigDigits {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }
    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

impl FairnessReport {
    pub fn to_json(&self) -> String {
        let mut buf = Vec::new();
        let mut ser = serde_json::Serializer::with_formatter(&mut buf, SigDigits(serde_json::ser::PrettyFormatter::new()));
        self.serialize(&mut ser).expect("report serializes");
        buf.push(b'\n');
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn row(&self, theme: SviTheme) -> Option<&ThemeRow> {
        self.themes.iter().find(|r| r.theme == theme)
    }

    /// Score of `model` under `theme`.
    pub fn score(&self, model: &str, theme: SviTheme) -> Option<f64> {
        self.row(theme)?
            .cells
            .iter()
            .find(|c| c.model == model)
            .map(|c| c.score.score)
    }
}

fn direction_label(d: KlDirection) -> &'static str {
    match d {
        KlDirection::DisadvantagedFirst => "KL(disadvantaged || advantaged)",
        KlDirection::AdvantagedFirst => "KL(advantaged || disadvantaged)",
    }
}

/// Table with one Mean CPC row and one row per theme, one column per model.
///
/// The best value of each row is set in italics: highest mean CPC, lowest fairness score.
pub fn render_markdown(report: &FairnessReport) -> String {
    let mut out = String::from("# Group fairness audit\n\n");
    out.push_str(&format!(
        "dataset `{}`, seed {}, config `{}`\n\n",
        report.meta.dataset_id,
        report.meta.seed.map_or_else(|| "none".to_string(), |s| s.to_string()),
        report.meta.config_hash
    ));
    out.push_str(&format!(
        "score: {} in nats over {} CPC bins, pseudo-count {}\n\n",
        direction_label(report.config.direction),
        report.config.bins,
        report.config.epsilon
    ));
    out.push('|');
    for m in &report.models {
        out.push_str(&format!(" | {}", m.name));
    }
    out.push_str(" |\n|:--");
    out.push_str(&"|--:".repeat(report.models.len()));
    out.push_str("|\n");

    let best = report
        .models
        .iter()
        .map(|m| m.mean_cpc_per_origin)
        .fold(f64::NEG_INFINITY, f64::max);
    out.push_str("| Mean CPC");
    for m in &report.models {
        let v = format!("({:.4})", m.mean_cpc_per_origin);
        out.push_str(&if m.mean_cpc_per_origin == best { format!(" | *{v}*") } else { format!(" | {v}") });
    }
    out.push_str(" |\n");
    for row in &report.themes {
        out.push_str(&format!("| {}", row.theme.label()));
        for c in &row.cells {
            let v = format!("{:.4}", c.score.score);
            out.push_str(&if row.fairest.contains(&c.model) { format!(" | *{v}*") } else { format!(" | {v}") });
        }
        out.push_str(" |\n");
    }
    out.push_str("\nMean CPC is the unweighted mean of per-origin CPCs. Italics mark the best value per row; ");
    out.push_str("on fairness rows that is the lowest score, the fairer model.\n");
    out
}

/// CSV form of the Markdown table: `row,<model>...,fairest`.
pub fn render_csv(report: &FairnessReport) -> String {
    let mut out = String::from("row");
    for m in &report.models {
        out.push_str(&format!(",{}", m.name));
    }
    out.push_str(",fairest\n");
    out.push_str("mean_cpc");
    for m in &report.models {
        out.push_str(&format!(",{}", m.mean_cpc_per_origin));
    }
    out.push_str(",\n");
    for row in &report.themes {
        out.push_str(&format!("fairness_{}", row.theme));
        for c in &row.cells {
            out.push_str(&format!(",{}", c.score.score));
        }
        out.push_str(&format!(",{}\n", row.fairest.join(";")));
    }
    out
}
