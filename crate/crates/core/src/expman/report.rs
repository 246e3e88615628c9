//! Report tables rendered from manifests. Rendering is a pure function of
//! the manifest, so repeated renderings are byte-identical.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::manifest::{write_atomic, ExperimentManifest, Results};
use super::reference::{encoder_family, PublishedResult, ResultKind, PUBLISHED_RESULTS};
use super::ExpmanError;
use crate::corpus::TaskId;
use crate::finetune::{CellOutcome, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Scores {
    pub dev_micro: Option<f64>,
    pub test_micro: Option<f64>,
    pub dev_macro: Option<f64>,
    pub test_macro: Option<f64>,
}

impl Scores {
    fn cells(&self) -> [Option<f64>; 4] {
        [self.dev_micro, self.test_micro, self.dev_macro, self.test_macro]
    }

    fn from_published(r: &PublishedResult) -> Self {
        Scores { dev_micro: r.dev_micro, test_micro: r.test_micro, dev_macro: r.dev_macro, test_macro: r.test_macro }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCell {
    pub setting: String,
    pub scores: Scores,
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub setting: String,
    /// Dropout rate or shot count, already formatted.
    pub slot: String,
    pub obtained: Scores,
    pub reference: Option<ReferenceCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub title: String,
    /// Header of the slot column: `dropout` or `shots`.
    pub slot_name: String,
    /// Whether reference and delta columns are rendered.
    pub with_reference: bool,
    pub rows: Vec<ReportRow>,
}

const METRICS: [&str; 4] = ["dev_micro_f1", "test_micro_f1", "dev_macro_f1", "test_macro_f1"];

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_default()
}

/// Signed difference at three decimals; a difference that rounds to zero
/// prints as `0.000`.
pub fn format_delta(obtained: f64, reference: f64) -> String {
    let d = obtained - reference;
    let s = format!("{:.3}", d.abs());
    if s == "0.000" {
        s
    } else if d > 0.0 {
        format!("+{s}")
    } else {
        format!("-{s}")
    }
}

impl ReportTable {
    /// Tab-separated, header first. Absent values are empty cells.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {}", self.title);
        let mut header = vec!["setting".to_string(), self.slot_name.clone()];
        header.extend(METRICS.iter().map(|m| m.to_string()));
        if self.with_reference {
            header.push("reference".into());
            header.extend(METRICS.iter().map(|m| format!("ref_{m}")));
            header.extend(METRICS.iter().map(|m| format!("delta_{m}")));
            header.push("provenance".into());
        }
        out.push_str(&header.join("\t"));
        out.push('\n');
        for row in &self.rows {
            let mut fields = vec![row.setting.clone(), row.slot.clone()];
            fields.extend(row.obtained.cells().iter().map(|&v| cell(v)));
            if self.with_reference {
                match &row.reference {
                    Some(r) => {
                        fields.push(r.setting.clone());
                        fields.extend(r.scores.cells().iter().map(|&v| cell(v)));
                        fields.extend(row.obtained.cells().iter().zip(r.scores.cells()).map(|(o, p)| match (o, p) {
                            (Some(o), Some(p)) => format_delta(*o, p),
                            _ => String::new(),
                        }));
                        fields.push(r.provenance.clone());
                    }
                    None => fields.extend(std::iter::repeat_n(String::new(), 10)),
                }
            }
            out.push_str(&fields.join("\t"));
            out.push('\n');
        }
        out
    }
}

fn format_rate(r: f64) -> String {
    format!("{r}")
}

fn finetune_rows(manifest: &ExperimentManifest) -> Vec<(f64, String, Scores)> {
    match &manifest.results {
        Results::Finetune { run, test, .. } => {
            let dev = run.final_dev();
            let scores = Scores {
                dev_micro: Some(dev.micro_f1),
                test_micro: test.as_ref().map(|t| t.micro_f1),
                dev_macro: Some(dev.macro_f1),
                test_macro: test.as_ref().map(|t| t.macro_f1),
            };
            vec![(run.config.dropout_rate, run.config.encoder_id.clone(), scores)]
        }
        Results::Sweep(report) => report
            .cells
            .iter()
            .map(|c| {
                let scores = match &c.outcome {
                    CellOutcome::Completed { dev, test, .. } => Scores {
                        dev_micro: Some(dev.micro_f1),
                        test_micro: test.as_ref().map(|t| t.micro_f1),
                        dev_macro: Some(dev.macro_f1),
                        test_macro: test.as_ref().map(|t| t.macro_f1),
                    },
                    CellOutcome::Failed { .. } => Scores::default(),
                };
                (c.dropout_rate, report.encoder_id.clone(), scores)
            })
            .collect(),
        _ => Vec::new(),
    }
}

/// The manifest's own numbers, one row per run (or trial, or probe).
pub fn results_table(manifest: &ExperimentManifest) -> ReportTable {
    let title = format!("{} {} {}", manifest.experiment_id, manifest.task_id, manifest.mode);
    let mut slot_name = "dropout".to_string();
    let rows = match &manifest.results {
        Results::Finetune { .. } | Results::Sweep(_) => finetune_rows(manifest)
            .into_iter()
            .map(|(rate, setting, obtained)| ReportRow { setting, slot: format_rate(rate), obtained, reference: None })
            .collect(),
        Results::Search(outcome) => outcome
            .trials
            .iter()
            .map(|t| ReportRow {
                setting: trial_setting(&t.config),
                slot: format_rate(t.config.dropout_rate),
                obtained: Scores { dev_micro: t.dev_micro_f1, ..Scores::default() },
                reference: None,
            })
            .collect(),
        Results::LlmProbe(s) => {
            slot_name = "shots".into();
            vec![ReportRow {
                setting: s.model_id.clone(),
                slot: s.row.shots.to_string(),
                obtained: Scores { test_micro: Some(s.row.micro_f1), test_macro: Some(s.row.macro_f1), ..Scores::default() },
                reference: None,
            }]
        }
        Results::Score { eval } => {
            slot_name = "-".into();
            vec![ReportRow {
                setting: "predictions".into(),
                slot: String::new(),
                obtained: Scores { test_micro: Some(eval.micro_f1), test_macro: Some(eval.macro_f1), ..Scores::default() },
                reference: None,
            }]
        }
    };
    ReportTable { title, slot_name, with_reference: false, rows }
}

fn trial_setting(c: &TrainConfig) -> String {
    format!("lr={} batch={} epochs={}", c.learning_rate, c.batch_size, c.epochs)
}

fn reference_cell(r: &PublishedResult) -> ReferenceCell {
    ReferenceCell { setting: r.setting.to_string(), scores: Scores::from_published(r), provenance: r.provenance.to_string() }
}

/// Rows pairing each obtained result with every published result in the
/// same slot. A slot without published values gets one row whose reference
/// columns are empty. The reference model is `reference_model` from the
/// manifest, else the family named by the encoder id, else every model.
pub fn compare_to_paper(manifest: &ExperimentManifest) -> Result<ReportTable, ExpmanError> {
    let task = manifest.task_id;
    let no_reference = || ExpmanError::NoReferenceForMode { mode: manifest.mode.to_string(), task: task.to_string() };
    let mut rows = Vec::new();
    let slot_name;
    match &manifest.results {
        Results::Finetune { .. } | Results::Sweep(_) => {
            slot_name = "dropout";
            for (rate, encoder_id, obtained) in finetune_rows(manifest) {
                let family = manifest.reference_model.clone().or_else(|| encoder_family(&encoder_id).map(String::from));
                let matches: Vec<&PublishedResult> = PUBLISHED_RESULTS
                    .iter()
                    .filter(|r| r.task_id == task && r.kind == ResultKind::FineTuned && r.dropout == Some(rate))
                    .filter(|r| family.as_deref().is_none_or(|f| r.setting.eq_ignore_ascii_case(f)))
                    .collect();
                push_rows(&mut rows, &encoder_id, &format_rate(rate), obtained, &matches);
            }
        }
        Results::LlmProbe(s) => {
            slot_name = "shots";
            let matches: Vec<&PublishedResult> =
                PUBLISHED_RESULTS.iter().filter(|r| r.task_id == task && r.kind == ResultKind::FewShot && r.shots == Some(s.row.shots)).collect();
            let obtained = Scores { test_micro: Some(s.row.micro_f1), test_macro: Some(s.row.macro_f1), ..Scores::default() };
            push_rows(&mut rows, &s.model_id, &s.row.shots.to_string(), obtained, &matches);
        }
        Results::Search(_) | Results::Score { .. } => return Err(no_reference()),
    }
    Ok(ReportTable {
        title: format!("{} {} {} vs published", manifest.experiment_id, task, manifest.mode),
        slot_name: slot_name.into(),
        with_reference: true,
        rows,
    })
}

fn push_rows(rows: &mut Vec<ReportRow>, setting: &str, slot: &str, obtained: Scores, matches: &[&PublishedResult]) {
    if matches.is_empty() {
        rows.push(ReportRow { setting: setting.into(), slot: slot.into(), obtained, reference: None });
    }
    for r in matches {
        rows.push(ReportRow { setting: setting.into(), slot: slot.into(), obtained, reference: Some(reference_cell(r)) });
    }
}

/// Published results of one task as a table (fine-tuned rows, then
/// zero/few-shot rows).
pub fn published_table(task: TaskId) -> ReportTable {
    let rows = PUBLISHED_RESULTS
        .iter()
        .filter(|r| r.task_id == task)
        .map(|r| ReportRow {
            setting: r.setting.to_string(),
            slot: match (r.dropout, r.shots) {
                (Some(d), _) => format!("dropout={d}"),
                (None, Some(k)) => format!("{k}-shot"),
                (None, None) => String::new(),
            },
            obtained: Scores::from_published(r),
            reference: None,
        })
        .collect();
    ReportTable { title: format!("{task} published results"), slot_name: "slot".into(), with_reference: false, rows }
}

pub const LOSS_CURVE_HEADER: &str = "epoch,dropout_rate,loss";

/// `epoch,dropout_rate,loss` rows ordered by rate, then epoch.
pub fn loss_curve_csv(manifest: &ExperimentManifest) -> Result<String, ExpmanError> {
    let mut runs: Vec<_> = manifest.training_runs();
    if runs.is_empty() {
        return Err(ExpmanError::NoTrainingRuns);
    }
    runs.sort_by(|a, b| a.config.dropout_rate.total_cmp(&b.config.dropout_rate));
    let mut out = String::from(LOSS_CURVE_HEADER);
    out.push('\n');
    for run in runs {
        for (i, loss) in run.epoch_losses.iter().enumerate() {
            let _ = writeln!(out, "{},{},{:.10}", i + 1, run.config.dropout_rate, loss);
        }
    }
    Ok(out)
}

/// Writes the loss-curve table of `manifest` to `path`.
pub fn emit_loss_curves(manifest: &ExperimentManifest, path: &Path) -> Result<(), ExpmanError> {
    write_atomic(path, loss_curve_csv(manifest)?.as_bytes())
}
