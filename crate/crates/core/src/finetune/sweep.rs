//! Dropout-rate sweeps: one training run per rate, each scored on dev and
//! (optionally) test, plus the per-epoch loss curve of every run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::fit;
use super::{TrainConfig, TrainingRun};
use crate::corpus::DatasetSplit;
use crate::metrics::EvalResult;

pub struct SweepData<'a> {
    pub train: &'a DatasetSplit,
    pub dev: &'a DatasetSplit,
    pub test: Option<&'a DatasetSplit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum CellOutcome {
    Completed {
        run: TrainingRun,
        dev: EvalResult,
        test: Option<EvalResult>,
        /// `(id, label)` test predictions from the final-epoch model.
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        test_predictions: Vec<(String, String)>,
    },
    Failed {
        error: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub dropout_rate: f64,
    pub outcome: CellOutcome,
}

/// One point of a loss-per-epoch curve. Epochs are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub epoch: usize,
    pub dropout_rate: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub encoder_id: String,
    pub cells: Vec<SweepCell>,
}

impl SweepReport {
    pub fn completed(&self) -> impl Iterator<Item = (f64, &TrainingRun, &EvalResult, Option<&EvalResult>)> {
        self.cells.iter().filter_map(|c| match &c.outcome {
            CellOutcome::Completed { run, dev, test, .. } => Some((c.dropout_rate, run, dev, test.as_ref())),
            CellOutcome::Failed { .. } => None,
        })
    }

    /// Rows ordered by rate, then epoch.
    pub fn loss_curve(&self) -> Vec<LossPoint> {
        self.completed()
            .flat_map(|(rate, run, _, _)| {
                run.epoch_losses.iter().enumerate().map(move |(i, &loss)| LossPoint { epoch: i + 1, dropout_rate: rate, loss })
            })
            .collect()
    }
}

/// Trains `base` once per rate (ascending, duplicates removed). A failed
/// cell is recorded and the sweep continues. With `out_dir`, each cell's
/// checkpoint goes to `out_dir/dropout-<rate>/checkpoint.json`.
pub fn dropout_sweep(base: &TrainConfig, rates: &[f64], data: &SweepData<'_>, out_dir: Option<&Path>) -> SweepReport {
    let mut rates: Vec<f64> = rates.to_vec();
    rates.sort_by(f64::total_cmp);
    rates.dedup();
    let cells = rates
        .into_iter()
        .map(|rate| {
            let config = TrainConfig { dropout_rate: rate, ..base.clone() };
            let outcome = run_cell(&config, data, out_dir).unwrap_or_else(|e| CellOutcome::Failed { error: e.to_string() });
            SweepCell { dropout_rate: rate, outcome }
        })
        .collect();
    SweepReport { encoder_id: base.encoder_id.clone(), cells }
}

fn run_cell(config: &TrainConfig, data: &SweepData<'_>, out_dir: Option<&Path>) -> Result<CellOutcome, super::FinetuneError> {
    let mut fitted = fit(config, data.train, data.dev)?;
    let dev = fitted.run.final_dev().clone();
    let (test, test_predictions) = match data.test {
        Some(split) => {
            let labels = fitted.predict(split)?;
            let eval = fitted.evaluate(split)?;
            let preds = split.ids().into_iter().map(String::from).zip(labels).collect();
            (Some(eval), preds)
        }
        None => (None, Vec::new()),
    };
    if let Some(dir) = out_dir {
        let path = dir.join(format!("dropout-{}", config.dropout_rate)).join("checkpoint.json");
        fitted.checkpoint().save(&path)?;
        fitted.run.checkpoint_ref = Some(path);
    }
    Ok(CellOutcome::Completed { run: fitted.run, dev, test, test_predictions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthetic::separable_split;
    use crate::corpus::{SplitName, TaskId};

    #[test]
    fn empty_rate_set_trains_nothing() {
        let train = separable_split(TaskId::Disinfo2A, SplitName::Train, 4, 4, 0);
        let data = SweepData { train: &train, dev: &train, test: None };
        let base = TrainConfig::published(TaskId::Disinfo2A, "stub:tiny", 0.0, 0);
        let report = dropout_sweep(&base, &[], &data, None);
        assert!(report.cells.is_empty());
        assert!(report.loss_curve().is_empty());
    }

    #[test]
    fn two_rates_three_epochs_each() {
        let train = separable_split(TaskId::Disinfo2A, SplitName::Train, 13, 51, 1);
        let dev = separable_split(TaskId::Disinfo2A, SplitName::Dev, 8, 24, 2);
        let data = SweepData { train: &train, dev: &dev, test: Some(&dev) };
        let base = TrainConfig::published(TaskId::Disinfo2A, "stub:tiny", 0.0, 0);
        let report = dropout_sweep(&base, &[0.5, 0.0], &data, None);
        assert_eq!(report.cells.iter().map(|c| c.dropout_rate).collect::<Vec<_>>(), vec![0.0, 0.5]);
        for (_, run, _, test) in report.completed() {
            assert_eq!(run.epoch_losses.len(), 3);
            assert!(test.is_some());
        }
        assert_eq!(report.loss_curve().len(), 6);
    }

    #[test]
    fn invalid_rate_marks_cell_failed_and_continues() {
        let train = separable_split(TaskId::Disinfo2A, SplitName::Train, 4, 4, 0);
        let data = SweepData { train: &train, dev: &train, test: None };
        let base = TrainConfig { epochs: 1, ..TrainConfig::published(TaskId::Disinfo2A, "stub:tiny", 0.0, 0) };
        let report = dropout_sweep(&base, &[0.1, 1.5], &data, None);
        assert!(matches!(report.cells[0].outcome, CellOutcome::Completed { .. }));
        assert!(matches!(&report.cells[1].outcome, CellOutcome::Failed { error } if error.contains("dropout_rate")));
    }
}
