//! Config-driven experiments: manifests, report tables, loss curves,
//! comparison with published results and dataset audits.

pub mod audit;
pub mod config;
pub mod manifest;
pub mod reference;
pub mod report;

use std::path::PathBuf;

use crate::corpus::CorpusError;
use crate::finetune::FinetuneError;
use crate::llm_probe::ProbeError;
use crate::metrics::MetricsError;

pub use audit::{audit_dataset, audit_splits, reference_fixture, AuditReport, Divergence};
pub use config::{ExperimentConfig, Mode, Plan, ProbeBackend};
pub use manifest::{run, run_config, write_manifest, Artifact, ConfigSnapshot, DataFingerprint, ExperimentManifest, Results, RunOverrides};
pub use report::{compare_to_paper, emit_loss_curves, loss_curve_csv, published_table, results_table, ReportRow, ReportTable, Scores};

/// Process exit status for a successful command.
pub const EXIT_OK: i32 = 0;
/// Invalid input: config, data, or an audit that found divergences.
pub const EXIT_VALIDATION: i32 = 1;
/// Failure while running: I/O, provider, training.
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum ExpmanError {
    #[error("invalid config field `{field}`: {reason}")]
    ConfigInvalid { field: String, reason: String },
    #[error("no published reference for mode {mode} on task {task}")]
    NoReferenceForMode { mode: String, task: String },
    #[error("manifest holds no training runs")]
    NoTrainingRuns,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {message}")]
    ManifestParse { path: PathBuf, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Finetune(#[from] FinetuneError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl ExpmanError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ExpmanError::ConfigInvalid { .. } | ExpmanError::NoReferenceForMode { .. } | ExpmanError::NoTrainingRuns | ExpmanError::ManifestParse { .. } => {
                EXIT_VALIDATION
            }
            ExpmanError::Corpus(CorpusError::Io { .. }) => EXIT_RUNTIME,
            ExpmanError::Corpus(_) => EXIT_VALIDATION,
            ExpmanError::Metrics(MetricsError::ParseFailure { source: CorpusError::Io { .. }, .. }) => EXIT_RUNTIME,
            ExpmanError::Metrics(_) => EXIT_VALIDATION,
            ExpmanError::Finetune(FinetuneError::InvalidConfig { .. }) => EXIT_VALIDATION,
            ExpmanError::Probe(ProbeError::EmptyQuery | ProbeError::InsufficientData { .. } | ProbeError::TaskMismatch { .. }) => EXIT_VALIDATION,
            ExpmanError::Io { .. } | ExpmanError::Finetune(_) | ExpmanError::Probe(_) => EXIT_RUNTIME,
        }
    }
}
