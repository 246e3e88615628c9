//! Toolkit for binary propaganda and disinformation classification on
//! imbalanced shared-task corpora.
//!
//! The crate is organised by pipeline stage:
//!
//! * [`corpus`] loads, validates and audits labelled splits and writes
//!   submission files.
//! * [`textprep`] normalises Arabic social-media text and tokenizes it for
//!   an encoder.
//! * [`finetune`] trains an encoder + dropout + linear head with
//!   class-weighted cross-entropy, and runs dropout sweeps and randomized
//!   grid search.
//! * [`metrics`] implements the official micro/macro F1 measures.
//! * [`llm_probe`] classifies through a chat-completion provider with
//!   zero- or few-shot prompts, caching every exchange.
//! * [`expman`] ties everything together behind config files, manifests
//!   and reports.

pub mod corpus;
pub mod expman;
pub mod finetune;
pub mod llm_probe;
pub mod metrics;
pub mod textprep;

pub use corpus::{ClassDistribution, DatasetSplit, Genre, LabelVocab, LabeledSample, SplitName, TaskId};
pub use finetune::{TrainConfig, TrainingRun};
pub use metrics::{ConfusionMatrix, EvalResult};
pub use textprep::{NormalizationConfig, TokenizedSample};
pub use llm_probe::{LLMExchange, PromptSpec, ProviderConfig};
pub use expman::{ExperimentManifest, ReportTable};
