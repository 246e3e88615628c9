//! Encoder + dropout + linear head fine-tuning with class-weighted
//! cross-entropy, dropout sweeps and randomized grid search.

pub mod encoder;
pub mod loss;
pub mod model;
pub mod optim;
pub mod search;
pub mod sweep;
pub mod train;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::corpus::{LabelVocab, TaskId};
use crate::metrics::{EvalResult, MetricsError};
use crate::textprep::{NormalizationConfig, TextprepError};

pub use encoder::{Encoder, TinyEncoder};
pub use loss::{cross_entropy, weighted_cross_entropy, weighted_cross_entropy_with_logits, LossError, LossInputs, LossValue, Reduction};
pub use model::{argmax, ClassifierHead, Mode, ModelAssembly};
pub use optim::AdamW;
pub use search::{hyperparameter_search, hyperparameter_search_with, SearchOutcome, SearchSpace, Trial};
pub use sweep::{dropout_sweep, CellOutcome, LossPoint, SweepCell, SweepData, SweepReport};
pub use train::{fit, predict, predict_probabilities, train, Checkpoint, FittedModel};

#[derive(Debug, thiserror::Error)]
pub enum FinetuneError {
    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("encoder failure: {0}")]
    Encoder(String),
    #[error("out of resources: {0}")]
    OutOfResource(String),
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Textprep(#[from] TextprepError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint {path}: {message}")]
    MalformedCheckpoint { path: PathBuf, message: String },
    #[error("search space has no configurations")]
    EmptySearchSpace,
    #[error("every searched configuration failed")]
    AllConfigsFailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Optimizer {
    #[default]
    AdamW,
}

/// Every hyperparameter of one fine-tuning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task_id: TaskId,
    /// `stub:tiny[:<buckets>]` for the built-in encoder, otherwise the id of
    /// a pretrained encoder served by an external adapter.
    pub encoder_id: String,
    pub dropout_rate: f64,
    /// Weight per class name; must cover the task vocabulary.
    pub class_weights: BTreeMap<String, f64>,
    pub max_seq_len: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub weight_decay: f64,
    pub reduction: Reduction,
    pub seed: u64,
    pub normalization: NormalizationConfig,
}

impl TrainConfig {
    pub const MAX_SEQ_LEN: usize = 128;
    pub const BATCH_SIZE: usize = 16;
    pub const EPOCHS: usize = 3;
    pub const LEARNING_RATE: f64 = 4e-5;
    pub const MINORITY_WEIGHT: f64 = 4.0;
    pub const WEIGHT_DECAY: f64 = 0.01;

    /// Published recipe: 128 tokens, batch 16, 3 epochs, AdamW at 4e-5, and
    /// a 4x loss weight on the task's minority class.
    pub fn published(task_id: TaskId, encoder_id: impl Into<String>, dropout_rate: f64, seed: u64) -> Self {
        let vocab = task_id.vocab();
        let minority = minority_class(task_id);
        let class_weights = vocab
            .classes()
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), if i == minority { Self::MINORITY_WEIGHT } else { 1.0 }))
            .collect();
        TrainConfig {
            task_id,
            encoder_id: encoder_id.into(),
            dropout_rate,
            class_weights,
            max_seq_len: Self::MAX_SEQ_LEN,
            batch_size: Self::BATCH_SIZE,
            epochs: Self::EPOCHS,
            learning_rate: Self::LEARNING_RATE,
            optimizer: Optimizer::AdamW,
            weight_decay: Self::WEIGHT_DECAY,
            reduction: Reduction::WeightedMean,
            seed,
            normalization: NormalizationConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), FinetuneError> {
        let invalid = |field, reason: String| Err(FinetuneError::InvalidConfig { field, reason });
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return invalid("dropout_rate", format!("{} is outside [0, 1)", self.dropout_rate));
        }
        if self.epochs < 1 {
            return invalid("epochs", "must be at least 1".into());
        }
        if self.batch_size < 1 {
            return invalid("batch_size", "must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return invalid("learning_rate", format!("{} is not positive", self.learning_rate));
        }
        if self.max_seq_len < 2 {
            return invalid("max_seq_len", "must leave room for begin/end markers".into());
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return invalid("weight_decay", format!("{} is negative", self.weight_decay));
        }
        self.weight_vector(&self.task_id.vocab()).map(|_| ())
    }

    /// Class weights in vocabulary order.
    pub fn weight_vector(&self, vocab: &LabelVocab) -> Result<Vec<f64>, FinetuneError> {
        if self.class_weights.len() != vocab.len() {
            return Err(FinetuneError::InvalidConfig {
                field: "class_weights",
                reason: format!("expected weights for {:?}", vocab.classes()),
            });
        }
        vocab
            .classes()
            .iter()
            .map(|c| match self.class_weights.get(c) {
                Some(&w) if w > 0.0 && w.is_finite() => Ok(w),
                Some(&w) => Err(FinetuneError::InvalidConfig { field: "class_weights", reason: format!("{c}: {w} is not positive") }),
                None => Err(FinetuneError::InvalidConfig { field: "class_weights", reason: format!("no weight for class {c:?}") }),
            })
            .collect()
    }
}

/// Minority class index of each task's training data (non-prop for 1A,
/// disinfo for 2A).
pub fn minority_class(task_id: TaskId) -> usize {
    match task_id {
        TaskId::Persuasion1A => 1,
        TaskId::Disinfo2A => 0,
    }
}

/// Outcome of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRun {
    pub config: TrainConfig,
    /// Mean training loss of each epoch, in order.
    pub epoch_losses: Vec<f64>,
    /// Dev-set evaluation after each epoch.
    pub dev_evals: Vec<EvalResult>,
    /// Epoch (1-based) with the best dev micro-F1; the final epoch is what
    /// the checkpoint holds.
    pub best_dev_epoch: usize,
    pub checkpoint_ref: Option<PathBuf>,
    pub wallclock_secs: f64,
}

impl TrainingRun {
    pub fn final_dev(&self) -> &EvalResult {
        self.dev_evals.last().expect("at least one epoch")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_weights_favour_minority() {
        let c = TrainConfig::published(TaskId::Persuasion1A, "stub:tiny", 0.1, 0);
        assert_eq!(c.weight_vector(&TaskId::Persuasion1A.vocab()).unwrap(), vec![1.0, 4.0]);
        let c = TrainConfig::published(TaskId::Disinfo2A, "stub:tiny", 0.1, 0);
        assert_eq!(c.class_weights["disinfo"], 4.0);
        assert_eq!(c.class_weights["no-disinfo"], 1.0);
        assert_eq!((c.max_seq_len, c.batch_size, c.epochs, c.learning_rate), (128, 16, 3, 4e-5));
        c.validate().unwrap();
    }

    #[test]
    fn validation_names_the_field() {
        let base = TrainConfig::published(TaskId::Persuasion1A, "stub:tiny", 0.1, 0);
        let cases: Vec<(TrainConfig, &str)> = vec![
            (TrainConfig { dropout_rate: 1.0, ..base.clone() }, "dropout_rate"),
            (TrainConfig { epochs: 0, ..base.clone() }, "epochs"),
            (TrainConfig { batch_size: 0, ..base.clone() }, "batch_size"),
            (TrainConfig { learning_rate: 0.0, ..base.clone() }, "learning_rate"),
            (TrainConfig { max_seq_len: 1, ..base.clone() }, "max_seq_len"),
            (TrainConfig { class_weights: BTreeMap::from([("prop".into(), 1.0), ("non-prop".into(), 0.0)]), ..base.clone() }, "class_weights"),
            (TrainConfig { class_weights: BTreeMap::from([("prop".into(), 1.0)]), ..base.clone() }, "class_weights"),
        ];
        for (config, field) in cases {
            match config.validate() {
                Err(FinetuneError::InvalidConfig { field: f, .. }) => assert_eq!(f, field),
                other => panic!("{field}: {other:?}"),
            }
        }
    }
}
