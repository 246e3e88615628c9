//! The training loop, checkpoints and prediction.
//!
//! A single seed drives parameter initialisation (stream 0), epoch shuffling
//! (stream 1) and dropout masks (stream 2). Everything runs on one thread in
//! `f64`, so identical config and seed give bit-identical losses.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{Encoder, TinyEncoder};
use super::model::{argmax, ClassifierHead, Mode, ModelAssembly};
use super::optim::AdamW;
use super::{FinetuneError, TrainConfig, TrainingRun};
use crate::corpus::{DatasetSplit, LabelVocab};
use crate::metrics::EvalResult;
use crate::textprep::{prepare_split, tokenizer_for, TokenizedSample, Tokenizer};

/// Parameter budget for the built-in stub encoder.
const STUB_MAX_PARAMS: usize = 50_000_000;
const STUB_DEFAULT_BUCKETS: u32 = 2048;

fn stub_encoder(config: &TrainConfig, tokenizer: &dyn Tokenizer) -> Result<TinyEncoder, FinetuneError> {
    let hidden = TinyEncoder::DEFAULT_HIDDEN;
    let vocab = tokenizer.vocab_size();
    if vocab.saturating_mul(hidden) > STUB_MAX_PARAMS {
        return Err(FinetuneError::OutOfResource(format!("stub encoder with {vocab} x {hidden} embeddings")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    Ok(TinyEncoder::new(config.encoder_id.clone(), vocab, hidden, &mut rng))
}

/// Tokenizer for an encoder id; bare `stub:tiny` gets the stub default size.
fn resolve_tokenizer(encoder_id: &str) -> Result<Box<dyn Tokenizer>, FinetuneError> {
    if encoder_id == "stub:tiny" {
        return Ok(tokenizer_for(&format!("stub:tiny:{STUB_DEFAULT_BUCKETS}"))?);
    }
    if encoder_id.starts_with("stub:") {
        return Ok(tokenizer_for(encoder_id)?);
    }
    Err(FinetuneError::Encoder(format!(
        "no in-process adapter for pretrained encoder {encoder_id:?}; use a `stub:` encoder or plug an Encoder implementation into `fit_with`"
    )))
}

fn check_split(config: &TrainConfig, split: &DatasetSplit) -> Result<(), FinetuneError> {
    if split.task_id() != config.task_id {
        return Err(FinetuneError::InvalidConfig {
            field: "task_id",
            reason: format!("config is for {} but the {} split is {}", config.task_id, split.split_name(), split.task_id()),
        });
    }
    Ok(())
}

/// A trained model kept in memory together with what produced it.
pub struct FittedModel {
    pub run: TrainingRun,
    /// Final-epoch model.
    pub model: ModelAssembly<TinyEncoder>,
    /// Model as it was after epoch `run.best_dev_epoch`.
    pub best_dev_model: ModelAssembly<TinyEncoder>,
    tokenizer: Box<dyn Tokenizer>,
    vocab: LabelVocab,
}

impl FittedModel {
    pub fn probabilities(&mut self, split: &DatasetSplit) -> Result<Array2<f64>, FinetuneError> {
        let batch = prepare_split(split, &self.run.config.normalization, self.tokenizer.as_ref(), self.run.config.max_seq_len)?;
        eval_probabilities(&mut self.model, &batch, self.run.config.batch_size)
    }

    /// Scores the dev-best snapshot instead of the final-epoch model.
    pub fn evaluate_best_dev(&mut self, split: &DatasetSplit) -> Result<EvalResult, FinetuneError> {
        let batch = prepare_split(split, &self.run.config.normalization, self.tokenizer.as_ref(), self.run.config.max_seq_len)?;
        let probs = eval_probabilities(&mut self.best_dev_model, &batch, self.run.config.batch_size)?;
        score(&probs, split)
    }

    pub fn predict(&mut self, split: &DatasetSplit) -> Result<Vec<String>, FinetuneError> {
        let probs = self.probabilities(split)?;
        Ok(probs.axis_iter(Axis(0)).map(|r| self.vocab.name(argmax(r)).to_string()).collect())
    }

    pub fn evaluate(&mut self, split: &DatasetSplit) -> Result<EvalResult, FinetuneError> {
        let probs = self.probabilities(split)?;
        score(&probs, split)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: Checkpoint::FORMAT_VERSION,
            config: self.run.config.clone(),
            labels: self.vocab.classes().to_vec(),
            encoder: self.model.encoder.clone(),
            head: self.model.head.clone(),
        }
    }
}

fn eval_probabilities<E: Encoder>(model: &mut ModelAssembly<E>, batch: &[TokenizedSample], batch_size: usize) -> Result<Array2<f64>, FinetuneError> {
    let mut out = Array2::zeros((batch.len(), model.classes()));
    for (k, chunk) in batch.chunks(batch_size.max(1)).enumerate() {
        let p = model.forward(chunk, Mode::Eval)?;
        let start = k * batch_size.max(1);
        out.slice_mut(ndarray::s![start..start + chunk.len(), ..]).assign(&p);
    }
    Ok(out)
}

fn score(probs: &Array2<f64>, split: &DatasetSplit) -> Result<EvalResult, FinetuneError> {
    let pred: Vec<usize> = probs.axis_iter(Axis(0)).map(argmax).collect();
    Ok(EvalResult::from_indices(&split.label_indices(), &pred, split.vocab().classes().to_vec())?)
}

/// Generic training loop over any encoder adapter. Returns the run record
/// (without checkpoint), the final-epoch model and the dev-best model.
pub fn fit_with<E: Encoder + Clone>(
    config: &TrainConfig,
    encoder: E,
    tokenizer: &dyn Tokenizer,
    train: &DatasetSplit,
    dev: &DatasetSplit,
) -> Result<(TrainingRun, ModelAssembly<E>, ModelAssembly<E>), FinetuneError> {
    config.validate()?;
    check_split(config, train)?;
    check_split(config, dev)?;
    let started = Instant::now();
    let weights = config.weight_vector(train.vocab())?;
    let train_batch = prepare_split(train, &config.normalization, tokenizer, config.max_seq_len)?;
    let dev_batch = prepare_split(dev, &config.normalization, tokenizer, config.max_seq_len)?;
    let targets = train.label_indices();

    let mut model = ModelAssembly::new(encoder, train.vocab().len(), config.dropout_rate, config.seed);
    let mut optimizer = AdamW::new(config.learning_rate, config.weight_decay);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);

    let mut order: Vec<usize> = (0..train_batch.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut dev_evals: Vec<EvalResult> = Vec::with_capacity(config.epochs);
    let mut best_dev_epoch = 1;
    let mut best = None;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut batch_losses = Vec::new();
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<TokenizedSample> = chunk.iter().map(|&i| train_batch[i].clone()).collect();
            let batch_targets: Vec<usize> = chunk.iter().map(|&i| targets[i]).collect();
            let (loss, grads) = model.loss_and_grads(&batch, &batch_targets, &weights, config.reduction)?;
            if !loss.is_finite() {
                return Err(FinetuneError::Encoder(format!("non-finite training loss {loss}")));
            }
            optimizer.step(model.params_mut(), &grads);
            batch_losses.push(loss);
        }
        epoch_losses.push(batch_losses.iter().sum::<f64>() / batch_losses.len() as f64);
        let probs = eval_probabilities(&mut model, &dev_batch, config.batch_size)?;
        let eval = score(&probs, dev)?;
        if best.is_none() || eval.micro_f1 > dev_evals[best_dev_epoch - 1].micro_f1 {
            best_dev_epoch = epoch;
            best = Some((model.encoder.clone(), model.head.clone()));
        }
        dev_evals.push(eval);
    }
    let (best_encoder, best_head) = best.expect("at least one epoch");
    let best_model = ModelAssembly::with_head(best_encoder, best_head, config.dropout_rate, config.seed);
    let run = TrainingRun {
        config: config.clone(),
        epoch_losses,
        dev_evals,
        best_dev_epoch,
        checkpoint_ref: None,
        wallclock_secs: started.elapsed().as_secs_f64(),
    };
    Ok((run, model, best_model))
}

/// Trains with the encoder named by `config.encoder_id`.
pub fn fit(config: &TrainConfig, train: &DatasetSplit, dev: &DatasetSplit) -> Result<FittedModel, FinetuneError> {
    config.validate()?;
    let tokenizer = resolve_tokenizer(&config.encoder_id)?;
    let encoder = stub_encoder(config, tokenizer.as_ref())?;
    let (run, model, best_dev_model) = fit_with(config, encoder, tokenizer.as_ref(), train, dev)?;
    Ok(FittedModel { run, model, best_dev_model, tokenizer, vocab: train.vocab().clone() })
}

/// Trains and writes the final-epoch checkpoint to `run_dir/checkpoint.json`.
pub fn train(config: &TrainConfig, train: &DatasetSplit, dev: &DatasetSplit, run_dir: &Path) -> Result<TrainingRun, FinetuneError> {
    let mut fitted = fit(config, train, dev)?;
    let path = run_dir.join("checkpoint.json");
    fitted.checkpoint().save(&path)?;
    fitted.run.checkpoint_ref = Some(path);
    Ok(fitted.run)
}

/// Serialised final weights plus the config that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: TrainConfig,
    pub labels: Vec<String>,
    pub encoder: TinyEncoder,
    pub head: ClassifierHead,
}

impl Checkpoint {
    pub const FORMAT_VERSION: u32 = 1;

    pub fn save(&self, path: &Path) -> Result<(), FinetuneError> {
        let io = |source| FinetuneError::Io { path: path.to_path_buf(), source };
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io)?;
        }
        let tmp = path.with_extension("json.tmp");
        let bytes = serde_json::to_vec(self).expect("checkpoint serialises");
        fs::write(&tmp, bytes).map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, FinetuneError> {
        let bytes = fs::read(path).map_err(|source| FinetuneError::Io { path: path.to_path_buf(), source })?;
        let ckpt: Checkpoint = serde_json::from_slice(&bytes)
            .map_err(|e| FinetuneError::MalformedCheckpoint { path: path.to_path_buf(), message: e.to_string() })?;
        if ckpt.format_version != Self::FORMAT_VERSION {
            return Err(FinetuneError::MalformedCheckpoint {
                path: path.to_path_buf(),
                message: format!("unsupported format version {}", ckpt.format_version),
            });
        }
        Ok(ckpt)
    }

    fn into_fitted(self, checkpoint_ref: PathBuf) -> Result<FittedModel, FinetuneError> {
        let tokenizer = resolve_tokenizer(&self.config.encoder_id)?;
        if self.head.classes() != self.labels.len() {
            return Err(FinetuneError::CheckpointMismatch(format!("{} head outputs for {} labels", self.head.classes(), self.labels.len())));
        }
        let best_dev_model = ModelAssembly::with_head(self.encoder.clone(), self.head.clone(), self.config.dropout_rate, self.config.seed);
        let model = ModelAssembly::with_head(self.encoder, self.head, self.config.dropout_rate, self.config.seed);
        let vocab = self.config.task_id.vocab();
        let run = TrainingRun {
            config: self.config,
            epoch_losses: Vec::new(),
            dev_evals: Vec::new(),
            best_dev_epoch: 0,
            checkpoint_ref: Some(checkpoint_ref),
            wallclock_secs: 0.0,
        };
        Ok(FittedModel { run, model, best_dev_model, tokenizer, vocab })
    }
}

fn load_for(checkpoint_ref: &Path, split: &DatasetSplit) -> Result<FittedModel, FinetuneError> {
    let ckpt = Checkpoint::load(checkpoint_ref)?;
    if ckpt.config.task_id != split.task_id() {
        return Err(FinetuneError::CheckpointMismatch(format!(
            "checkpoint is for task {} but the split is task {}",
            ckpt.config.task_id,
            split.task_id()
        )));
    }
    if ckpt.labels.as_slice() != split.vocab().classes() {
        return Err(FinetuneError::CheckpointMismatch(format!(
            "checkpoint classes {:?} differ from split classes {:?}",
            ckpt.labels,
            split.vocab().classes()
        )));
    }
    let mut fitted = ckpt.into_fitted(checkpoint_ref.to_path_buf())?;
    fitted.vocab = split.vocab().clone();
    Ok(fitted)
}

/// Eval-mode class probabilities from a saved checkpoint.
pub fn predict_probabilities(checkpoint_ref: &Path, split: &DatasetSplit) -> Result<Array2<f64>, FinetuneError> {
    load_for(checkpoint_ref, split)?.probabilities(split)
}

/// Argmax label for every sample of `split`, in sample order.
pub fn predict(checkpoint_ref: &Path, split: &DatasetSplit) -> Result<Vec<String>, FinetuneError> {
    load_for(checkpoint_ref, split)?.predict(split)
}
