//! Experiment config files (TOML), one schema per mode.
//!
//! ```toml
//! mode = "finetune"          # finetune | sweep | search | llm_probe | score
//! task = "1A"
//! seed = 42
//!
//! [data]                     # paths relative to this file
//! train = "data/train.jsonl"
//! dev = "data/dev.jsonl"
//! test = "data/test.jsonl"
//!
//! [train]
//! encoder_id = "stub:tiny"
//! dropout_rate = 0.1
//! learning_rate = 4e-5
//! batch_size = 16
//! epochs = 3
//! max_seq_len = 128
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExpmanError;
use crate::corpus::TaskId;
use crate::finetune::{Reduction, SearchSpace, TrainConfig};
use crate::llm_probe::{ProbeOptions, ProviderConfig};
use crate::textprep::NormalizationConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Finetune,
    Sweep,
    Search,
    LlmProbe,
    Score,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Finetune => "finetune",
            Mode::Sweep => "sweep",
            Mode::Search => "search",
            Mode::LlmProbe => "llm_probe",
            Mode::Score => "score",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where `llm_probe` answers come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeBackend {
    /// The chat-completion endpoint in `[provider]`.
    #[default]
    Http,
    /// Cache only; a miss is a failed sample.
    Replay,
    /// Answers every query with its gold label. For dry runs of the harness.
    EchoGold,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DataPaths {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    pub pred: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbePlan {
    pub provider: ProviderConfig,
    pub options: ProbeOptions,
    pub backend: ProbeBackend,
    /// Exchange cache file; defaults to `cache.jsonl` in the output dir.
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Plan {
    Finetune(TrainConfig),
    Sweep { base: TrainConfig, dropout_rates: Vec<f64> },
    Search { base: TrainConfig, space: SearchSpace, budget: usize, search_seed: u64 },
    LlmProbe(ProbePlan),
    Score,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    pub mode: Mode,
    pub task_id: TaskId,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    /// Published setting to compare against; inferred from the encoder id
    /// when absent.
    pub reference_model: Option<String>,
    pub data: DataPaths,
    pub normalization: NormalizationConfig,
    pub plan: Plan,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment_id: Option<String>,
    mode: Option<String>,
    task: Option<String>,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    reference_model: Option<String>,
    data: Option<DataPaths>,
    train: Option<RawTrain>,
    sweep: Option<RawSweep>,
    search: Option<RawSearch>,
    probe: Option<RawProbe>,
    provider: Option<toml::Table>,
    normalization: Option<NormalizationConfig>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrain {
    encoder_id: Option<String>,
    dropout_rate: Option<f64>,
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    epochs: Option<usize>,
    max_seq_len: Option<usize>,
    class_weights: Option<BTreeMap<String, f64>>,
    weight_decay: Option<f64>,
    reduction: Option<Reduction>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    dropout_rates: Option<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSearch {
    dropout_rates: Option<Vec<f64>>,
    learning_rates: Option<Vec<f64>>,
    batch_sizes: Option<Vec<usize>>,
    epochs: Option<Vec<usize>>,
    budget: Option<usize>,
    seed: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProbe {
    backend: Option<ProbeBackend>,
    shots: Option<usize>,
    shot_seed: Option<u64>,
    workers: Option<usize>,
    max_error_fraction: Option<f64>,
    cache: Option<PathBuf>,
}

fn invalid(field: &str, reason: impl Into<String>) -> ExpmanError {
    ExpmanError::ConfigInvalid { field: field.to_string(), reason: reason.into() }
}

fn require<T>(value: Option<T>, field: &str) -> Result<T, ExpmanError> {
    value.ok_or_else(|| invalid(field, "required field is missing"))
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExpmanError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ExpmanError::Io { path: path.to_path_buf(), source })?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "experiment".into());
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, &stem, base)
    }

    /// Parses config text. Relative paths are resolved against `base_dir`;
    /// `default_id` names the experiment when the file does not.
    pub fn parse(text: &str, default_id: &str, base_dir: &Path) -> Result<Self, ExpmanError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| invalid("<file>", e.message().to_string()))?;
        let mode_name = require(raw.mode, "mode")?;
        let mode: Mode = serde_json::from_value(serde_json::Value::String(mode_name.clone()))
            .map_err(|_| invalid("mode", format!("unknown mode {mode_name:?}")))?;
        let task_id: TaskId = require(raw.task, "task")?.parse().map_err(|e: String| invalid("task", e))?;
        let seed = raw.seed.unwrap_or(0);
        let normalization = raw.normalization.unwrap_or_default();
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base_dir.join(p) };
        let data = raw.data.unwrap_or_default();
        let data = DataPaths {
            train: data.train.map(resolve),
            dev: data.dev.map(resolve),
            test: data.test.map(resolve),
            gold: data.gold.map(resolve),
            pred: data.pred.map(resolve),
        };

        let train_config = |needs_dropout: bool| -> Result<TrainConfig, ExpmanError> {
            let t = require(raw.train.as_ref(), "train")?;
            let dropout = if needs_dropout { require(t.dropout_rate, "dropout_rate")? } else { t.dropout_rate.unwrap_or(0.0) };
            let mut config = TrainConfig::published(task_id, require(t.encoder_id.clone(), "encoder_id")?, dropout, seed);
            config.learning_rate = require(t.learning_rate, "learning_rate")?;
            config.batch_size = require(t.batch_size, "batch_size")?;
            config.epochs = require(t.epochs, "epochs")?;
            config.max_seq_len = require(t.max_seq_len, "max_seq_len")?;
            if let Some(w) = &t.class_weights {
                config.class_weights = w.clone();
            }
            if let Some(wd) = t.weight_decay {
                config.weight_decay = wd;
            }
            if let Some(r) = t.reduction {
                config.reduction = r;
            }
            config.normalization = normalization;
            config.validate().map_err(|e| match e {
                crate::finetune::FinetuneError::InvalidConfig { field, reason } => invalid(field, reason),
                other => invalid("train", other.to_string()),
            })?;
            Ok(config)
        };
        let need = |p: &Option<PathBuf>, field: &str| -> Result<(), ExpmanError> {
            if p.is_none() {
                return Err(invalid(field, "required data path is missing"));
            }
            Ok(())
        };

        let plan = match mode {
            Mode::Finetune => {
                need(&data.train, "data.train")?;
                need(&data.dev, "data.dev")?;
                Plan::Finetune(train_config(true)?)
            }
            Mode::Sweep => {
                need(&data.train, "data.train")?;
                need(&data.dev, "data.dev")?;
                let rates = require(raw.sweep.as_ref().and_then(|s| s.dropout_rates.clone()), "dropout_rates")?;
                if let Some(bad) = rates.iter().find(|r| !(0.0..1.0).contains(*r)) {
                    return Err(invalid("dropout_rates", format!("{bad} is outside [0, 1)")));
                }
                Plan::Sweep { base: train_config(false)?, dropout_rates: rates }
            }
            Mode::Search => {
                need(&data.train, "data.train")?;
                need(&data.dev, "data.dev")?;
                let base = train_config(false)?;
                let s = require(raw.search, "search")?;
                let space = SearchSpace {
                    dropout_rates: s.dropout_rates.unwrap_or_else(|| vec![base.dropout_rate]),
                    learning_rates: s.learning_rates.unwrap_or_else(|| vec![base.learning_rate]),
                    batch_sizes: s.batch_sizes.unwrap_or_else(|| vec![base.batch_size]),
                    epochs: s.epochs.unwrap_or_else(|| vec![base.epochs]),
                };
                if space.is_empty() {
                    return Err(invalid("search", "search space has no configurations"));
                }
                let budget = require(s.budget, "budget")?;
                if budget == 0 {
                    return Err(invalid("budget", "must be at least 1"));
                }
                Plan::Search { base, space, budget, search_seed: s.seed.unwrap_or(seed) }
            }
            Mode::LlmProbe => {
                need(&data.train, "data.train")?;
                need(&data.test, "data.test")?;
                let p = raw.probe.unwrap_or(RawProbe { backend: None, shots: None, shot_seed: None, workers: None, max_error_fraction: None, cache: None });
                let provider_table = require(raw.provider, "provider")?;
                if !provider_table.contains_key("model_id") {
                    return Err(invalid("model_id", "required field is missing"));
                }
                let provider: ProviderConfig =
                    provider_table.try_into().map_err(|e: toml::de::Error| invalid("provider", e.message().to_string()))?;
                let defaults = ProbeOptions::default();
                let options = ProbeOptions {
                    shots: p.shots.unwrap_or(defaults.shots),
                    shot_seed: p.shot_seed.unwrap_or(seed),
                    workers: p.workers.unwrap_or(defaults.workers),
                    max_error_fraction: p.max_error_fraction.unwrap_or(defaults.max_error_fraction),
                };
                if !(0.0..=1.0).contains(&options.max_error_fraction) {
                    return Err(invalid("max_error_fraction", "must be within [0, 1]"));
                }
                Plan::LlmProbe(ProbePlan { provider, options, backend: p.backend.unwrap_or_default(), cache: p.cache.map(resolve) })
            }
            Mode::Score => {
                need(&data.gold, "data.gold")?;
                need(&data.pred, "data.pred")?;
                Plan::Score
            }
        };
        Ok(ExperimentConfig {
            experiment_id: raw.experiment_id.unwrap_or_else(|| default_id.to_string()),
            mode,
            task_id,
            seed,
            out_dir: raw.out_dir.map(resolve),
            reference_model: raw.reference_model,
            data,
            normalization,
            plan,
        })
    }
}
