//! Experiment manifests and the `run` dispatcher.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, Mode, Plan, ProbeBackend};
use super::report::{loss_curve_csv, results_table};
use super::ExpmanError;
use crate::corpus::{load_split, read_predictions, write_predictions, DatasetSplit, SplitName, TaskId};
use crate::finetune::{dropout_sweep, fit, hyperparameter_search, CellOutcome, SearchOutcome, SweepData, SweepReport, TrainConfig, TrainingRun};
use crate::llm_probe::{
    instruction, query_of, run_probe, ChatProvider, Demonstration, ExchangeCache, HttpProvider, MockProvider, ProbeError, ProbeOptions, ProbeRow,
    ProviderConfig, ProviderError, ProviderResponse, ReplayOnly, PROMPT_VERSION,
};
use crate::metrics::{score_pairs, EvalResult};
use crate::textprep::NormalizationConfig;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataFingerprint {
    /// `train`, `dev`, `test`, `gold` or `pred`.
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub kind: String,
    /// Relative to the directory holding the manifest.
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfigSnapshot {
    Finetune { train: TrainConfig },
    Sweep { base: TrainConfig, dropout_rates: Vec<f64> },
    Search { base: TrainConfig, space: crate::finetune::SearchSpace, budget: usize, search_seed: u64 },
    LlmProbe { provider: ProviderConfig, options: ProbeOptions, backend: ProbeBackend, prompt_version: String, instruction: String },
    Score,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub row: ProbeRow,
    pub eval: EvalResult,
    pub model_id: String,
    pub demonstrations: Vec<Demonstration>,
    pub fallback_label: String,
    pub fallbacks: usize,
    pub failures: usize,
    pub cache_hits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Results {
    Finetune {
        run: TrainingRun,
        /// Final-epoch model on the test split, when one was given. The
        /// checkpoint and prediction files hold this model.
        test: Option<EvalResult>,
        /// Dev-best model (epoch `run.best_dev_epoch`) on the test split.
        #[serde(default)]
        test_at_best_dev: Option<EvalResult>,
    },
    Sweep(SweepReport),
    Search(SearchOutcome),
    LlmProbe(ProbeSummary),
    Score { eval: EvalResult },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub format_version: u32,
    pub experiment_id: String,
    pub task_id: TaskId,
    pub mode: Mode,
    pub seed: u64,
    pub reference_model: Option<String>,
    pub config: ConfigSnapshot,
    pub normalization: NormalizationConfig,
    pub data: Vec<DataFingerprint>,
    pub results: Results,
    pub artifacts: Vec<Artifact>,
    pub started_at: String,
    pub finished_at: String,
}

impl ExperimentManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExpmanError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ExpmanError::Io { path: path.to_path_buf(), source })?;
        serde_json::from_str(&text).map_err(|e| ExpmanError::ManifestParse { path: path.to_path_buf(), message: e.to_string() })
    }

    /// Every training run recorded, with its dropout rate.
    pub fn training_runs(&self) -> Vec<&TrainingRun> {
        match &self.results {
            Results::Finetune { run, .. } => vec![run],
            Results::Sweep(report) => report.completed().map(|(_, run, _, _)| run).collect(),
            _ => Vec::new(),
        }
    }

    pub fn artifact(&self, kind: &str) -> Option<&Path> {
        self.artifacts.iter().find(|a| a.kind == kind).map(|a| a.path.as_path())
    }
}

pub fn fingerprint(role: &str, path: &Path) -> Result<DataFingerprint, ExpmanError> {
    let io = |source| ExpmanError::Io { path: path.to_path_buf(), source };
    let mut file = File::open(path).map_err(io)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    let mut bytes = 0u64;
    loop {
        let n = file.read(&mut buf).map_err(io)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        bytes += n as u64;
    }
    Ok(DataFingerprint { role: role.into(), path: path.to_path_buf(), sha256: hex::encode(hasher.finalize()), bytes })
}

/// Writes `contents` to a sibling temp file, then renames it into place, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), ExpmanError> {
    let io = |source| ExpmanError::Io { path: path.to_path_buf(), source };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut out = BufWriter::new(File::create(&tmp).map_err(io)?);
        out.write_all(contents).map_err(io)?;
        out.into_inner().map_err(|e| io(e.into_error()))?.sync_all().map_err(io)?;
    }
    std::fs::rename(&tmp, path).map_err(io)
}

pub fn write_manifest(manifest: &ExperimentManifest, dir: &Path) -> Result<PathBuf, ExpmanError> {
    let path = dir.join(MANIFEST_FILE);
    let mut json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    json.push('\n');
    write_atomic(&path, json.as_bytes())?;
    Ok(path)
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub task_id: Option<TaskId>,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

struct Ctx<'a> {
    out: &'a Path,
    task_id: TaskId,
    artifacts: Vec<Artifact>,
    data: Vec<DataFingerprint>,
}

impl Ctx<'_> {
    fn load(&mut self, role: &str, path: &Option<PathBuf>, split: SplitName) -> Result<DatasetSplit, ExpmanError> {
        let path = path.as_ref().expect("config validation requires this path");
        self.data.push(fingerprint(role, path)?);
        Ok(load_split(path, self.task_id, split)?)
    }

    fn artifact(&mut self, kind: &str, rel: impl Into<PathBuf>) -> PathBuf {
        let rel = rel.into();
        self.artifacts.push(Artifact { kind: kind.into(), path: rel.clone() });
        self.out.join(rel)
    }

    fn predictions(&mut self, kind: &str, file: &str, pairs: &[(String, String)]) -> Result<(), ExpmanError> {
        let path = self.artifact(kind, file);
        let (ids, labels): (Vec<&str>, Vec<&str>) = pairs.iter().map(|(i, l)| (i.as_str(), l.as_str())).unzip();
        write_predictions(&ids, &labels, path)?;
        Ok(())
    }
}

fn with_seed(mut config: TrainConfig, seed: u64, task_id: TaskId) -> TrainConfig {
    config.seed = seed;
    if config.task_id != task_id {
        let weights = TrainConfig::published(task_id, "", 0.0, 0).class_weights;
        config.task_id = task_id;
        config.class_weights = weights;
    }
    config
}

/// Loads, validates and executes the experiment at `config_path`, writing
/// artifacts and finally `manifest.json` under the output directory
/// (`--out`, else `out_dir` from the file, else `runs/<experiment_id>` next
/// to the config).
pub fn run(config_path: impl AsRef<Path>, overrides: &RunOverrides) -> Result<ExperimentManifest, ExpmanError> {
    let config_path = config_path.as_ref();
    let config = ExperimentConfig::load(config_path)?;
    let default_out = config_path.parent().unwrap_or(Path::new("")).join("runs").join(&config.experiment_id);
    let out = overrides.out_dir.clone().or_else(|| config.out_dir.clone()).unwrap_or(default_out);
    run_config(config, &out, overrides)
}

pub fn run_config(mut config: ExperimentConfig, out: &Path, overrides: &RunOverrides) -> Result<ExperimentManifest, ExpmanError> {
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    if let Some(task) = overrides.task_id {
        config.task_id = task;
    }
    std::fs::create_dir_all(out).map_err(|source| ExpmanError::Io { path: out.to_path_buf(), source })?;
    let started_at = now();
    let task_id = config.task_id;
    let seed = config.seed;
    let mut ctx = Ctx { out, task_id, artifacts: Vec::new(), data: Vec::new() };

    let (snapshot, results) = match config.plan.clone() {
        Plan::Finetune(train_config) => {
            let train_config = with_seed(train_config, seed, task_id);
            let train = ctx.load("train", &config.data.train, SplitName::Train)?;
            let dev = ctx.load("dev", &config.data.dev, SplitName::Dev)?;
            let test = match config.data.test {
                Some(_) => Some(ctx.load("test", &config.data.test, SplitName::Test)?),
                None => None,
            };
            let mut fitted = fit(&train_config, &train, &dev)?;
            let checkpoint = ctx.artifact("checkpoint", "checkpoint.json");
            fitted.checkpoint().save(&checkpoint)?;
            fitted.run.checkpoint_ref = Some(PathBuf::from("checkpoint.json"));
            let dev_pairs: Vec<(String, String)> = dev.ids().into_iter().map(String::from).zip(fitted.predict(&dev)?).collect();
            ctx.predictions("predictions_dev", "predictions-dev.tsv", &dev_pairs)?;
            let (test_eval, test_at_best_dev) = match &test {
                Some(split) => {
                    let pairs: Vec<(String, String)> = split.ids().into_iter().map(String::from).zip(fitted.predict(split)?).collect();
                    ctx.predictions("predictions_test", "predictions-test.tsv", &pairs)?;
                    (Some(fitted.evaluate(split)?), Some(fitted.evaluate_best_dev(split)?))
                }
                None => (None, None),
            };
            (ConfigSnapshot::Finetune { train: train_config }, Results::Finetune { run: fitted.run, test: test_eval, test_at_best_dev })
        }
        Plan::Sweep { base, dropout_rates } => {
            let base = with_seed(base, seed, task_id);
            let train = ctx.load("train", &config.data.train, SplitName::Train)?;
            let dev = ctx.load("dev", &config.data.dev, SplitName::Dev)?;
            let test = match config.data.test {
                Some(_) => Some(ctx.load("test", &config.data.test, SplitName::Test)?),
                None => None,
            };
            let data = SweepData { train: &train, dev: &dev, test: test.as_ref() };
            let mut report = dropout_sweep(&base, &dropout_rates, &data, Some(out));
            for cell in &mut report.cells {
                if let CellOutcome::Completed { run, test_predictions, .. } = &mut cell.outcome {
                    let dir = PathBuf::from(format!("dropout-{}", cell.dropout_rate));
                    let rel = dir.join("checkpoint.json");
                    ctx.artifacts.push(Artifact { kind: "checkpoint".into(), path: rel.clone() });
                    run.checkpoint_ref = Some(rel);
                    if !test_predictions.is_empty() {
                        let file = dir.join("predictions-test.tsv");
                        ctx.predictions("predictions_test", &file.to_string_lossy(), test_predictions)?;
                        test_predictions.clear();
                    }
                }
            }
            (ConfigSnapshot::Sweep { base, dropout_rates }, Results::Sweep(report))
        }
        Plan::Search { base, space, budget, search_seed } => {
            let base = with_seed(base, seed, task_id);
            let train = ctx.load("train", &config.data.train, SplitName::Train)?;
            let dev = ctx.load("dev", &config.data.dev, SplitName::Dev)?;
            let outcome = hyperparameter_search(&base, &space, budget, search_seed, &train, &dev)?;
            (ConfigSnapshot::Search { base, space, budget, search_seed }, Results::Search(outcome))
        }
        Plan::LlmProbe(plan) => {
            let train = ctx.load("train", &config.data.train, SplitName::Train)?;
            let test = ctx.load("test", &config.data.test, SplitName::Test)?;
            let cache_path = match &plan.cache {
                Some(p) => p.clone(),
                None => ctx.artifact("cache", "cache.jsonl"),
            };
            let cache = ExchangeCache::open(&cache_path)?;
            let provider: Box<dyn ChatProvider> = match plan.backend {
                ProbeBackend::Http => Box::new(HttpProvider::from_env(&plan.provider).map_err(|e| {
                    ExpmanError::Probe(match e {
                        ProviderError::AuthFailure(m) => ProbeError::AuthFailure(m),
                        other => ProbeError::Provider(other.to_string()),
                    })
                })?),
                ProbeBackend::Replay => Box::new(ReplayOnly),
                ProbeBackend::EchoGold => Box::new(echo_gold(&test)),
            };
            let report = run_probe(&train, &test, &plan.options, &plan.provider, provider.as_ref(), &cache)?;
            ctx.predictions("predictions_test", "predictions-test.tsv", &report.predictions())?;
            let records = ctx.artifact("probe_records", "probe-records.jsonl");
            let mut lines = String::new();
            for r in &report.records {
                lines.push_str(&serde_json::to_string(r).expect("record serializes"));
                lines.push('\n');
            }
            write_atomic(&records, lines.as_bytes())?;
            let summary = ProbeSummary {
                row: report.row.clone(),
                eval: report.eval.clone(),
                model_id: report.model_id.clone(),
                demonstrations: report.demonstrations.clone(),
                fallback_label: report.fallback_label.clone(),
                fallbacks: report.records.iter().filter(|r| r.fallback).count(),
                failures: report.records.iter().filter(|r| r.error.is_some()).count(),
                cache_hits: report.cache_hits,
            };
            let snapshot = ConfigSnapshot::LlmProbe {
                provider: plan.provider,
                options: plan.options,
                backend: plan.backend,
                prompt_version: PROMPT_VERSION.into(),
                instruction: instruction(task_id),
            };
            (snapshot, Results::LlmProbe(summary))
        }
        Plan::Score => {
            let gold_path = config.data.gold.clone().expect("validated");
            let pred_path = config.data.pred.clone().expect("validated");
            ctx.data.push(fingerprint("gold", &gold_path)?);
            ctx.data.push(fingerprint("pred", &pred_path)?);
            let gold = read_predictions(&gold_path)?;
            let pred = read_predictions(&pred_path)?;
            let eval = score_pairs(&gold, &pred, &task_id.vocab())?;
            (ConfigSnapshot::Score, Results::Score { eval })
        }
    };

    let mut manifest = ExperimentManifest {
        format_version: MANIFEST_FORMAT,
        experiment_id: config.experiment_id.clone(),
        task_id,
        mode: config.mode,
        seed,
        reference_model: config.reference_model.clone(),
        config: snapshot,
        normalization: config.normalization,
        data: ctx.data,
        results,
        artifacts: ctx.artifacts,
        started_at,
        finished_at: String::new(),
    };
    if !manifest.training_runs().is_empty() {
        write_atomic(&out.join("loss-curve.csv"), loss_curve_csv(&manifest)?.as_bytes())?;
        manifest.artifacts.push(Artifact { kind: "loss_curve".into(), path: "loss-curve.csv".into() });
    }
    write_atomic(&out.join("results.tsv"), results_table(&manifest).render().as_bytes())?;
    manifest.artifacts.push(Artifact { kind: "results_table".into(), path: "results.tsv".into() });
    manifest.finished_at = now();
    write_manifest(&manifest, out)?;
    Ok(manifest)
}

/// Mock provider answering each query with the gold label of the sample
/// whose text it is.
pub fn echo_gold(split: &DatasetSplit) -> MockProvider {
    let answers: std::collections::HashMap<String, String> =
        split.samples().iter().map(|s| (s.text.split_whitespace().collect::<Vec<_>>().join(" "), s.label.clone())).collect();
    MockProvider::new(move |req| Ok(ProviderResponse::text(query_of(req.prompt).and_then(|q| answers.get(q)).cloned().unwrap_or_default())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthetic::separable_split;
    use crate::corpus::write_split;

    fn write_data(dir: &Path, task: TaskId) {
        write_split(&separable_split(task, SplitName::Train, 51, 13, 1), dir.join("train.jsonl")).unwrap();
        write_split(&separable_split(task, SplitName::Dev, 24, 8, 2), dir.join("dev.jsonl")).unwrap();
        write_split(&separable_split(task, SplitName::Test, 48, 16, 3), dir.join("test.jsonl")).unwrap();
    }

    const TRAIN: &str = "[train]\nencoder_id = \"stub:tiny\"\nlearning_rate = 4e-5\nbatch_size = 16\nepochs = 3\nmax_seq_len = 128\n";
    const DATA: &str = "[data]\ntrain = \"train.jsonl\"\ndev = \"dev.jsonl\"\ntest = \"test.jsonl\"\n";

    #[test]
    fn score_mode_gold_equals_pred() {
        let dir = tempfile::tempdir().unwrap();
        write_data(dir.path(), TaskId::Disinfo2A);
        let cfg = dir.path().join("score.toml");
        std::fs::write(&cfg, "mode = \"score\"\ntask = \"2A\"\n[data]\ngold = \"test.jsonl\"\npred = \"test.jsonl\"\n").unwrap();
        let m = run(&cfg, &RunOverrides::default()).unwrap();
        match &m.results {
            Results::Score { eval } => assert_eq!(eval.micro_f1, 1.0),
            other => panic!("{other:?}"),
        }
        assert_eq!(m.data.len(), 2);
        assert_eq!(m.data[0].sha256, m.data[1].sha256);
        let on_disk = ExperimentManifest::load(dir.path().join("runs/score/manifest.json")).unwrap();
        assert_eq!(on_disk, m);
    }

    #[test]
    fn sweep_mode_two_rates() {
        let dir = tempfile::tempdir().unwrap();
        write_data(dir.path(), TaskId::Persuasion1A);
        let cfg = dir.path().join("sweep.toml");
        std::fs::write(&cfg, format!("mode = \"sweep\"\ntask = \"1A\"\nseed = 3\n{DATA}{TRAIN}[sweep]\ndropout_rates = [0.0, 0.5]\n")).unwrap();
        let out = dir.path().join("out");
        let m = run(&cfg, &RunOverrides { out_dir: Some(out.clone()), ..Default::default() }).unwrap();
        assert_eq!(m.training_runs().len(), 2);
        let curve = std::fs::read_to_string(out.join("loss-curve.csv")).unwrap();
        assert_eq!(curve.lines().count(), 1 + 6);
        for a in &m.artifacts {
            assert!(out.join(&a.path).exists(), "{:?}", a.path);
        }
        assert!(out.join("dropout-0.5/predictions-test.tsv").exists());
    }

    #[test]
    fn finetune_mode_predictions_rescore_to_manifest() {
        let dir = tempfile::tempdir().unwrap();
        write_data(dir.path(), TaskId::Persuasion1A);
        let cfg = dir.path().join("ft.toml");
        std::fs::write(&cfg, format!("mode = \"finetune\"\ntask = \"1A\"\n{DATA}{TRAIN}dropout_rate = 0.1\n")).unwrap();
        let m = run(&cfg, &RunOverrides { seed: Some(11), ..Default::default() }).unwrap();
        assert_eq!(m.seed, 11);
        let out = dir.path().join("runs/ft");
        let Results::Finetune { test: Some(test), run, test_at_best_dev } = &m.results else { panic!() };
        assert!(test_at_best_dev.is_some());
        assert_eq!(run.config.seed, 11);
        let gold = read_predictions(dir.path().join("test.jsonl")).unwrap();
        let pred = read_predictions(out.join(m.artifact("predictions_test").unwrap())).unwrap();
        assert_eq!(&score_pairs(&gold, &pred, &TaskId::Persuasion1A.vocab()).unwrap(), test);
    }

    #[test]
    fn probe_mode_echo_gold_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        write_data(dir.path(), TaskId::Disinfo2A);
        let cfg = dir.path().join("probe.toml");
        let text = "mode = \"llm_probe\"\ntask = \"2A\"\n[data]\ntrain = \"train.jsonl\"\ntest = \"test.jsonl\"\n[probe]\nshots = 5\nbackend = \"echo-gold\"\ncache = \"cache.jsonl\"\n[provider]\nmodel_id = \"m\"\n";
        std::fs::write(&cfg, text).unwrap();
        let m = run(&cfg, &RunOverrides::default()).unwrap();
        let Results::LlmProbe(s) = &m.results else { panic!() };
        assert_eq!((s.row.micro_f1, s.row.macro_f1, s.cache_hits), (1.0, 1.0, 0));
        std::fs::write(&cfg, text.replace("echo-gold", "replay")).unwrap();
        let m = run(&cfg, &RunOverrides::default()).unwrap();
        let Results::LlmProbe(s) = &m.results else { panic!() };
        assert_eq!((s.row.micro_f1, s.cache_hits), (1.0, 64));
    }

    #[test]
    fn failed_run_writes_no_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("bad.toml");
        std::fs::write(&cfg, "mode = \"score\"\ntask = \"2A\"\n[data]\ngold = \"missing.jsonl\"\npred = \"missing.jsonl\"\n").unwrap();
        assert!(run(&cfg, &RunOverrides::default()).is_err());
        assert!(!dir.path().join("runs/bad/manifest.json").exists());
    }

    #[test]
    fn atomic_write_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.txt");
        write_atomic(&p, b"x").unwrap();
        write_atomic(&p, b"y").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"y");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
