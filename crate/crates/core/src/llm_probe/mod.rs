//! Zero- and few-shot classification through a chat-completion provider,
//! with cached, replayable exchanges.

pub mod cache;
pub mod prompt;
pub mod provider;

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetSplit, TaskId};
use crate::metrics::{EvalResult, MetricsError};

pub use cache::{cache_key, CacheRecord, ExchangeCache};
pub use prompt::{build_prompt, instruction, parse_label, query_of, select_shots, Demonstration, ParsedLabel, PromptSpec, PROMPT_VERSION};
pub use provider::{ChatProvider, ChatRequest, HttpProvider, MockProvider, ProviderConfig, ProviderError, ProviderResponse, ReplayOnly};

#[derive(Debug, thiserror::Error)]
pub enum ProbeError {
    #[error("query text is empty")]
    EmptyQuery,
    #[error("asked for {requested} demonstrations but the split has {available} samples")]
    InsufficientData { requested: usize, available: usize },
    #[error("provider timed out on all {attempts} attempts")]
    ProviderTimeout { attempts: u32 },
    #[error("provider rate-limited all {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("authentication failed: {0}")]
    AuthFailure(String),
    #[error("provider failure: {0}")]
    Provider(String),
    #[error("cache i/o error on {path}: {source}")]
    CacheIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt cache {path} line {line}: {message}")]
    CacheCorrupt { path: PathBuf, line: usize, message: String },
    #[error("split task {found} does not match probe task {expected}")]
    TaskMismatch { expected: TaskId, found: TaskId },
    #[error("{failed} of {total} samples failed, above the allowed fraction {limit}")]
    TooManyFailures { failed: usize, total: usize, limit: f64 },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// One prompt/response round trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LLMExchange {
    pub cache_key: String,
    pub raw_response: String,
    pub parsed_label: ParsedLabel,
    pub latency_secs: f64,
    pub from_cache: bool,
}

/// Spaces request starts at least `60 / per_minute` seconds apart across
/// all threads sharing it.
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn per_minute(limit: Option<u32>) -> Self {
        let interval = match limit {
            Some(n) if n > 0 => Duration::from_secs_f64(60.0 / f64::from(n)),
            _ => Duration::ZERO,
        };
        RateLimiter { interval, next: Mutex::new(None) }
    }

    pub fn acquire(&self) {
        if self.interval.is_zero() {
            return;
        }
        let wait = {
            let mut next = self.next.lock().expect("limiter lock");
            let now = Instant::now();
            let slot = next.map_or(now, |t| t.max(now));
            *next = Some(slot + self.interval);
            slot - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

fn request_with_retries(
    request: &ChatRequest<'_>,
    config: &ProviderConfig,
    provider: &dyn ChatProvider,
    limiter: Option<&RateLimiter>,
) -> Result<ProviderResponse, ProbeError> {
    let attempts = config.max_retries + 1;
    let mut attempt = 0;
    loop {
        if let Some(l) = limiter {
            l.acquire();
        }
        let err = match provider.complete(request) {
            Ok(response) => return Ok(response),
            Err(e) => e,
        };
        attempt += 1;
        if err.is_retryable() && attempt < attempts {
            std::thread::sleep(config.backoff(attempt - 1));
            continue;
        }
        return Err(match err {
            ProviderError::Timeout => ProbeError::ProviderTimeout { attempts: attempt },
            ProviderError::RateLimited => ProbeError::RateLimited { attempts: attempt },
            ProviderError::AuthFailure(m) => ProbeError::AuthFailure(m),
            ProviderError::Transient(m) | ProviderError::Fatal(m) => ProbeError::Provider(m),
        });
    }
}

fn classify_limited(
    spec: &PromptSpec,
    config: &ProviderConfig,
    provider: &dyn ChatProvider,
    cache: &ExchangeCache,
    limiter: Option<&RateLimiter>,
) -> Result<LLMExchange, ProbeError> {
    let prompt = build_prompt(spec)?;
    let key = cache_key(&config.model_id, &prompt, config.temperature);
    let vocab = spec.task_id.vocab();
    let started = Instant::now();
    let lock = cache.key_lock(&key);
    let _guard = lock.lock().expect("key lock");
    let (raw, from_cache) = match cache.get(&key) {
        Some(record) => (record.response.content, true),
        None => {
            let request = ChatRequest { model_id: &config.model_id, prompt: &prompt, temperature: config.temperature, timeout: config.timeout() };
            let response = request_with_retries(&request, config, provider, limiter)?;
            let content = response.content.clone();
            cache.insert(CacheRecord {
                cache_key: key.clone(),
                model_id: config.model_id.clone(),
                temperature: config.temperature,
                prompt,
                response,
            })?;
            (content, false)
        }
    };
    Ok(LLMExchange {
        cache_key: key,
        parsed_label: parse_label(&raw, &vocab),
        raw_response: raw,
        latency_secs: started.elapsed().as_secs_f64(),
        from_cache,
    })
}

/// Classifies one prompt. A cached response is served without calling the
/// provider; otherwise the request is retried with exponential backoff on
/// timeouts, rate limits and transient failures, and the response cached.
pub fn classify(spec: &PromptSpec, config: &ProviderConfig, provider: &dyn ChatProvider, cache: &ExchangeCache) -> Result<LLMExchange, ProbeError> {
    classify_limited(spec, config, provider, cache, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeOptions {
    /// Demonstrations per prompt; 0 is zero-shot.
    pub shots: usize,
    pub shot_seed: u64,
    pub workers: usize,
    /// Largest tolerated fraction of samples whose request failed.
    pub max_error_fraction: f64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions { shots: 0, shot_seed: 0, workers: 4, max_error_fraction: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub gold: String,
    pub predicted: String,
    /// `None` when the request failed.
    pub exchange: Option<LLMExchange>,
    /// The prediction is the majority-class fallback.
    pub fallback: bool,
    pub error: Option<String>,
}

/// Shaped like a row of the zero/few-shot results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub task_id: TaskId,
    pub shots: usize,
    pub micro_f1: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub row: ProbeRow,
    pub eval: EvalResult,
    pub model_id: String,
    pub temperature: f64,
    pub prompt_version: String,
    pub demonstrations: Vec<Demonstration>,
    pub fallback_label: String,
    /// Samples answered without contacting the provider.
    pub cache_hits: usize,
    /// In the order of the evaluated split.
    pub records: Vec<SampleRecord>,
}

impl ProbeReport {
    pub fn predictions(&self) -> Vec<(String, String)> {
        self.records.iter().map(|r| (r.id.clone(), r.predicted.clone())).collect()
    }
}

/// Classifies every sample of `eval`, drawing demonstrations and the
/// fallback label from `train`. Unparseable answers and failed requests
/// both fall back to the training majority class; the run fails if
/// failed requests exceed `max_error_fraction`, or at once on an
/// authentication failure.
pub fn run_probe(
    train: &DatasetSplit,
    eval: &DatasetSplit,
    options: &ProbeOptions,
    config: &ProviderConfig,
    provider: &dyn ChatProvider,
    cache: &ExchangeCache,
) -> Result<ProbeReport, ProbeError> {
    let task_id = eval.task_id();
    if train.task_id() != task_id {
        return Err(ProbeError::TaskMismatch { expected: task_id, found: train.task_id() });
    }
    let vocab = task_id.vocab();
    let demonstrations = select_shots(train, options.shots, options.shot_seed)?;
    let fallback_label = vocab.name(train.majority_class()).to_string();
    let limiter = RateLimiter::per_minute(config.rate_limit_per_minute);
    let samples = eval.samples();

    let results: Vec<Mutex<Option<Result<LLMExchange, ProbeError>>>> = samples.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    std::thread::scope(|scope| {
        for _ in 0..options.workers.clamp(1, samples.len().max(1)) {
            scope.spawn(|| loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(sample) = samples.get(i) else { break };
                let spec = PromptSpec::new(task_id, demonstrations.clone(), sample.text.clone());
                let outcome = classify_limited(&spec, config, provider, cache, Some(&limiter));
                if matches!(outcome, Err(ProbeError::AuthFailure(_))) {
                    abort.store(true, Ordering::SeqCst);
                }
                *results[i].lock().expect("result slot") = Some(outcome);
            });
        }
    });

    let mut records = Vec::with_capacity(samples.len());
    let mut failed = 0;
    for (sample, slot) in samples.iter().zip(results) {
        match slot.into_inner().expect("result slot") {
            None => {}
            Some(Err(ProbeError::AuthFailure(m))) => return Err(ProbeError::AuthFailure(m)),
            Some(Ok(exchange)) => {
                let (predicted, fallback) = match exchange.parsed_label.label() {
                    Some(l) => (l.to_string(), false),
                    None => (fallback_label.clone(), true),
                };
                records.push(SampleRecord { id: sample.id.clone(), gold: sample.label.clone(), predicted, exchange: Some(exchange), fallback, error: None });
            }
            Some(Err(e)) => {
                failed += 1;
                records.push(SampleRecord {
                    id: sample.id.clone(),
                    gold: sample.label.clone(),
                    predicted: fallback_label.clone(),
                    exchange: None,
                    fallback: true,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    let total = samples.len();
    if total > 0 && failed as f64 / total as f64 > options.max_error_fraction {
        return Err(ProbeError::TooManyFailures { failed, total, limit: options.max_error_fraction });
    }

    let gold: Vec<usize> = records.iter().map(|r| vocab.index_of(&r.gold).expect("validated split")).collect();
    let pred: Vec<usize> = records.iter().map(|r| vocab.index_of(&r.predicted).expect("vocabulary label")).collect();
    let eval_result = EvalResult::from_indices(&gold, &pred, vocab.classes().to_vec())?;
    let cache_hits = records.iter().filter(|r| r.exchange.as_ref().is_some_and(|e| e.from_cache)).count();
    Ok(ProbeReport {
        row: ProbeRow { task_id, shots: options.shots, micro_f1: eval_result.micro_f1, macro_f1: eval_result.macro_f1 },
        eval: eval_result,
        model_id: config.model_id.clone(),
        temperature: config.temperature,
        prompt_version: PROMPT_VERSION.to_string(),
        demonstrations,
        fallback_label,
        cache_hits,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthetic::separable_split;
    use crate::corpus::SplitName;
    use std::collections::HashMap;

    fn fast(model: &str) -> ProviderConfig {
        ProviderConfig { backoff_base_ms: 0, ..ProviderConfig::new(model) }
    }

    fn echo_gold(split: &DatasetSplit) -> MockProvider {
        let answers: HashMap<String, String> =
            split.samples().iter().map(|s| (s.text.split_whitespace().collect::<Vec<_>>().join(" "), s.label.clone())).collect();
        MockProvider::new(move |req| {
            let q = query_of(req.prompt).unwrap_or_default();
            Ok(ProviderResponse::text(answers.get(q).cloned().unwrap_or_default()))
        })
    }

    fn splits() -> (DatasetSplit, DatasetSplit) {
        (
            separable_split(TaskId::Disinfo2A, SplitName::Train, 10, 30, 1),
            separable_split(TaskId::Disinfo2A, SplitName::Test, 12, 28, 2),
        )
    }

    #[test]
    fn mock_answer_parsed() {
        let spec = PromptSpec::new(TaskId::Disinfo2A, vec![], "x");
        let ex = classify(&spec, &fast("m"), &MockProvider::constant("disinfo"), &ExchangeCache::in_memory()).unwrap();
        assert_eq!(ex.parsed_label, ParsedLabel::Label("disinfo".into()));
        assert!(!ex.from_cache);
    }

    #[test]
    fn second_identical_call_is_cached() {
        let spec = PromptSpec::new(TaskId::Disinfo2A, vec![], "x");
        let mock = MockProvider::constant("no-disinfo");
        let cache = ExchangeCache::in_memory();
        let a = classify(&spec, &fast("m"), &mock, &cache).unwrap();
        let b = classify(&spec, &fast("m"), &mock, &cache).unwrap();
        assert_eq!(mock.calls(), 1);
        assert!(b.from_cache);
        assert_eq!((a.cache_key, a.raw_response), (b.cache_key, b.raw_response));
        classify(&spec, &fast("other"), &mock, &cache).unwrap();
        assert_eq!(mock.calls(), 2);
    }

    #[test]
    fn retry_exhaustion_is_timeout() {
        let mock = MockProvider::new(|_| Err(ProviderError::Timeout));
        let config = ProviderConfig { max_retries: 2, ..fast("m") };
        let err = classify(&PromptSpec::new(TaskId::Disinfo2A, vec![], "x"), &config, &mock, &ExchangeCache::in_memory()).unwrap_err();
        assert!(matches!(err, ProbeError::ProviderTimeout { attempts: 3 }));
        assert_eq!(mock.calls(), 3);
    }

    #[test]
    fn transient_failures_recover() {
        let n = AtomicUsize::new(0);
        let mock = MockProvider::new(move |_| {
            if n.fetch_add(1, Ordering::SeqCst) < 2 {
                Err(ProviderError::RateLimited)
            } else {
                Ok(ProviderResponse::text("disinfo"))
            }
        });
        let ex = classify(&PromptSpec::new(TaskId::Disinfo2A, vec![], "x"), &fast("m"), &mock, &ExchangeCache::in_memory()).unwrap();
        assert_eq!(ex.parsed_label.label(), Some("disinfo"));
        assert_eq!(mock.calls(), 3);
        let always = MockProvider::new(|_| Err(ProviderError::RateLimited));
        let err = classify(&PromptSpec::new(TaskId::Disinfo2A, vec![], "x"), &fast("m"), &always, &ExchangeCache::in_memory()).unwrap_err();
        assert!(matches!(err, ProbeError::RateLimited { attempts: 4 }));
    }

    #[test]
    fn auth_failure_not_retried() {
        let mock = MockProvider::new(|_| Err(ProviderError::AuthFailure("bad key".into())));
        let err = classify(&PromptSpec::new(TaskId::Disinfo2A, vec![], "x"), &fast("m"), &mock, &ExchangeCache::in_memory()).unwrap_err();
        assert!(matches!(err, ProbeError::AuthFailure(_)));
        assert_eq!(mock.calls(), 1);
    }

    #[test]
    fn echo_gold_scores_perfectly_and_replays() {
        let (train, test) = splits();
        let cache = ExchangeCache::in_memory();
        for shots in [0, 5] {
            let mock = echo_gold(&test);
            let options = ProbeOptions { shots, shot_seed: 3, ..ProbeOptions::default() };
            let report = run_probe(&train, &test, &options, &fast("m"), &mock, &cache).unwrap();
            assert_eq!((report.row.micro_f1, report.row.macro_f1), (1.0, 1.0));
            assert_eq!(report.demonstrations.len(), shots);
            assert_eq!(mock.calls(), test.len());
            let replay = run_probe(&train, &test, &options, &fast("m"), &ReplayOnly, &cache).unwrap();
            assert_eq!(replay.cache_hits, test.len());
            assert_eq!(replay.eval, report.eval);
        }
    }

    #[test]
    fn unparseable_falls_back_to_majority() {
        let (train, test) = splits();
        let mock = MockProvider::constant("I cannot determine this.");
        let report = run_probe(&train, &test, &ProbeOptions::default(), &fast("m"), &mock, &ExchangeCache::in_memory()).unwrap();
        assert_eq!(report.fallback_label, "no-disinfo");
        assert!(report.records.iter().all(|r| r.fallback && r.predicted == "no-disinfo"));
        assert!((report.row.micro_f1 - 28.0 / 40.0).abs() < 1e-12);
    }

    #[test]
    fn error_fraction_threshold() {
        let (train, test) = splits();
        let flaky = |limit: f64| {
            let mock = MockProvider::new(|req| {
                if query_of(req.prompt).is_some_and(|q| q.len() % 3 == 0) {
                    Err(ProviderError::Fatal("bad request".into()))
                } else {
                    Ok(ProviderResponse::text("disinfo"))
                }
            });
            let options = ProbeOptions { max_error_fraction: limit, ..ProbeOptions::default() };
            run_probe(&train, &test, &options, &fast("m"), &mock, &ExchangeCache::in_memory())
        };
        assert!(matches!(flaky(0.0), Err(ProbeError::TooManyFailures { .. })));
        let report = flaky(1.0).unwrap();
        assert!(report.records.iter().any(|r| r.error.is_some()));
        assert_eq!(report.records.len(), test.len());
    }

    #[test]
    fn auth_failure_aborts_run() {
        let (train, test) = splits();
        let mock = MockProvider::new(|_| Err(ProviderError::AuthFailure("401".into())));
        let options = ProbeOptions { max_error_fraction: 1.0, ..ProbeOptions::default() };
        assert!(matches!(run_probe(&train, &test, &options, &fast("m"), &mock, &ExchangeCache::in_memory()), Err(ProbeError::AuthFailure(_))));
        assert!(mock.calls() <= options.workers);
    }

    #[test]
    fn network_calls_equal_distinct_keys_under_concurrency() {
        let (train, _) = splits();
        let mut samples = Vec::new();
        for i in 0..40 {
            let label = if i % 2 == 0 { "disinfo" } else { "no-disinfo" };
            samples.push(crate::corpus::LabeledSample::new(format!("s{i}"), format!("نص {}", i % 5), label));
        }
        let test = DatasetSplit::new(SplitName::Test, TaskId::Disinfo2A, TaskId::Disinfo2A.vocab(), samples).unwrap();
        let mock = MockProvider::constant("disinfo");
        let options = ProbeOptions { workers: 8, ..ProbeOptions::default() };
        run_probe(&train, &test, &options, &fast("m"), &mock, &ExchangeCache::in_memory()).unwrap();
        assert_eq!(mock.calls(), 5);
    }

    #[test]
    fn zero_shot_prompts_carry_no_training_text() {
        let (train, test) = splits();
        let mock = MockProvider::constant("disinfo");
        let cache = ExchangeCache::in_memory();
        run_probe(&train, &test, &ProbeOptions::default(), &fast("m"), &mock, &cache).unwrap();
        for s in test.samples() {
            let prompt = build_prompt(&PromptSpec::new(TaskId::Disinfo2A, vec![], s.text.clone())).unwrap();
            let stored = cache.get(&cache_key("m", &prompt, 0.0)).unwrap().prompt;
            assert!(!stored.contains("Example"));
            assert_eq!(stored.matches("Text: ").count(), 1);
        }
    }

    #[test]
    fn rate_limiter_spaces_requests() {
        let l = RateLimiter::per_minute(Some(1200));
        let start = Instant::now();
        for _ in 0..4 {
            l.acquire();
        }
        assert!(start.elapsed() >= Duration::from_millis(140));
        let free = RateLimiter::per_minute(None);
        let start = Instant::now();
        for _ in 0..100 {
            free.acquire();
        }
        assert!(start.elapsed() < Duration::from_millis(50));
    }
}
