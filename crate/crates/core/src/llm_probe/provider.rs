//! Chat-completion providers: the HTTP client, a replay-only provider and
//! an in-process mock.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub model_id: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    /// Requests per minute across all workers; `None` means unthrottled.
    #[serde(default)]
    pub rate_limit_per_minute: Option<u32>,
    /// First retry waits this long; each further retry doubles it.
    #[serde(default = "default_backoff")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_endpoint")]
    pub endpoint: String,
    /// Environment variable holding the bearer token.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
}

fn default_retries() -> u32 {
    3
}
fn default_timeout() -> f64 {
    60.0
}
fn default_backoff() -> u64 {
    500
}
fn default_endpoint() -> String {
    DEFAULT_ENDPOINT.into()
}
fn default_key_env() -> String {
    DEFAULT_API_KEY_ENV.into()
}

impl ProviderConfig {
    pub fn new(model_id: impl Into<String>) -> Self {
        ProviderConfig {
            model_id: model_id.into(),
            temperature: 0.0,
            max_retries: default_retries(),
            timeout_secs: default_timeout(),
            rate_limit_per_minute: None,
            backoff_base_ms: default_backoff(),
            endpoint: default_endpoint(),
            api_key_env: default_key_env(),
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs.max(0.0))
    }

    /// Delay before retry number `attempt` (0-based), capped at one minute.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let ms = self.backoff_base_ms.saturating_mul(1u64 << attempt.min(20));
        Duration::from_millis(ms.min(60_000))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest<'a> {
    pub model_id: &'a str,
    pub prompt: &'a str,
    pub temperature: f64,
    #[serde(skip)]
    pub timeout: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderResponse {
    pub content: String,
    /// Whatever else the provider returned, kept verbatim.
    #[serde(default)]
    pub metadata: Value,
}

impl ProviderResponse {
    pub fn text(content: impl Into<String>) -> Self {
        ProviderResponse { content: content.into(), metadata: Value::Null }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProviderError {
    #[error("request timed out")]
    Timeout,
    #[error("rate limited by provider")]
    RateLimited,
    #[error("authentication failed: {0}")]
    AuthFailure(String),
    /// Transient transport or server error; retried.
    #[error("transient provider error: {0}")]
    Transient(String),
    /// Anything retrying cannot fix.
    #[error("provider error: {0}")]
    Fatal(String),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ProviderError::Timeout | ProviderError::RateLimited | ProviderError::Transient(_))
    }
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<ProviderResponse, ProviderError>;
}

type Responder = dyn Fn(&ChatRequest<'_>) -> Result<ProviderResponse, ProviderError> + Send + Sync;

/// In-process provider driven by a closure; counts every call.
pub struct MockProvider {
    respond: Box<Responder>,
    calls: AtomicUsize,
}

impl MockProvider {
    pub fn new<F>(respond: F) -> Self
    where
        F: Fn(&ChatRequest<'_>) -> Result<ProviderResponse, ProviderError> + Send + Sync + 'static,
    {
        MockProvider { respond: Box::new(respond), calls: AtomicUsize::new(0) }
    }

    /// Always answers `content`.
    pub fn constant(content: impl Into<String>) -> Self {
        let content = content.into();
        Self::new(move |_| Ok(ProviderResponse::text(content.clone())))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatProvider for MockProvider {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<ProviderResponse, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        (self.respond)(request)
    }
}

/// Serves nothing; every request is a miss. Combined with a populated cache
/// this replays an earlier run without network access.
pub struct ReplayOnly;

impl ChatProvider for ReplayOnly {
    fn complete(&self, _: &ChatRequest<'_>) -> Result<ProviderResponse, ProviderError> {
        Err(ProviderError::Fatal("replay mode: response not in cache".into()))
    }
}

/// OpenAI-compatible chat-completions client. The prompt goes out as one
/// user message.
pub struct HttpProvider {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: String,
}

impl HttpProvider {
    /// Reads the token from `config.api_key_env`.
    pub fn from_env(config: &ProviderConfig) -> Result<Self, ProviderError> {
        let api_key = std::env::var(&config.api_key_env)
            .map_err(|_| ProviderError::AuthFailure(format!("environment variable {} is not set", config.api_key_env)))?;
        Self::with_key(config, api_key)
    }

    pub fn with_key(config: &ProviderConfig, api_key: impl Into<String>) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout())
            .build()
            .map_err(|e| ProviderError::Fatal(e.to_string()))?;
        Ok(HttpProvider { client, endpoint: config.endpoint.clone(), api_key: api_key.into() })
    }
}

impl ChatProvider for HttpProvider {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<ProviderResponse, ProviderError> {
        let body = json!({
            "model": request.model_id,
            "temperature": request.temperature,
            "messages": [{"role": "user", "content": request.prompt}],
        });
        let response = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .timeout(request.timeout)
            .json(&body)
            .send()
            .map_err(|e| if e.is_timeout() { ProviderError::Timeout } else { ProviderError::Transient(e.to_string()) })?;
        let status = response.status();
        let payload: Value = match response.text() {
            Ok(text) => serde_json::from_str(&text).unwrap_or(Value::String(text)),
            Err(e) if e.is_timeout() => return Err(ProviderError::Timeout),
            Err(e) => return Err(ProviderError::Transient(e.to_string())),
        };
        match status.as_u16() {
            200..=299 => {}
            401 | 403 => return Err(ProviderError::AuthFailure(format!("HTTP {status}"))),
            429 => return Err(ProviderError::RateLimited),
            408 => return Err(ProviderError::Timeout),
            500..=599 => return Err(ProviderError::Transient(format!("HTTP {status}"))),
            _ => return Err(ProviderError::Fatal(format!("HTTP {status}: {payload}"))),
        }
        let content = payload
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| ProviderError::Fatal(format!("response has no message content: {payload}")))?
            .to_string();
        Ok(ProviderResponse { content, metadata: payload })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::thread;

    /// Serves each canned `(status, body)` to one connection, in order, and
    /// returns the request bodies it received.
    fn serve(replies: Vec<(u16, &'static str)>) -> (String, thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let handle = thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in replies {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                bodies.push(String::from_utf8(buf).unwrap());
                let mut stream = stream;
                write!(stream, "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}", body.len()).unwrap();
            }
            bodies
        });
        (url, handle)
    }

    fn provider(url: &str) -> HttpProvider {
        let config = ProviderConfig { endpoint: url.into(), timeout_secs: 5.0, ..ProviderConfig::new("m") };
        HttpProvider::with_key(&config, "k").unwrap()
    }

    fn request(prompt: &str) -> ChatRequest<'_> {
        ChatRequest { model_id: "m", prompt, temperature: 0.0, timeout: Duration::from_secs(5) }
    }

    #[test]
    fn http_success_sends_temperature_zero() {
        let (url, server) = serve(vec![(200, r#"{"id":"x","choices":[{"message":{"role":"assistant","content":"disinfo"}}]}"#)]);
        let r = provider(&url).complete(&request("hello")).unwrap();
        assert_eq!(r.content, "disinfo");
        assert_eq!(r.metadata["id"], "x");
        let sent: Value = serde_json::from_str(&server.join().unwrap()[0]).unwrap();
        assert_eq!(sent["temperature"], 0.0);
        assert_eq!(sent["model"], "m");
        assert_eq!(sent["messages"][0]["content"], "hello");
    }

    #[test]
    fn http_status_mapping() {
        let (url, server) = serve(vec![(401, "{}"), (429, "{}"), (503, "{}"), (400, "{}"), (200, "{}")]);
        let p = provider(&url);
        assert!(matches!(p.complete(&request("a")), Err(ProviderError::AuthFailure(_))));
        assert_eq!(p.complete(&request("a")), Err(ProviderError::RateLimited));
        assert!(matches!(p.complete(&request("a")), Err(ProviderError::Transient(_))));
        assert!(matches!(p.complete(&request("a")), Err(ProviderError::Fatal(_))));
        assert!(matches!(p.complete(&request("a")), Err(ProviderError::Fatal(_))));
        server.join().unwrap();
    }

    #[test]
    fn http_timeout() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/", listener.local_addr().unwrap());
        let hold = thread::spawn(move || {
            let (s, _) = listener.accept().unwrap();
            thread::sleep(Duration::from_millis(800));
            drop(s);
        });
        let config = ProviderConfig { endpoint: url, timeout_secs: 0.2, ..ProviderConfig::new("m") };
        let p = HttpProvider::with_key(&config, "k").unwrap();
        let req = ChatRequest { timeout: Duration::from_millis(200), ..request("a") };
        assert_eq!(p.complete(&req), Err(ProviderError::Timeout));
        hold.join().unwrap();
    }

    #[test]
    fn missing_key_is_auth_failure() {
        let config = ProviderConfig { api_key_env: "PROPDIS_TEST_SURELY_UNSET_VAR".into(), ..ProviderConfig::new("m") };
        assert!(matches!(HttpProvider::from_env(&config), Err(ProviderError::AuthFailure(_))));
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let c = ProviderConfig { backoff_base_ms: 100, ..ProviderConfig::new("m") };
        assert_eq!(c.backoff(0), Duration::from_millis(100));
        assert_eq!(c.backoff(3), Duration::from_millis(800));
        assert_eq!(c.backoff(30), Duration::from_secs(60));
    }

    #[test]
    fn config_defaults_from_toml() {
        let c: ProviderConfig = toml::from_str("model_id = \"gpt-4-0314\"").unwrap();
        assert_eq!(c.temperature, 0.0);
        assert_eq!(c.max_retries, 3);
        assert_eq!(c.endpoint, DEFAULT_ENDPOINT);
    }
}
