//! LLM backends: a chat-completions HTTP client and a deterministic mock.
//!
//! Both implement [`LlmBackend`], the only surface the rest of the pipeline
//! sees. The mock serves substring-matched fixture files when present and
//! otherwise synthesizes deterministic, parseable responses, so full
//! pipeline runs need no network and no fixture authoring.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::TscotError;

/// Sampling parameters sent with every request and folded into cache keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for Sampling {
    fn default() -> Self {
        // Deterministic generation by default: the instructions do not need
        // sampling diversity, and temperature 0 keeps cached corpora stable.
        Sampling { temperature: 0.0, max_output_tokens: 512 }
    }
}

/// Where completions come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Endpoint {
    /// Chat-completions-style HTTP service rooted at `base_url`.
    Http { base_url: String },
    /// Local fixture-backed mock; never performs network I/O.
    Mock { fixtures_dir: PathBuf },
}

/// Backend configuration: identity, sampling, transport.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmBackendConfig {
    pub model_id: String,
    #[serde(default)]
    pub sampling: Sampling,
    pub endpoint: Endpoint,
    /// Per-request timeout in seconds.
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
}

fn default_timeout_secs() -> u64 {
    60
}

fn default_max_retries() -> u32 {
    3
}

impl LlmBackendConfig {
    pub fn mock(fixtures_dir: &Path) -> LlmBackendConfig {
        LlmBackendConfig {
            model_id: "mock-llm".to_string(),
            sampling: Sampling::default(),
            endpoint: Endpoint::Mock { fixtures_dir: fixtures_dir.to_path_buf() },
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
        }
    }

    pub fn http(model_id: &str, base_url: &str) -> LlmBackendConfig {
        LlmBackendConfig {
            model_id: model_id.to_string(),
            sampling: Sampling::default(),
            endpoint: Endpoint::Http { base_url: base_url.to_string() },
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
        }
    }

    /// Instantiate the backend this config describes. `MPPT_LLM_BASE_URL`
    /// overrides an HTTP endpoint's base URL; `MPPT_LLM_API_KEY` supplies
    /// the bearer token.
    pub fn build(&self) -> Result<Box<dyn LlmBackend>, TscotError> {
        match &self.endpoint {
            Endpoint::Http { base_url } => {
                let base = std::env::var("MPPT_LLM_BASE_URL").unwrap_or_else(|_| base_url.clone());
                let api_key = std::env::var("MPPT_LLM_API_KEY").ok();
                Ok(Box::new(HttpBackend::new(
                    &self.model_id,
                    &base,
                    self.sampling.clone(),
                    Duration::from_secs(self.timeout_secs),
                    self.max_retries,
                    api_key,
                )))
            }
            Endpoint::Mock { fixtures_dir } => {
                Ok(Box::new(MockBackend::new(&self.model_id, self.sampling.clone(), fixtures_dir)?))
            }
        }
    }
}

/// A single-turn instruction-completion service.
pub trait LlmBackend: Send + Sync {
    /// Complete one instruction. Retries (where applicable) happen inside.
    fn complete(&self, instruction: &str) -> Result<String, TscotError>;
    /// Number of `complete` calls issued so far on this backend instance.
    fn calls_made(&self) -> u64;
    fn model_id(&self) -> &str;
    fn sampling(&self) -> &Sampling;
}

/// Chat-completions HTTP client with exponential-backoff retries on
/// timeouts, rate limits, and server errors.
pub struct HttpBackend {
    model_id: String,
    base_url: String,
    sampling: Sampling,
    max_retries: u32,
    api_key: Option<String>,
    backoff_base: Duration,
    calls: AtomicU64,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(
        model_id: &str,
        base_url: &str,
        sampling: Sampling,
        timeout: Duration,
        max_retries: u32,
        api_key: Option<String>,
    ) -> HttpBackend {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        HttpBackend {
            model_id: model_id.to_string(),
            base_url: base_url.trim_end_matches('/').to_string(),
            sampling,
            max_retries,
            api_key,
            backoff_base: Duration::from_millis(200),
            calls: AtomicU64::new(0),
            agent: config.into(),
        }
    }

    /// Shorten the retry backoff (tests exercise the retry path without
    /// real waits).
    pub fn with_backoff_base(mut self, base: Duration) -> HttpBackend {
        self.backoff_base = base;
        self
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.base_url)
    }

    fn retryable_status(status: u16) -> bool {
        status == 408 || status == 429 || (500..=599).contains(&status)
    }

    fn attempt(&self, instruction: &str) -> Result<Result<String, (u16, String)>, String> {
        let body = serde_json::json!({
            "model": self.model_id,
            "messages": [{"role": "user", "content": instruction}],
            "temperature": self.sampling.temperature,
            "max_tokens": self.sampling.max_output_tokens,
        });
        let mut request = self.agent.post(self.url());
        if let Some(key) = &self.api_key {
            request = request.header("authorization", format!("Bearer {key}"));
        }
        let mut response = request.send_json(&body).map_err(|e| e.to_string())?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| format!("reading response body: {e}"))?;
        if !(200..300).contains(&status) {
            return Ok(Err((status, text)));
        }
        let parsed: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| format!("malformed response JSON: {e}"))?;
        let content = parsed
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .ok_or_else(|| "response JSON missing choices[0].message.content".to_string())?;
        Ok(Ok(content.to_string()))
    }
}

impl LlmBackend for HttpBackend {
    fn complete(&self, instruction: &str) -> Result<String, TscotError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let attempts = self.max_retries + 1;
        let mut last_error = String::new();
        for i in 0..attempts {
            if i > 0 {
                // 200ms, 400ms, 800ms, ... capped at 5s.
                let backoff = self
                    .backoff_base
                    .saturating_mul(1u32 << (i - 1).min(16))
                    .min(Duration::from_secs(5));
                std::thread::sleep(backoff);
            }
            match self.attempt(instruction) {
                Ok(Ok(content)) => return Ok(content),
                Ok(Err((status, body))) if Self::retryable_status(status) => {
                    last_error = format!("status {status}: {}", truncate(&body, 200));
                }
                Ok(Err((status, body))) => {
                    return Err(TscotError::BackendRejected { status, body: truncate(&body, 500) });
                }
                Err(transport) => last_error = transport,
            }
            log::warn!("llm request attempt {}/{attempts} failed: {last_error}", i + 1);
        }
        Err(TscotError::BackendUnavailable { attempts, last_error })
    }

    fn calls_made(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn sampling(&self) -> &Sampling {
        &self.sampling
    }
}

fn truncate(s: &str, max: usize) -> String {
    if s.len() <= max {
        s.to_string()
    } else {
        let mut end = max;
        while !s.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}…", &s[..end])
    }
}

/// One mock fixture file: serve `responses` in order to instructions
/// containing `match`, after first failing `errors_before` times.
#[derive(Debug, Deserialize)]
struct FixtureFile {
    #[serde(rename = "match")]
    matcher: String,
    #[serde(default)]
    responses: Vec<String>,
    #[serde(default)]
    errors_before: u64,
}

struct Fixture {
    name: String,
    matcher: String,
    responses: Vec<String>,
    errors_before: u64,
    uses: AtomicU64,
}

/// Deterministic in-process backend. Fixtures (when provided) take
/// precedence; anything unmatched gets a synthesized response shaped like
/// the instruction expects, so end-to-end runs work against an empty
/// fixtures directory.
pub struct MockBackend {
    model_id: String,
    sampling: Sampling,
    fixtures: Vec<Fixture>,
    calls: AtomicU64,
    log: Mutex<Vec<String>>,
}

/// Deterministic stand-in perspectives, generic enough to fit any target.
pub(crate) const PERSPECTIVE_BANK: [&str; 16] = [
    "Public opinion",
    "Policy record",
    "Personal characteristics",
    "Political ideology",
    "Economic impact",
    "Social values",
    "Media coverage",
    "Historical context",
    "Legal considerations",
    "Moral principles",
    "Scientific evidence",
    "Community impact",
    "Religious beliefs",
    "Personal experience",
    "Party loyalty",
    "International relations",
];

impl MockBackend {
    pub fn new(
        model_id: &str,
        sampling: Sampling,
        fixtures_dir: &Path,
    ) -> Result<MockBackend, TscotError> {
        let mut fixtures = Vec::new();
        if fixtures_dir.is_dir() {
            let entries = std::fs::read_dir(fixtures_dir).map_err(|source| TscotError::Io {
                path: fixtures_dir.display().to_string(),
                source,
            })?;
            let mut paths: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
                .collect();
            paths.sort();
            for path in paths {
                let raw = std::fs::read_to_string(&path).map_err(|source| TscotError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                let file: FixtureFile =
                    serde_json::from_str(&raw).map_err(|e| TscotError::FixtureInvalid {
                        path: path.display().to_string(),
                        reason: e.to_string(),
                    })?;
                fixtures.push(Fixture {
                    name: path.file_name().unwrap_or_default().to_string_lossy().to_string(),
                    matcher: file.matcher,
                    responses: file.responses,
                    errors_before: file.errors_before,
                    uses: AtomicU64::new(0),
                });
            }
        }
        Ok(MockBackend {
            model_id: model_id.to_string(),
            sampling,
            fixtures,
            calls: AtomicU64::new(0),
            log: Mutex::new(Vec::new()),
        })
    }

    /// The instructions this backend has served, in call order.
    pub fn call_log(&self) -> Vec<String> {
        self.log.lock().expect("mock log lock").clone()
    }

    fn synthesize(&self, instruction: &str) -> String {
        if instruction.starts_with("From what angles") {
            let gamma = extract_count(instruction, "List the ").unwrap_or(3);
            let items: Vec<String> = (0..gamma)
                .map(|i| {
                    let base = PERSPECTIVE_BANK[i % PERSPECTIVE_BANK.len()];
                    if i < PERSPECTIVE_BANK.len() {
                        format!("{}. {base}", i + 1)
                    } else {
                        format!("{}. {base} (variant {})", i + 1, i / PERSPECTIVE_BANK.len() + 1)
                    }
                })
                .collect();
            return items.join("\n");
        }
        if instruction.starts_with("Oriented to the") {
            let perspective = instruction
                .split_once("and under the ")
                .and_then(|(_, rest)| rest.split_once(", give the stance"))
                .map(|(p, _)| p)
                .unwrap_or("general");
            let judgment = ["favor", "against", "none"][hash_str(instruction) as usize % 3];
            return format!(
                "Viewed through the {perspective} lens, the statement frames its subject in a \
                 way that signals a clear orientation, and the wording carries evaluative \
                 weight rather than neutral description. Judgment: {judgment}."
            );
        }
        "Understood.".to_string()
    }
}

fn extract_count(instruction: &str, prefix: &str) -> Option<usize> {
    let rest = &instruction[instruction.find(prefix)? + prefix.len()..];
    let digits: String = rest.chars().take_while(char::is_ascii_digit).collect();
    digits.parse().ok()
}

fn hash_str(s: &str) -> u64 {
    // FNV-1a: stable across runs and platforms, unlike DefaultHasher.
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl LlmBackend for MockBackend {
    fn complete(&self, instruction: &str) -> Result<String, TscotError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.log.lock().expect("mock log lock").push(instruction.to_string());
        for fixture in &self.fixtures {
            if !instruction.contains(&fixture.matcher) {
                continue;
            }
            let use_idx = fixture.uses.fetch_add(1, Ordering::SeqCst);
            if use_idx < fixture.errors_before {
                return Err(TscotError::BackendUnavailable {
                    attempts: 1,
                    last_error: format!("injected failure from fixture `{}`", fixture.name),
                });
            }
            if fixture.responses.is_empty() {
                break;
            }
            let response_idx =
                ((use_idx - fixture.errors_before) as usize).min(fixture.responses.len() - 1);
            return Ok(fixture.responses[response_idx].clone());
        }
        Ok(self.synthesize(instruction))
    }

    fn calls_made(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn sampling(&self) -> &Sampling {
        &self.sampling
    }
}
