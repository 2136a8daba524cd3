//! Chat-completion gateway.
//!
//! Every agent step goes through [`LlmClient::complete`], which validates the
//! request against the backend's capabilities, bounds concurrency, and retries
//! transient failures with exponential backoff. Two backends are provided: an
//! OpenAI-compatible HTTP adapter and a scripted [`MockBackend`] whose reply is
//! a pure function of the request fingerprint.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use base64::Engine;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::{debug, warn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::Tool => "tool",
        }
    }
}

/// Reference to an image payload: a local file or an inline data URL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ImageRef {
    File(PathBuf),
    DataUrl(String),
}

impl ImageRef {
    /// Encodes the image as a `data:` URL for transmission.
    pub fn to_data_url(&self) -> std::io::Result<String> {
        match self {
            ImageRef::DataUrl(u) => Ok(u.clone()),
            ImageRef::File(p) => {
                let bytes = std::fs::read(p)?;
                let mime = match p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase) {
                    Some(e) if e == "png" => "image/png",
                    Some(e) if e == "webp" => "image/webp",
                    _ => "image/jpeg",
                };
                let b64 = base64::engine::general_purpose::STANDARD.encode(bytes);
                Ok(format!("data:{mime};base64,{b64}"))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<ImageRef>,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        Self { role: Role::System, text: text.into(), images: Vec::new() }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self { role: Role::User, text: text.into(), images: Vec::new() }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self { role: Role::Assistant, text: text.into(), images: Vec::new() }
    }

    pub fn user_with_images(text: impl Into<String>, images: Vec<ImageRef>) -> Self {
        Self { role: Role::User, text: text.into(), images }
    }

    fn validate(&self) -> Result<(), String> {
        if !self.images.is_empty() && self.role != Role::User {
            return Err(format!("{} message may not carry images", self.role.as_str()));
        }
        if self.text.is_empty() && self.images.is_empty() {
            return Err(format!("{} message has neither text nor images", self.role.as_str()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provider {
    /// `Authorization: Bearer` with a `model` field in the body.
    #[default]
    OpenAi,
    /// `api-key` header; the deployment is part of the endpoint URL.
    Azure,
}

fn default_temperature() -> f32 {
    0.0
}
fn default_max_tokens() -> u32 {
    1024
}
fn default_timeout() -> f64 {
    120.0
}
fn default_retries() -> u32 {
    3
}
fn default_concurrency() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSpec {
    pub backend_id: String,
    #[serde(default)]
    pub endpoint: String,
    #[serde(default)]
    pub provider: Provider,
    /// Model name sent in the request body (OpenAI-style providers).
    #[serde(default)]
    pub model: String,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub supports_images: bool,
    #[serde(default = "default_temperature")]
    pub temperature: f32,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
}

impl BackendSpec {
    pub fn new(backend_id: impl Into<String>) -> Self {
        BackendSpec {
            backend_id: backend_id.into(),
            endpoint: String::new(),
            provider: Provider::OpenAi,
            model: String::new(),
            api_key_env: None,
            supports_images: false,
            temperature: default_temperature(),
            max_tokens: default_max_tokens(),
            timeout_s: default_timeout(),
            max_retries: default_retries(),
            concurrency: default_concurrency(),
        }
    }

    pub fn with_images(mut self, yes: bool) -> Self {
        self.supports_images = yes;
        self
    }

    pub fn with_retries(mut self, n: u32) -> Self {
        self.max_retries = n;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.backend_id.is_empty() {
            return Err("backend id is empty".into());
        }
        if self.concurrency == 0 {
            return Err(format!("backend {}: concurrency must be >= 1", self.backend_id));
        }
        if !(self.timeout_s > 0.0) {
            return Err(format!("backend {}: timeout_s must be > 0", self.backend_id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: Option<u64>,
    pub output_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    #[serde(default)]
    pub usage: Option<Usage>,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, Error)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    Precondition(String),
    #[error("backend {backend} does not accept images")]
    Capability { backend: String },
    /// A failure worth retrying (timeouts, connection resets, 429, 5xx).
    #[error("transient failure: {0}")]
    Transient(String),
    /// A well-formed refusal (auth, content policy, bad request); never retried.
    #[error("request rejected (status {status}): {message}")]
    Rejected { status: u16, message: String },
    #[error("backend {backend} failed after {attempts} attempts: {last}")]
    Transport {
        backend: String,
        attempts: u32,
        last: String,
    },
    #[error("unknown backend `{0}`")]
    UnknownBackend(String),
}

/// A chat-completion service. Implementations must tolerate concurrent calls.
pub trait ChatBackend: Send + Sync {
    fn send(&self, spec: &BackendSpec, messages: &[ChatMessage]) -> Result<ChatResponse, BackendError>;
}

/// Counting semaphore over a mutex and condvar.
#[derive(Debug)]
struct Limiter {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Limiter {
    fn new(n: usize) -> Self {
        Limiter { permits: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> LimiterGuard<'_> {
        let mut p = self.permits.lock().unwrap();
        while *p == 0 {
            p = self.cv.wait(p).unwrap();
        }
        *p -= 1;
        LimiterGuard(self)
    }
}

struct LimiterGuard<'a>(&'a Limiter);

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backoff {
    pub base: Duration,
    pub max: Duration,
}

impl Default for Backoff {
    fn default() -> Self {
        Backoff { base: Duration::from_millis(500), max: Duration::from_secs(30) }
    }
}

impl Backoff {
    pub fn none() -> Self {
        Backoff { base: Duration::ZERO, max: Duration::ZERO }
    }

    /// Delay before retry number `attempt` (0-based): `base * 2^attempt`, capped.
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt.min(20)).unwrap_or(u32::MAX);
        self.base.saturating_mul(factor).min(self.max)
    }
}

/// A backend bound to its spec, with retry and concurrency policy.
pub struct LlmClient {
    spec: BackendSpec,
    backend: Arc<dyn ChatBackend>,
    limiter: Limiter,
    backoff: Backoff,
}

impl fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LlmClient").field("spec", &self.spec).finish_non_exhaustive()
    }
}

impl LlmClient {
    pub fn new(spec: BackendSpec, backend: Arc<dyn ChatBackend>) -> Self {
        let limiter = Limiter::new(spec.concurrency);
        LlmClient { spec, backend, limiter, backoff: Backoff::default() }
    }

    pub fn with_backoff(mut self, backoff: Backoff) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn spec(&self) -> &BackendSpec {
        &self.spec
    }

    pub fn complete(&self, messages: &[ChatMessage]) -> Result<ChatResponse, BackendError> {
        if messages.is_empty() {
            return Err(BackendError::Precondition("message list is empty".into()));
        }
        for m in messages {
            m.validate().map_err(BackendError::Precondition)?;
        }
        if !self.spec.supports_images && messages.iter().any(|m| !m.images.is_empty()) {
            return Err(BackendError::Capability { backend: self.spec.backend_id.clone() });
        }

        let _permit = self.limiter.acquire();
        let mut attempt = 0u32;
        loop {
            match self.backend.send(&self.spec, messages) {
                Ok(r) => return Ok(r),
                Err(BackendError::Transient(cause)) => {
                    if attempt >= self.spec.max_retries {
                        return Err(BackendError::Transport {
                            backend: self.spec.backend_id.clone(),
                            attempts: attempt + 1,
                            last: cause,
                        });
                    }
                    let delay = self.backoff.delay(attempt);
                    warn!(backend = %self.spec.backend_id, attempt = attempt + 1, ?delay, %cause, "transient failure, retrying");
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                Err(other) => return Err(other),
            }
        }
    }
}

/// Named set of clients, looked up by backend id.
#[derive(Debug, Default, Clone)]
pub struct BackendRegistry {
    clients: BTreeMap<String, Arc<LlmClient>>,
}

impl BackendRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, client: LlmClient) {
        self.clients.insert(client.spec().backend_id.clone(), Arc::new(client));
    }

    pub fn get(&self, id: &str) -> Result<&LlmClient, BackendError> {
        self.clients
            .get(id)
            .map(|c| c.as_ref())
            .ok_or_else(|| BackendError::UnknownBackend(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.clients.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.clients.keys().map(String::as_str)
    }

    /// Registers every spec against the same backend.
    pub fn shared(specs: impl IntoIterator<Item = BackendSpec>, backend: Arc<dyn ChatBackend>, backoff: Backoff) -> Self {
        let mut reg = Self::new();
        for s in specs {
            reg.insert(LlmClient::new(s, backend.clone()).with_backoff(backoff));
        }
        reg
    }
}

// ---------------------------------------------------------------------------
// HTTP adapter
// ---------------------------------------------------------------------------

/// OpenAI-compatible chat-completions adapter over blocking HTTP.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
}

impl Default for HttpBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl HttpBackend {
    pub fn new() -> Self {
        HttpBackend { client: reqwest::blocking::Client::new() }
    }

    /// Builds the JSON request body for a provider.
    pub fn request_body(spec: &BackendSpec, messages: &[ChatMessage]) -> std::io::Result<serde_json::Value> {
        let mut wire = Vec::with_capacity(messages.len());
        for m in messages {
            let content = if m.images.is_empty() {
                serde_json::Value::String(m.text.clone())
            } else {
                let mut parts = Vec::new();
                if !m.text.is_empty() {
                    parts.push(serde_json::json!({"type": "text", "text": m.text}));
                }
                for img in &m.images {
                    parts.push(serde_json::json!({
                        "type": "image_url",
                        "image_url": {"url": img.to_data_url()?}
                    }));
                }
                serde_json::Value::Array(parts)
            };
            wire.push(serde_json::json!({"role": m.role.as_str(), "content": content}));
        }
        let mut body = serde_json::json!({
            "messages": wire,
            "temperature": spec.temperature,
            "max_tokens": spec.max_tokens,
        });
        if spec.provider == Provider::OpenAi && !spec.model.is_empty() {
            body["model"] = serde_json::Value::String(spec.model.clone());
        }
        Ok(body)
    }

    /// Extracts reply text and usage from a provider response body.
    pub fn parse_reply(body: &serde_json::Value) -> Result<(String, Option<Usage>), BackendError> {
        let text = body
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .ok_or_else(|| BackendError::Rejected {
                status: 200,
                message: "response has no choices[0].message.content".into(),
            })?
            .to_string();
        let usage = body.get("usage").map(|u| Usage {
            input_tokens: u.get("prompt_tokens").and_then(|v| v.as_u64()),
            output_tokens: u.get("completion_tokens").and_then(|v| v.as_u64()),
        });
        Ok((text, usage))
    }
}

impl ChatBackend for HttpBackend {
    fn send(&self, spec: &BackendSpec, messages: &[ChatMessage]) -> Result<ChatResponse, BackendError> {
        let body = Self::request_body(spec, messages)
            .map_err(|e| BackendError::Precondition(format!("cannot read image: {e}")))?;
        let mut req = self
            .client
            .post(&spec.endpoint)
            .timeout(Duration::from_secs_f64(spec.timeout_s))
            .json(&body);
        if let Some(var) = &spec.api_key_env {
            let key = std::env::var(var)
                .map_err(|_| BackendError::Precondition(format!("environment variable {var} is not set")))?;
            req = match spec.provider {
                Provider::OpenAi => req.bearer_auth(key),
                Provider::Azure => req.header("api-key", key),
            };
        }
        let started = Instant::now();
        let resp = req.send().map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| BackendError::Transient(e.to_string()))?;
        let latency_ms = started.elapsed().as_millis() as u64;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(BackendError::Transient(format!("HTTP {status}: {}", truncate(&text, 200))));
        }
        if !status.is_success() {
            return Err(BackendError::Rejected { status: status.as_u16(), message: truncate(&text, 500) });
        }
        let json: serde_json::Value = serde_json::from_str(&text).map_err(|e| BackendError::Rejected {
            status: status.as_u16(),
            message: format!("invalid JSON body: {e}"),
        })?;
        let (text, usage) = Self::parse_reply(&json)?;
        debug!(backend = %spec.backend_id, latency_ms, "completion received");
        Ok(ChatResponse { text, usage, latency_ms })
    }
}

fn truncate(s: &str, n: usize) -> String {
    match s.char_indices().nth(n) {
        Some((i, _)) => format!("{}...", &s[..i]),
        None => s.to_string(),
    }
}

// ---------------------------------------------------------------------------
// Mock backend
// ---------------------------------------------------------------------------

/// Stable digest of a request: roles, texts, and image counts, in order.
pub fn fingerprint(messages: &[ChatMessage]) -> String {
    let canonical: Vec<(&str, &str, usize)> = messages
        .iter()
        .map(|m| (m.role.as_str(), m.text.as_str(), m.images.len()))
        .collect();
    let bytes = serde_json::to_vec(&canonical).expect("tuples serialize");
    hex::encode(Sha256::digest(bytes))
}

/// Flattened request text that mock patterns are matched against:
/// one `role: text` block per message.
pub fn canonical_text(messages: &[ChatMessage]) -> String {
    messages
        .iter()
        .map(|m| {
            if m.images.is_empty() {
                format!("{}: {}", m.role.as_str(), m.text)
            } else {
                format!("{}: {} [images: {}]", m.role.as_str(), m.text, m.images.len())
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone)]
pub enum MockMatcher {
    Fingerprint(String),
    Pattern(Regex),
}

#[derive(Debug, Clone)]
pub struct MockRule {
    pub matcher: MockMatcher,
    pub reply: String,
}

/// One request seen by the mock.
#[derive(Debug, Clone)]
pub struct RecordedRequest {
    pub backend_id: String,
    pub fingerprint: String,
    pub messages: Vec<ChatMessage>,
}

/// Scripted backend. The reply for a request depends only on its content:
/// the first rule whose fingerprint or pattern matches wins, otherwise the
/// fallback is returned. With a garbage rate, a deterministic fraction of
/// fingerprints is answered with an unparseable reply instead.
#[derive(Debug, Default)]
pub struct MockBackend {
    rules: Vec<MockRule>,
    fallback: String,
    garbage: Option<(f64, u64)>,
    calls: AtomicUsize,
    misses: AtomicUsize,
    log: Mutex<Vec<RecordedRequest>>,
}

pub const MOCK_GARBAGE_REPLY: &str = "~~ static ~~";

impl MockBackend {
    pub fn new(fallback: impl Into<String>) -> Self {
        MockBackend { fallback: fallback.into(), ..Default::default() }
    }

    /// Builds a mock from an exact `fingerprint -> reply` table.
    pub fn from_script(script: BTreeMap<String, String>, fallback: impl Into<String>) -> Self {
        let mut m = Self::new(fallback);
        for (fp, reply) in script {
            m.rules.push(MockRule { matcher: MockMatcher::Fingerprint(fp), reply });
        }
        m
    }

    pub fn rule_fingerprint(mut self, fp: impl Into<String>, reply: impl Into<String>) -> Self {
        self.rules.push(MockRule { matcher: MockMatcher::Fingerprint(fp.into()), reply: reply.into() });
        self
    }

    /// Adds a rule matched by regex against [`canonical_text`].
    pub fn rule(mut self, pattern: &str, reply: impl Into<String>) -> Self {
        let re = Regex::new(pattern).unwrap_or_else(|e| panic!("bad mock pattern {pattern:?}: {e}"));
        self.rules.push(MockRule { matcher: MockMatcher::Pattern(re), reply: reply.into() });
        self
    }

    pub fn try_rule(mut self, pattern: &str, reply: impl Into<String>) -> Result<Self, regex::Error> {
        let re = Regex::new(pattern)?;
        self.rules.push(MockRule { matcher: MockMatcher::Pattern(re), reply: reply.into() });
        Ok(self)
    }

    /// Replaces the reply with [`MOCK_GARBAGE_REPLY`] for roughly `rate` of
    /// distinct requests, selected by hashing the fingerprint with `seed`.
    pub fn with_garbage_rate(mut self, rate: f64, seed: u64) -> Self {
        self.garbage = Some((rate.clamp(0.0, 1.0), seed));
        self
    }

    /// Loads a script file (TOML, or JSON when the extension is `.json`).
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let script: MockScript = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?
        } else {
            toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?
        };
        script.build()
    }

    /// Reply for a request, without recording it.
    pub fn reply_for(&self, messages: &[ChatMessage]) -> (String, bool) {
        let fp = fingerprint(messages);
        if let Some((rate, seed)) = self.garbage {
            if garbage_draw(&fp, seed) < rate {
                return (MOCK_GARBAGE_REPLY.to_string(), true);
            }
        }
        let text = canonical_text(messages);
        for r in &self.rules {
            let hit = match &r.matcher {
                MockMatcher::Fingerprint(f) => *f == fp,
                MockMatcher::Pattern(re) => re.is_match(&text),
            };
            if hit {
                return (r.reply.clone(), true);
            }
        }
        (self.fallback.clone(), false)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.log.lock().unwrap().clone()
    }

    pub fn clear_log(&self) {
        self.log.lock().unwrap().clear();
        self.calls.store(0, Ordering::SeqCst);
        self.misses.store(0, Ordering::SeqCst);
    }
}

fn garbage_draw(fp: &str, seed: u64) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(fp.as_bytes());
    let d = h.finalize();
    let n = u64::from_le_bytes(d[..8].try_into().unwrap());
    (n >> 11) as f64 / (1u64 << 53) as f64
}

impl ChatBackend for MockBackend {
    fn send(&self, spec: &BackendSpec, messages: &[ChatMessage]) -> Result<ChatResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let (text, matched) = self.reply_for(messages);
        let fp = fingerprint(messages);
        if !matched {
            self.misses.fetch_add(1, Ordering::SeqCst);
            warn!(backend = %spec.backend_id, fingerprint = %fp, "mock: no scripted reply, using fallback");
        }
        self.log.lock().unwrap().push(RecordedRequest {
            backend_id: spec.backend_id.clone(),
            fingerprint: fp,
            messages: messages.to_vec(),
        });
        Ok(ChatResponse { text, usage: None, latency_ms: 0 })
    }
}

/// On-disk mock script.
///
/// ```toml
/// fallback = "UNKNOWN"
/// garbage_rate = 0.0
///
/// [[rules]]
/// pattern = "Which tool"
/// reply = "captioner"
///
/// [[rules]]
/// fingerprint = "3f1c..."
/// reply = "Answer: 2"
/// ```
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub fallback: String,
    #[serde(default)]
    pub garbage_rate: f64,
    #[serde(default)]
    pub garbage_seed: u64,
    #[serde(default)]
    pub rules: Vec<MockScriptRule>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockScriptRule {
    #[serde(default)]
    pub fingerprint: Option<String>,
    #[serde(default)]
    pub pattern: Option<String>,
    pub reply: String,
}

impl MockScript {
    pub fn build(&self) -> Result<MockBackend, String> {
        let mut m = MockBackend::new(self.fallback.clone());
        for (i, r) in self.rules.iter().enumerate() {
            m = match (&r.fingerprint, &r.pattern) {
                (Some(fp), None) => m.rule_fingerprint(fp.clone(), r.reply.clone()),
                (None, Some(p)) => m
                    .try_rule(p, r.reply.clone())
                    .map_err(|e| format!("rule {i}: bad pattern: {e}"))?,
                _ => return Err(format!("rule {i}: exactly one of `fingerprint` or `pattern` is required")),
            };
        }
        if self.garbage_rate > 0.0 {
            m = m.with_garbage_rate(self.garbage_rate, self.garbage_seed);
        }
        Ok(m)
    }
}
