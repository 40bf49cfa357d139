//! One entry point for every generative-model call.
//!
//! A [`Gateway`] owns a [`ChatBackend`] (remote HTTP, replay file, recorder,
//! or a closure in tests), the per-role sampling settings, the prompt set,
//! and a bound on the number of calls in flight.

pub(crate) mod remote;
mod replay;
pub mod sim;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompts::PromptSet;

pub use remote::{RemoteBackend, RemoteSettings};
pub use replay::{RecordingBackend, ReplayLog, ScriptedBackend, ReplayEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleTag {
    Challenger,
    EvaluatorAnswer,
    EvaluatorJudge,
    AdapterStrategy,
    AdapterContent,
    MemorySummarizer,
    LlmJudge,
}

impl RoleTag {
    pub const ALL: [RoleTag; 7] = [
        RoleTag::Challenger,
        RoleTag::EvaluatorAnswer,
        RoleTag::EvaluatorJudge,
        RoleTag::AdapterStrategy,
        RoleTag::AdapterContent,
        RoleTag::MemorySummarizer,
        RoleTag::LlmJudge,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RoleTag::Challenger => "challenger",
            RoleTag::EvaluatorAnswer => "evaluator_answer",
            RoleTag::EvaluatorJudge => "evaluator_judge",
            RoleTag::AdapterStrategy => "adapter_strategy",
            RoleTag::AdapterContent => "adapter_content",
            RoleTag::MemorySummarizer => "memory_summarizer",
            RoleTag::LlmJudge => "llm_judge",
        }
    }

    /// Verdict-producing roles sample greedily; the challenger gets room for
    /// varied questions.
    pub fn default_temperature(&self) -> f64 {
        match self {
            RoleTag::EvaluatorJudge | RoleTag::LlmJudge => 0.0,
            RoleTag::Challenger => 0.7,
            _ => 0.3,
        }
    }

    pub fn default_max_tokens(&self) -> u32 {
        match self {
            RoleTag::Challenger | RoleTag::MemorySummarizer => 1024,
            RoleTag::AdapterContent | RoleTag::AdapterStrategy => 512,
            RoleTag::EvaluatorAnswer | RoleTag::EvaluatorJudge => 256,
            RoleTag::LlmJudge => 8,
        }
    }
}

impl fmt::Display for RoleTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub role_tag: RoleTag,
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(
        role_tag: RoleTag,
        system_prompt: impl Into<String>,
        user_prompt: impl Into<String>,
        temperature: f64,
        max_tokens: u32,
    ) -> Result<Self, LlmError> {
        let req = ChatRequest {
            role_tag,
            system_prompt: system_prompt.into(),
            user_prompt: user_prompt.into(),
            temperature,
            max_tokens,
        };
        if req.system_prompt.trim().is_empty() || req.user_prompt.trim().is_empty() {
            return Err(LlmError::InvalidRequest(format!("{role_tag}: prompts must be non-empty")));
        }
        if !(0.0..=1.0).contains(&temperature) {
            return Err(LlmError::InvalidRequest(format!("temperature {temperature} outside [0, 1]")));
        }
        if max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(req)
    }

    pub fn digest(&self) -> String {
        request_digest(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub backend_id: String,
    pub request_digest: String,
}

/// SHA-256 over length-prefixed fields. Temperature uses Rust's shortest
/// round-trip float formatting, which is platform independent.
pub fn request_digest(req: &ChatRequest) -> String {
    let mut hasher = Sha256::new();
    let fields: [(&str, String); 5] = [
        ("role_tag", req.role_tag.as_str().to_owned()),
        ("system_prompt", req.system_prompt.clone()),
        ("user_prompt", req.user_prompt.clone()),
        ("temperature", format!("{:?}", req.temperature)),
        ("max_tokens", req.max_tokens.to_string()),
    ];
    for (name, value) in &fields {
        hasher.update(name.as_bytes());
        hasher.update(b"=");
        hasher.update((value.len() as u64).to_le_bytes());
        hasher.update(value.as_bytes());
    }
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, Error)]
pub enum LlmError {
    #[error("replay miss for role {role_tag} (digest {digest}); nearest recorded {role_tag} entry: {}", nearest.as_deref().unwrap_or("none"))]
    ReplayMiss {
        role_tag: String,
        digest: String,
        nearest: Option<String>,
    },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("replay file: {0}")]
    Replay(String),
    #[error("{0}")]
    Backend(String),
}

/// Anything that can turn a request into model text.
pub trait ChatBackend: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, request: &ChatRequest, digest: &str) -> Result<String, LlmError>;
}

/// Adapts a closure into a backend; used for scripted tests.
pub struct FnBackend<F> {
    id: String,
    f: F,
}

impl<F> FnBackend<F>
where
    F: Fn(&ChatRequest) -> Result<String, LlmError> + Send + Sync,
{
    pub fn new(id: impl Into<String>, f: F) -> Self {
        FnBackend { id: id.into(), f }
    }
}

impl<F> ChatBackend for FnBackend<F>
where
    F: Fn(&ChatRequest) -> Result<String, LlmError> + Send + Sync,
{
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ChatRequest, _digest: &str) -> Result<String, LlmError> {
        (self.f)(request)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Retries after the first failed attempt.
    pub retries: u32,
    pub initial_backoff_ms: u64,
    pub timeout_secs: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { retries: 3, initial_backoff_ms: 1000, timeout_secs: 60 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub model: String,
    pub role_models: BTreeMap<RoleTag, String>,
    pub temperatures: BTreeMap<RoleTag, f64>,
    pub max_tokens: BTreeMap<RoleTag, u32>,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            model: "gpt-4o-mini".into(),
            role_models: BTreeMap::new(),
            temperatures: BTreeMap::new(),
            max_tokens: BTreeMap::new(),
            max_in_flight: 8,
            retry: RetryPolicy::default(),
        }
    }
}

impl LlmConfig {
    pub fn model_for(&self, role: RoleTag) -> &str {
        self.role_models.get(&role).unwrap_or(&self.model)
    }

    pub fn temperature_for(&self, role: RoleTag) -> f64 {
        self.temperatures.get(&role).copied().unwrap_or_else(|| role.default_temperature())
    }

    pub fn max_tokens_for(&self, role: RoleTag) -> u32 {
        self.max_tokens.get(&role).copied().unwrap_or_else(|| role.default_max_tokens())
    }
}

struct Permits {
    limit: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

struct PermitGuard<'a>(&'a Permits);

impl Permits {
    fn new(limit: usize) -> Self {
        Permits { limit: limit.max(1), used: Mutex::new(0), freed: Condvar::new() }
    }

    fn acquire(&self) -> PermitGuard<'_> {
        let mut used = self.used.lock().expect("permit lock");
        while *used >= self.limit {
            used = self.freed.wait(used).expect("permit lock");
        }
        *used += 1;
        PermitGuard(self)
    }
}

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        let mut used = self.0.used.lock().expect("permit lock");
        *used -= 1;
        self.0.freed.notify_one();
    }
}

pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    config: LlmConfig,
    prompts: Arc<PromptSet>,
    permits: Permits,
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>, config: LlmConfig, prompts: PromptSet) -> Self {
        let permits = Permits::new(config.max_in_flight);
        Gateway { backend, config, prompts: Arc::new(prompts), permits }
    }

    /// Gateway with default settings and the bundled prompts.
    pub fn with_backend(backend: impl ChatBackend + 'static) -> Self {
        Gateway::new(Arc::new(backend), LlmConfig::default(), PromptSet::default())
    }

    pub fn prompts(&self) -> &PromptSet {
        &self.prompts
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    /// Builds a request with the configured sampling settings for `role`.
    pub fn request(
        &self,
        role: RoleTag,
        system_prompt: impl Into<String>,
        user_prompt: impl Into<String>,
    ) -> Result<ChatRequest, LlmError> {
        ChatRequest::new(
            role,
            system_prompt,
            user_prompt,
            self.config.temperature_for(role),
            self.config.max_tokens_for(role),
        )
    }

    pub fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let digest = request_digest(request);
        let _permit = self.permits.acquire();
        let text = self.backend.complete(request, &digest)?;
        Ok(ChatResponse { text, backend_id: self.backend.id().to_owned(), request_digest: digest })
    }

    pub fn ask(
        &self,
        role: RoleTag,
        system_prompt: impl Into<String>,
        user_prompt: impl Into<String>,
    ) -> Result<String, LlmError> {
        let request = self.request(role, system_prompt, user_prompt)?;
        Ok(self.chat(&request)?.text)
    }
}
