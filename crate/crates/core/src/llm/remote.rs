//! OpenAI-compatible HTTP backend with retry and exponential backoff.

use std::time::Duration;

use log::warn;
use serde_json::{json, Value};

use super::{ChatBackend, ChatRequest, LlmConfig, LlmError, RetryPolicy};

pub const API_KEY_VAR: &str = "MEMLOOP_API_KEY";
pub const BASE_URL_VAR: &str = "MEMLOOP_BASE_URL";

#[derive(Debug, Clone)]
pub struct RemoteSettings {
    pub base_url: String,
    pub api_key: String,
    pub retry: RetryPolicy,
}

impl RemoteSettings {
    pub fn from_env(retry: RetryPolicy) -> Result<Self, LlmError> {
        let base_url = std::env::var(BASE_URL_VAR)
            .map_err(|_| LlmError::Config(format!("{BASE_URL_VAR} is not set")))?;
        let api_key = std::env::var(API_KEY_VAR)
            .map_err(|_| LlmError::Config(format!("{API_KEY_VAR} is not set")))?;
        Ok(RemoteSettings { base_url, api_key, retry })
    }
}

pub(crate) struct HttpClient {
    client: reqwest::blocking::Client,
    settings: RemoteSettings,
}

impl HttpClient {
    pub(crate) fn new(settings: RemoteSettings) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(settings.retry.timeout_secs))
            .build()
            .map_err(|e| LlmError::Config(format!("HTTP client: {e}")))?;
        Ok(HttpClient { client, settings })
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.settings.base_url.trim_end_matches('/'), path)
    }

    fn attempt(&self, url: &str, body: &Value) -> Result<Value, LlmError> {
        let response = self
            .client
            .post(url)
            .bearer_auth(&self.settings.api_key)
            .json(body)
            .send()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = response.status();
        let text = response.text().map_err(|e| LlmError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(LlmError::Http { status: status.as_u16(), body: text });
        }
        serde_json::from_str(&text).map_err(|e| LlmError::Malformed(e.to_string()))
    }

    /// POSTs `body` to `path`, retrying transport errors, 429 and 5xx.
    pub(crate) fn post_json(&self, path: &str, body: &Value) -> Result<Value, LlmError> {
        let url = self.url(path);
        let policy = &self.settings.retry;
        let mut backoff = Duration::from_millis(policy.initial_backoff_ms);
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.attempt(&url, body) {
                Ok(v) => return Ok(v),
                Err(e) if is_retryable(&e) && attempt <= policy.retries => {
                    warn!("{url}: attempt {attempt} failed ({e}); retrying in {backoff:?}");
                    std::thread::sleep(backoff);
                    backoff *= 2;
                }
                Err(e) if is_retryable(&e) => {
                    return Err(LlmError::RetriesExhausted { attempts: attempt, last: e.to_string() })
                }
                Err(e) => return Err(e),
            }
        }
    }
}

fn is_retryable(e: &LlmError) -> bool {
    match e {
        LlmError::Transport(_) => true,
        LlmError::Http { status, .. } => *status == 429 || *status >= 500,
        _ => false,
    }
}

/// Chat completions over HTTP.
pub struct RemoteBackend {
    http: HttpClient,
    config: LlmConfig,
}

impl RemoteBackend {
    pub fn new(settings: RemoteSettings, config: LlmConfig) -> Result<Self, LlmError> {
        Ok(RemoteBackend { http: HttpClient::new(settings)?, config })
    }

    pub fn from_env(config: LlmConfig) -> Result<Self, LlmError> {
        Self::new(RemoteSettings::from_env(config.retry.clone())?, config)
    }
}

impl ChatBackend for RemoteBackend {
    fn id(&self) -> &str {
        "remote"
    }

    fn complete(&self, request: &ChatRequest, _digest: &str) -> Result<String, LlmError> {
        let body = json!({
            "model": self.config.model_for(request.role_tag),
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let response = self.http.post_json("chat/completions", &body)?;
        response
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| LlmError::Malformed("no choices[0].message.content".into()))
    }
}
