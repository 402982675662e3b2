use std::sync::OnceLock;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, CompletionRequest, LlmBackend};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Base URL (`http://host:port/v1`) or the full `/chat/completions` URL.
    pub endpoint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key: Option<String>,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub backoff_ms: u64,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self { endpoint: endpoint.into(), api_key: None, timeout_secs: 120.0, max_retries: 3, backoff_ms: 500 }
    }

    /// Reads `TACOS_LLM_ENDPOINT`, `TACOS_LLM_API_KEY` and
    /// `TACOS_LLM_TIMEOUT_SECS`. Returns `None` without an endpoint.
    pub fn from_env() -> Option<Self> {
        let mut cfg = Self::new(std::env::var("TACOS_LLM_ENDPOINT").ok()?);
        cfg.api_key = std::env::var("TACOS_LLM_API_KEY").ok().filter(|k| !k.is_empty());
        if let Some(t) = std::env::var("TACOS_LLM_TIMEOUT_SECS").ok().and_then(|t| t.parse().ok()) {
            cfg.timeout_secs = t;
        }
        Some(cfg)
    }

    fn url(&self) -> String {
        let base = self.endpoint.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

/// OpenAI-compatible chat-completions client. Transport failures, 429 and
/// 5xx responses are retried with exponential backoff.
pub struct RemoteBackend {
    cfg: RemoteConfig,
    // built lazily: a blocking client must not be created on an async runtime thread
    client: OnceLock<reqwest::blocking::Client>,
}

impl RemoteBackend {
    pub fn new(cfg: RemoteConfig) -> Self {
        Self { cfg, client: OnceLock::new() }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.cfg
    }

    fn client(&self) -> Result<&reqwest::blocking::Client, BackendError> {
        if let Some(c) = self.client.get() {
            return Ok(c);
        }
        let c = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(self.cfg.timeout_secs))
            .build()
            .map_err(|e| BackendError::Unreachable(e.to_string()))?;
        Ok(self.client.get_or_init(|| c))
    }

    fn attempt(&self, body: &Value) -> Result<String, Attempt> {
        let mut rb = self.client().map_err(Attempt::Fatal)?.post(self.cfg.url()).json(body);
        if let Some(key) = &self.cfg.api_key {
            rb = rb.bearer_auth(key);
        }
        let resp = rb.send().map_err(|e| Attempt::Retry(BackendError::Unreachable(e.to_string())))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Attempt::Retry(BackendError::Unreachable(format!("HTTP {status}"))));
        }
        let text = resp.text().map_err(|e| Attempt::Retry(BackendError::Unreachable(e.to_string())))?;
        if !status.is_success() {
            return Err(Attempt::Fatal(BackendError::InvalidRequest(format!("HTTP {status}: {text}"))));
        }
        parse_completion(&text).map_err(Attempt::Fatal)
    }
}

enum Attempt {
    Retry(BackendError),
    Fatal(BackendError),
}

pub(crate) fn parse_completion(text: &str) -> Result<String, BackendError> {
    let v: Value = serde_json::from_str(text).map_err(|e| BackendError::Protocol(e.to_string()))?;
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| BackendError::Protocol("response has no choices".into()))?;
    if choice.get("finish_reason").and_then(Value::as_str) == Some("length") {
        return Err(BackendError::TokenLimitExceeded);
    }
    choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| BackendError::Protocol("choice has no message content".into()))
}

impl LlmBackend for RemoteBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<String, BackendError> {
        req.validate()?;
        let body = json!({
            "model": req.model_id,
            "messages": req.messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        let mut last = BackendError::Unreachable("no attempt made".into());
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(self.cfg.backoff_ms << (attempt - 1)));
            }
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(e)) => {
                    tracing::warn!(attempt, "llm request failed: {e}");
                    last = e;
                }
            }
        }
        Err(last)
    }
}
