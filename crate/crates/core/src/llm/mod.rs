//! Chat-completion backends and the agent wrapper that both LLM roles use.
//!
//! ```text
//!   LlmBackend        complete(request) -> text
//!     ├─ RemoteBackend     OpenAI-compatible HTTP endpoint
//!     ├─ ScriptedBackend   rule-matched canned responses (tests, CI)
//!     └─ RecordingBackend  wraps another backend, keeps a transcript
//!   StubServer        serves any backend over the OpenAI HTTP shape
//!   Agent             system prompt + retry-on-parse-failure loop,
//!                       optionally retaining the whole dialogue
//! ```

mod remote;
mod scripted;
mod stub;
mod transcript;

use std::fmt;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use remote::{RemoteBackend, RemoteConfig};
pub use scripted::{LintIssue, Matcher, Script, ScriptRule, ScriptedBackend};
pub use stub::StubServer;
pub use transcript::{RecordingBackend, Transcript, TranscriptRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_id: String,
}

impl CompletionRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        match self.messages.first() {
            Some(m) if m.role == Role::System => {}
            _ => return Err(BackendError::InvalidRequest("first message must be the system prompt".into())),
        }
        if self.messages.iter().any(|m| m.role != Role::Assistant && m.content.trim().is_empty()) {
            return Err(BackendError::InvalidRequest("empty system or user message".into()));
        }
        if !(self.temperature >= 0.0) || self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("temperature must be >= 0 and max_tokens > 0".into()));
        }
        Ok(())
    }

    pub fn last_user(&self) -> Option<&str> {
        self.messages.iter().rev().find(|m| m.role == Role::User).map(|m| m.content.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum BackendError {
    #[error("backend unreachable: {0}")]
    Unreachable(String),
    #[error("no script rule matched prompt ending {0:?}")]
    NoRuleMatched(String),
    #[error("completion exceeded the token limit")]
    TokenLimitExceeded,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

pub trait LlmBackend: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<String, BackendError>;
}

pub type SharedBackend = Arc<dyn LlmBackend>;

/// Backend-agnostic token estimate: one token per four characters.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_id: String,
    /// Extra attempts after an unparsable reply.
    pub parse_retries: usize,
}

impl Default for AgentParams {
    fn default() -> Self {
        Self { temperature: 0.0, max_tokens: 2048, model_id: "llama-3.3-70b-instruct".into(), parse_retries: 2 }
    }
}

#[derive(Debug, Error)]
pub enum AskError<E: fmt::Display> {
    #[error(transparent)]
    Backend(BackendError),
    #[error("reply unparsable after {attempts} attempts: {error}")]
    Parse { attempts: usize, error: E, output: String },
}

/// Shared so that two roles can be backed by one agent (merged ablation).
pub type AgentHandle = Arc<Mutex<Agent>>;

/// One LLM role: a configuration prompt, a backend and sampling parameters.
/// A conversational agent keeps every exchange and resends it.
pub struct Agent {
    name: String,
    system: String,
    backend: SharedBackend,
    params: AgentParams,
    dialogue: Option<Vec<ChatMessage>>,
}

impl fmt::Debug for Agent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Agent")
            .field("name", &self.name)
            .field("retains_dialogue", &self.dialogue.is_some())
            .finish()
    }
}

impl Agent {
    pub fn stateless(name: impl Into<String>, system: String, backend: SharedBackend, params: AgentParams) -> Self {
        Self { name: name.into(), system, backend, params, dialogue: None }
    }

    pub fn conversational(name: impl Into<String>, system: String, backend: SharedBackend, params: AgentParams) -> Self {
        Self { name: name.into(), system, backend, params, dialogue: Some(Vec::new()) }
    }

    pub fn into_handle(self) -> AgentHandle {
        Arc::new(Mutex::new(self))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn system_prompt(&self) -> &str {
        &self.system
    }

    /// Retained exchanges, `None` for a stateless agent.
    pub fn dialogue(&self) -> Option<&[ChatMessage]> {
        self.dialogue.as_deref()
    }

    /// Sends `user`, parsing the reply with `parse`. On a parse failure the
    /// bad reply and a corrective message are appended and the model is asked
    /// again, up to `parse_retries` times.
    pub fn ask<T, E, F>(&mut self, user: String, parse: F) -> Result<T, AskError<E>>
    where
        E: fmt::Display,
        F: Fn(&str) -> Result<T, E>,
    {
        let mut messages = Vec::with_capacity(2 + self.dialogue.as_ref().map_or(0, Vec::len));
        messages.push(ChatMessage::system(self.system.clone()));
        if let Some(d) = &self.dialogue {
            messages.extend(d.iter().cloned());
        }
        let first_new = messages.len();
        messages.push(ChatMessage::user(user));
        let mut attempt = 0;
        loop {
            let req = CompletionRequest {
                messages: messages.clone(),
                temperature: self.params.temperature,
                max_tokens: self.params.max_tokens,
                model_id: self.params.model_id.clone(),
            };
            let reply = self.backend.complete(&req).map_err(AskError::Backend)?;
            attempt += 1;
            match parse(&reply) {
                Ok(v) => {
                    messages.push(ChatMessage::assistant(reply));
                    if let Some(d) = self.dialogue.as_mut() {
                        d.extend(messages.drain(first_new..));
                    }
                    return Ok(v);
                }
                Err(e) if attempt > self.params.parse_retries => {
                    if let Some(d) = self.dialogue.as_mut() {
                        messages.push(ChatMessage::assistant(reply.clone()));
                        d.extend(messages.drain(first_new..));
                    }
                    return Err(AskError::Parse { attempts: attempt, error: e, output: reply });
                }
                Err(e) => {
                    tracing::debug!(agent = %self.name, attempt, "unparsable reply: {e}");
                    messages.push(ChatMessage::assistant(reply));
                    messages.push(ChatMessage::user(format!(
                        "FORMAT ERROR: {e}. Reply again using exactly the required output format."
                    )));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agent(script: Script, conversational: bool) -> Agent {
        let b: SharedBackend = Arc::new(ScriptedBackend::new(script).unwrap());
        if conversational {
            Agent::conversational("t", "sys".into(), b, AgentParams::default())
        } else {
            Agent::stateless("t", "sys".into(), b, AgentParams::default())
        }
    }

    #[test]
    fn token_estimate_is_ceiling_of_quarter() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("abcd"), 1);
        assert_eq!(estimate_tokens("abcde"), 2);
    }

    #[test]
    fn request_validation() {
        let mut r = CompletionRequest {
            messages: vec![ChatMessage::user("hi")],
            temperature: 0.0,
            max_tokens: 10,
            model_id: "m".into(),
        };
        assert!(r.validate().is_err());
        r.messages.insert(0, ChatMessage::system("s"));
        assert!(r.validate().is_ok());
        r.temperature = -1.0;
        assert!(r.validate().is_err());
    }

    #[test]
    fn retries_then_gives_up() {
        let mut a = agent(Script::new(vec![ScriptRule::substring("", "nonsense")]), false);
        let err = a.ask("go".into(), |s: &str| if s == "ok" { Ok(()) } else { Err("bad") }).unwrap_err();
        assert!(matches!(err, AskError::Parse { attempts: 3, .. }));
    }

    #[test]
    fn corrective_message_reaches_model() {
        let script = Script::new(vec![ScriptRule::substring("FORMAT ERROR", "ok"), ScriptRule::substring("go", "nonsense")]);
        let mut a = agent(script, true);
        a.ask("go".into(), |s: &str| if s == "ok" { Ok(()) } else { Err("bad") }).unwrap();
        // user, bad reply, correction, good reply
        assert_eq!(a.dialogue().unwrap().len(), 4);
    }
}
