//! Chat-completion access for every stage.
//!
//! Stages talk to a [`Session`], which is owned by one task run and counts
//! its calls. A session wraps a shared [`ChatBackend`]: the deterministic
//! [`ScriptedBackend`] for tests and fixtures, or [`HttpBackend`] for an
//! OpenAI-compatible endpoint.

mod http;
pub mod prompts;
mod scripted;

use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::HttpBackend;
pub use prompts::{render_prompt, PromptError};
pub use scripted::{Matcher, ScriptEntry, ScriptedBackend, ScriptedFixture};

/// Purpose tags attached to every request; scripted fixtures match on them.
pub mod purpose {
    pub const ROUTE: &str = "route";
    pub const DECOMPOSE: &str = "decompose";
    pub const PLAN: &str = "plan";
    pub const ACT: &str = "act";
    pub const JUDGE: &str = "judge";
    pub const REPLAN: &str = "replan";
    pub const SELECT: &str = "select";
    pub const SCHEMA: &str = "schema";
    pub const EXTRACT: &str = "extract";
    pub const CODEGEN: &str = "codegen";
    pub const REFLECT: &str = "reflect";
    /// Acting turns of the short-horizon execution policy.
    pub const EXEC_ACT: &str = "exec_act";
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("scripted backend has no entry for purpose `{purpose}` (request starts: {excerpt:?})")]
    ScriptedMiss { purpose: String, excerpt: String },
    #[error("strict script left {count} entries unconsumed: {purposes:?}")]
    UnconsumedEntries { count: usize, purposes: Vec<String> },
    #[error("transport error after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("request timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("model endpoint returned {status}: {body}")]
    Status { status: u16, body: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("configuration error: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReasoningEffort {
    Minimal,
    Low,
    Medium,
    High,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_output_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning_effort: Option<ReasoningEffort>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            temperature: 0.5,
            top_p: 0.95,
            max_output_tokens: 8192,
            reasoning_effort: None,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GatewayError::InvalidRequest(format!(
                "top_p {} outside (0, 1]",
                self.top_p
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub params: GenerationParams,
    pub purpose_tag: String,
}

impl ChatRequest {
    /// The usual two-message shape: a system prompt and one user turn.
    pub fn new(purpose: &str, system: String, user: String, params: GenerationParams) -> Self {
        ChatRequest {
            messages: vec![
                Message {
                    role: Role::System,
                    content: system,
                },
                Message {
                    role: Role::User,
                    content: user,
                },
            ],
            params,
            purpose_tag: purpose.to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        match self.messages.first() {
            None => return Err(GatewayError::InvalidRequest("no messages".into())),
            Some(m) if m.role != Role::System => {
                return Err(GatewayError::InvalidRequest(
                    "first message must be the system prompt".into(),
                ))
            }
            _ => {}
        }
        self.params.validate()
    }

    /// All message contents joined, as matched by scripted fixtures.
    pub fn content(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError>;

    /// End-of-run check; strict scripted fixtures fail here if entries remain.
    fn verify(&self) -> Result<(), GatewayError> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub purpose: String,
    pub request: String,
    pub response: Result<String, String>,
}

/// One run's view of the gateway: call accounting, transcript and warnings.
pub struct Session {
    backend: Arc<dyn ChatBackend>,
    params: GenerationParams,
    transcript: Mutex<Vec<Exchange>>,
    warnings: Mutex<Vec<String>>,
}

impl Session {
    pub fn new(backend: Arc<dyn ChatBackend>, params: GenerationParams) -> Self {
        Session {
            backend,
            params,
            transcript: Mutex::new(Vec::new()),
            warnings: Mutex::new(Vec::new()),
        }
    }

    pub fn params(&self) -> &GenerationParams {
        &self.params
    }

    /// Sends a system+user request tagged with `purpose`.
    pub fn ask(&self, purpose: &str, system: String, user: String) -> Result<String, GatewayError> {
        self.complete(&ChatRequest::new(purpose, system, user, self.params.clone()))
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        request.validate()?;
        let result = self.backend.complete(request);
        self.transcript.lock().expect("transcript lock").push(Exchange {
            purpose: request.purpose_tag.clone(),
            request: request.content(),
            response: result.clone().map_err(|e| e.to_string()),
        });
        result
    }

    pub fn verify(&self) -> Result<(), GatewayError> {
        self.backend.verify()
    }

    /// Number of `complete` invocations so far, failed ones included.
    pub fn llm_calls(&self) -> u32 {
        self.transcript.lock().expect("transcript lock").len() as u32
    }

    pub fn calls_with_purpose(&self, purpose: &str) -> usize {
        self.transcript
            .lock()
            .expect("transcript lock")
            .iter()
            .filter(|e| e.purpose == purpose)
            .count()
    }

    pub fn transcript(&self) -> Vec<Exchange> {
        self.transcript.lock().expect("transcript lock").clone()
    }

    pub fn warn(&self, message: impl Into<String>) {
        let message = message.into();
        tracing::warn!("{message}");
        self.warnings.lock().expect("warnings lock").push(message);
    }

    pub fn warnings(&self) -> Vec<String> {
        self.warnings.lock().expect("warnings lock").clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Scripted,
    Http,
}

/// The `llm.json` configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    pub backend: BackendKind,
    #[serde(default)]
    pub model: String,
    #[serde(default)]
    pub base_url: String,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_top_p")]
    pub top_p: f64,
    #[serde(default = "default_timeout")]
    pub timeout_s: u64,
    #[serde(default = "default_max_tokens")]
    pub max_output_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning_effort: Option<ReasoningEffort>,
    /// Scripted backend: path of the fixture file, relative to the config.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture: Option<String>,
    #[serde(default)]
    pub strict: bool,
}

fn default_key_env() -> String {
    "OPENAI_API_KEY".into()
}
fn default_temperature() -> f64 {
    0.5
}
fn default_top_p() -> f64 {
    0.95
}
fn default_timeout() -> u64 {
    120
}
fn default_max_tokens() -> u32 {
    8192
}

impl LlmConfig {
    pub fn scripted(fixture: Option<String>, strict: bool) -> Self {
        LlmConfig {
            backend: BackendKind::Scripted,
            model: "scripted".into(),
            base_url: String::new(),
            api_key_env: default_key_env(),
            temperature: default_temperature(),
            top_p: default_top_p(),
            timeout_s: default_timeout(),
            max_output_tokens: default_max_tokens(),
            reasoning_effort: None,
            fixture,
            strict,
        }
    }

    pub fn params(&self) -> GenerationParams {
        GenerationParams {
            temperature: self.temperature,
            top_p: self.top_p,
            max_output_tokens: self.max_output_tokens,
            reasoning_effort: self.reasoning_effort,
        }
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        let mut config: LlmConfig = serde_json::from_str(&text)
            .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        if let (Some(fixture), Some(dir)) = (&config.fixture, path.parent()) {
            let p = Path::new(fixture);
            if p.is_relative() {
                config.fixture = Some(dir.join(p).to_string_lossy().into_owned());
            }
        }
        config.params().validate()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_params_follow_reported_settings() {
        let p = GenerationParams::default();
        assert_eq!(p.temperature, 0.5);
        assert_eq!(p.top_p, 0.95);
        assert_eq!(p.max_output_tokens, 8192);
    }

    #[test]
    fn params_bounds() {
        let mut p = GenerationParams { temperature: 2.5, ..Default::default() };
        assert!(p.validate().is_err());
        p.temperature = 0.0;
        p.top_p = 0.0;
        assert!(p.validate().is_err());
        p.top_p = 1.0;
        assert!(p.validate().is_ok());
    }

    #[test]
    fn first_message_must_be_system() {
        let mut req = ChatRequest::new("act", "s".into(), "u".into(), GenerationParams::default());
        assert!(req.validate().is_ok());
        req.messages.remove(0);
        assert!(req.validate().is_err());
        req.messages.clear();
        assert!(req.validate().is_err());
    }

    #[test]
    fn config_defaults() {
        let c: LlmConfig = serde_json::from_str(r#"{"backend": "http", "model": "gpt-4o"}"#).unwrap();
        assert_eq!(c.temperature, 0.5);
        assert_eq!(c.top_p, 0.95);
        assert_eq!(c.api_key_env, "OPENAI_API_KEY");
    }
}
