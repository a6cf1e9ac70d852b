//! Language-model contract shared by decomposition, program generation,
//! feedback paraphrasing and cluster compression.

mod remote;
mod replay;
mod scripted;

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use remote::{RemoteConfig, RemoteModel, TOKEN_ENV, URL_ENV};
pub use replay::{Exchange, Outcome, Recording, RecordingModel, ReplayModel};
pub use scripted::{Fixture, ScriptedModel};

const DIGEST_VERSION: &str = "memo-request-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Decompose,
    Generate,
    Paraphrase,
    Compress,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Decompose => "decompose",
            Role::Generate => "generate",
            Role::Paraphrase => "paraphrase",
            Role::Compress => "compress",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub speaker: String,
    pub text: String,
}

impl Message {
    pub fn system(text: impl Into<String>) -> Self {
        Message { speaker: "system".into(), text: text.into() }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Message { speaker: "user".into(), text: text.into() }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Message { speaker: "assistant".into(), text: text.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub role: Role,
    pub messages: Vec<Message>,
    /// Maximum response length in characters.
    pub budget: usize,
}

impl ModelRequest {
    pub fn new(role: Role, messages: Vec<Message>, budget: usize) -> Self {
        ModelRequest { role, messages, budget }
    }

    /// Stable request identity: sha256 over a version tag, the role and the
    /// whitespace-normalized messages.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(DIGEST_VERSION.as_bytes());
        h.update(b"\n");
        h.update(self.role.name().as_bytes());
        h.update(b"\n");
        for m in &self.messages {
            h.update(m.speaker.as_bytes());
            h.update(b"\n");
            h.update(normalize_whitespace(&m.text).as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// All message texts, newline-joined.
    pub fn prompt_text(&self) -> String {
        self.messages.iter().map(|m| m.text.as_str()).collect::<Vec<_>>().join("\n")
    }

    /// Value of the last `KEY:` line in the final message, whitespace-trimmed.
    pub fn lookup_key(&self) -> Option<String> {
        let last = self.messages.last()?;
        last.text.lines().rev().find_map(|l| l.trim_start().strip_prefix("KEY:")).map(|k| k.trim().to_string())
    }
}

pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub backend_id: String,
    #[serde(with = "duration_ms")]
    pub latency: Duration,
    /// The backend's text exceeded the budget and was cut.
    pub truncated: bool,
}

mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum ModelError {
    #[error("no fixture for role `{role}` and key `{key}`")]
    FixtureMissing { role: Role, key: String },
    #[error("replay exhausted after {recorded} recorded exchanges")]
    ReplayExhausted { recorded: usize },
    #[error("replay mismatch at exchange {index}: recorded {expected}, got {found}")]
    ReplayMismatch { index: usize, expected: String, found: String },
    #[error("model request timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("model backend error: {message}")]
    Backend { message: String },
    #[error("invalid model request: {message}")]
    InvalidRequest { message: String },
}

impl ModelError {
    pub fn backend(message: impl Into<String>) -> Self {
        ModelError::Backend { message: message.into() }
    }
}

pub trait LanguageModel: Send + Sync {
    fn backend_id(&self) -> String;
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, ModelError>;
}

impl<M: LanguageModel + ?Sized> LanguageModel for std::sync::Arc<M> {
    fn backend_id(&self) -> String {
        (**self).backend_id()
    }

    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, ModelError> {
        (**self).complete(request)
    }
}

impl<M: LanguageModel + ?Sized> LanguageModel for Box<M> {
    fn backend_id(&self) -> String {
        (**self).backend_id()
    }

    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, ModelError> {
        (**self).complete(request)
    }
}

pub(crate) fn check_request(request: &ModelRequest) -> Result<(), ModelError> {
    if request.messages.is_empty() {
        return Err(ModelError::InvalidRequest { message: "no messages".into() });
    }
    Ok(())
}

/// Cuts `text` to `budget` characters, reporting whether it was cut.
pub(crate) fn enforce_budget(text: String, budget: usize) -> (String, bool) {
    if text.chars().count() <= budget {
        return (text, false);
    }
    tracing::warn!(budget, "model response truncated to budget");
    (text.chars().take(budget).collect(), true)
}
