use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{check_request, LanguageModel, ModelError, ModelRequest, ModelResponse, Role};

const RECORDING_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Ok { text: String, truncated: bool },
    Err { error: ModelError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub role: Role,
    pub digest: String,
    pub outcome: Outcome,
}

/// An ordered session of request digests and their outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    pub version: u32,
    pub exchanges: Vec<Exchange>,
}

impl Default for Recording {
    fn default() -> Self {
        Recording { version: RECORDING_VERSION, exchanges: Vec::new() }
    }
}

impl Recording {
    pub fn export(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(path, text + "\n")
    }

    pub fn import(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let r: Recording = serde_json::from_str(&text).map_err(std::io::Error::other)?;
        if r.version != RECORDING_VERSION {
            return Err(std::io::Error::other(format!("unsupported recording version {}", r.version)));
        }
        Ok(r)
    }

    pub fn len(&self) -> usize {
        self.exchanges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exchanges.is_empty()
    }
}

/// Wraps a backend and records every exchange, errors included.
pub struct RecordingModel<M> {
    inner: M,
    log: Mutex<Recording>,
}

impl<M: LanguageModel> RecordingModel<M> {
    pub fn new(inner: M) -> Self {
        RecordingModel { inner, log: Mutex::new(Recording::default()) }
    }

    pub fn recording(&self) -> Recording {
        self.log.lock().expect("recording lock poisoned").clone()
    }

    pub fn export(&self, path: &Path) -> std::io::Result<()> {
        self.recording().export(path)
    }
}

impl<M: LanguageModel> LanguageModel for RecordingModel<M> {
    fn backend_id(&self) -> String {
        format!("recording({})", self.inner.backend_id())
    }

    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, ModelError> {
        // The lock spans the call so the log order matches completion order.
        let mut log = self.log.lock().expect("recording lock poisoned");
        let result = self.inner.complete(request);
        let outcome = match &result {
            Ok(r) => Outcome::Ok { text: r.text.clone(), truncated: r.truncated },
            Err(e) => Outcome::Err { error: e.clone() },
        };
        log.exchanges.push(Exchange { role: request.role, digest: request.digest(), outcome });
        result
    }
}

/// Serves a recording back in order, refusing requests whose digest differs.
pub struct ReplayModel {
    recording: Recording,
    cursor: Mutex<usize>,
}

impl ReplayModel {
    pub fn new(recording: Recording) -> Self {
        ReplayModel { recording, cursor: Mutex::new(0) }
    }

    pub fn remaining(&self) -> usize {
        self.recording.len() - *self.cursor.lock().expect("replay lock poisoned")
    }
}

impl LanguageModel for ReplayModel {
    fn backend_id(&self) -> String {
        "replay".into()
    }

    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, ModelError> {
        check_request(request)?;
        let mut cursor = self.cursor.lock().expect("replay lock poisoned");
        let index = *cursor;
        let Some(ex) = self.recording.exchanges.get(index) else {
            return Err(ModelError::ReplayExhausted { recorded: self.recording.len() });
        };
        let digest = request.digest();
        if ex.digest != digest {
            return Err(ModelError::ReplayMismatch { index, expected: ex.digest.clone(), found: digest });
        }
        *cursor += 1;
        match &ex.outcome {
            Outcome::Ok { text, truncated } => Ok(ModelResponse {
                text: text.clone(),
                backend_id: self.backend_id(),
                latency: Duration::ZERO,
                truncated: *truncated,
            }),
            Outcome::Err { error } => Err(error.clone()),
        }
    }
}
