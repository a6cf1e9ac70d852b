use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{check_request, enforce_budget, LanguageModel, ModelError, ModelRequest, ModelResponse};

pub const URL_ENV: &str = "MEMO_MODEL_URL";
pub const TOKEN_ENV: &str = "MEMO_MODEL_TOKEN";

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub url: String,
    pub token: Option<String>,
    pub model: Option<String>,
    pub timeout: Duration,
    /// Extra attempts after the first.
    pub retries: u32,
}

impl RemoteConfig {
    pub fn new(url: impl Into<String>) -> Self {
        RemoteConfig { url: url.into(), token: None, model: None, timeout: Duration::from_secs(60), retries: 2 }
    }

    /// Reads the endpoint and token from `MEMO_MODEL_URL` / `MEMO_MODEL_TOKEN`.
    pub fn from_env() -> Option<Self> {
        let url = std::env::var(URL_ENV).ok().filter(|u| !u.trim().is_empty())?;
        let mut cfg = RemoteConfig::new(url);
        cfg.token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
        Some(cfg)
    }
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
    messages: Vec<WireMessage<'a>>,
    max_chars: usize,
    metadata: WireMetadata<'a>,
}

#[derive(Serialize)]
struct WireMetadata<'a> {
    role_tag: &'a str,
}

#[derive(Deserialize)]
struct WireReply {
    content: String,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireReply,
}

/// Accepts `{"message": {"content": ..}}` or `{"choices": [{"message": {"content": ..}}]}`.
#[derive(Deserialize)]
struct WireResponse {
    message: Option<WireReply>,
    #[serde(default)]
    choices: Vec<WireChoice>,
}

/// Chat-completion JSON client with a per-attempt timeout and bounded retries.
pub struct RemoteModel {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
}

enum AttemptError {
    Timeout,
    Retryable(String),
    Fatal(String),
}

impl RemoteModel {
    pub fn new(config: RemoteConfig) -> Result<Self, ModelError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| ModelError::backend(e.to_string()))?;
        Ok(RemoteModel { config, client })
    }

    fn attempt(&self, request: &ModelRequest) -> Result<String, AttemptError> {
        let body = WireRequest {
            model: self.config.model.as_deref(),
            messages: request.messages.iter().map(|m| WireMessage { role: &m.speaker, content: &m.text }).collect(),
            max_chars: request.budget,
            metadata: WireMetadata { role_tag: request.role.name() },
        };
        let mut call = self.client.post(&self.config.url).json(&body);
        if let Some(token) = &self.config.token {
            call = call.bearer_auth(token);
        }
        let resp = call.send().map_err(|e| {
            if e.is_timeout() {
                AttemptError::Timeout
            } else {
                AttemptError::Retryable(e.to_string())
            }
        })?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(AttemptError::Retryable(format!("status {status}")));
        }
        if !status.is_success() {
            return Err(AttemptError::Fatal(format!("status {status}")));
        }
        let parsed: WireResponse = resp.json().map_err(|e| {
            if e.is_timeout() {
                AttemptError::Timeout
            } else {
                AttemptError::Fatal(format!("malformed response: {e}"))
            }
        })?;
        parsed
            .message
            .or_else(|| parsed.choices.into_iter().next().map(|c| c.message))
            .map(|m| m.content)
            .ok_or_else(|| AttemptError::Fatal("response carries no message".into()))
    }
}

impl LanguageModel for RemoteModel {
    fn backend_id(&self) -> String {
        format!("remote:{}", self.config.url)
    }

    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, ModelError> {
        check_request(request)?;
        let start = Instant::now();
        let attempts = self.config.retries + 1;
        let mut last = ModelError::Timeout { attempts };
        let mut all_timeouts = true;
        for n in 1..=attempts {
            match self.attempt(request) {
                Ok(text) => {
                    let (text, truncated) = enforce_budget(text, request.budget);
                    return Ok(ModelResponse {
                        text,
                        backend_id: self.backend_id(),
                        latency: start.elapsed(),
                        truncated,
                    });
                }
                Err(AttemptError::Fatal(m)) => return Err(ModelError::backend(m)),
                Err(AttemptError::Timeout) => {
                    tracing::warn!(attempt = n, "model request timed out")
                }
                Err(AttemptError::Retryable(m)) => {
                    tracing::warn!(attempt = n, error = %m, "model request failed");
                    all_timeouts = false;
                    last = ModelError::backend(m);
                }
            }
        }
        if all_timeouts {
            Err(ModelError::Timeout { attempts })
        } else {
            Err(last)
        }
    }
}

#[cfg(test)]
mod tests {
    use std::io::{Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicU32, Ordering};
    use std::sync::Arc;

    use super::*;
    use crate::model::{Message, Role};

    fn req() -> ModelRequest {
        ModelRequest::new(Role::Generate, vec![Message::user("KEY: x")], 5)
    }

    #[test]
    fn timeout_after_retries() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let accepted = Arc::new(AtomicU32::new(0));
        let counter = accepted.clone();
        std::thread::spawn(move || {
            let mut held = Vec::new();
            for stream in listener.incoming().flatten() {
                counter.fetch_add(1, Ordering::SeqCst);
                held.push(stream);
            }
        });
        let mut cfg = RemoteConfig::new(format!("http://{addr}/v1/chat"));
        cfg.timeout = Duration::from_millis(150);
        cfg.retries = 2;
        let err = RemoteModel::new(cfg).unwrap().complete(&req()).unwrap_err();
        assert_eq!(err, ModelError::Timeout { attempts: 3 });
        assert_eq!(accepted.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn chat_round_trip_with_budget() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            let (mut s, _) = listener.accept().unwrap();
            let mut buf = [0u8; 4096];
            let _ = s.read(&mut buf).unwrap();
            let body = r#"{"choices":[{"message":{"role":"assistant","content":"release()"}}]}"#;
            write!(
                s,
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\n\r\n{}",
                body.len(),
                body
            )
            .unwrap();
        });
        let r = RemoteModel::new(RemoteConfig::new(format!("http://{addr}/"))).unwrap().complete(&req()).unwrap();
        assert_eq!(r.text, "relea");
        assert!(r.truncated);
    }
}
