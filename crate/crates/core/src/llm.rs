//! Blocking client for OpenAI-style chat-completions endpoints.
//!
//! Requests go to `{base_url}/chat/completions` with body
//! `{model, temperature, [top_p], messages: [{role, content}]}` and a bearer
//! token read from an environment variable. Connection failures, timeouts,
//! HTTP 429 and 5xx are retried with exponential backoff; 401/403 are not.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

/// Environment variable holding the bearer token unless configured otherwise.
pub const DEFAULT_TOKEN_ENV: &str = "DCSYNTH_API_KEY";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("auth configuration error: {0}")]
    Auth(String),
    #[error("endpoint unreachable after {attempts} attempts: {message}")]
    Unreachable { attempts: usize, message: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed endpoint response: {0}")]
    Malformed(String),
    #[error("invalid endpoint configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmEndpointConfig {
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    /// Passed through when set.
    pub top_p: Option<f64>,
    pub samples: usize,
    pub timeout_secs: f64,
    pub max_retries: usize,
    pub backoff_ms: u64,
    pub max_concurrency: usize,
    /// Name of the environment variable holding the bearer token.
    pub token_env: String,
}

impl Default for LlmEndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o".into(),
            temperature: 0.7,
            top_p: None,
            samples: 5,
            timeout_secs: 120.0,
            max_retries: 3,
            backoff_ms: 500,
            max_concurrency: 4,
            token_env: DEFAULT_TOKEN_ENV.into(),
        }
    }
}

impl LlmEndpointConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.samples == 0 {
            return Err(LlmError::Config("samples must be >= 1".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(LlmError::Config("temperature must be >= 0".into()));
        }
        if let Some(p) = self.top_p {
            if !(p > 0.0 && p <= 1.0) {
                return Err(LlmError::Config("top_p must be in (0, 1]".into()));
            }
        }
        if self.base_url.is_empty() {
            return Err(LlmError::Config("base_url is empty".into()));
        }
        Ok(())
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChatMessage,
}

pub struct LlmClient {
    config: LlmEndpointConfig,
    token: String,
    http: reqwest::blocking::Client,
}

enum Attempt {
    Done(String),
    Retry(String),
    Fatal(LlmError),
}

impl LlmClient {
    /// Validate the configuration and read the token from the environment.
    pub fn new(config: LlmEndpointConfig) -> Result<Self, LlmError> {
        config.validate()?;
        let token = std::env::var(&config.token_env)
            .ok()
            .filter(|t| !t.trim().is_empty())
            .ok_or_else(|| {
                LlmError::Auth(format!(
                    "environment variable {} is not set",
                    config.token_env
                ))
            })?;
        Self::with_token(config, token)
    }

    pub fn with_token(config: LlmEndpointConfig, token: String) -> Result<Self, LlmError> {
        config.validate()?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(Self {
            config,
            token,
            http,
        })
    }

    pub fn config(&self) -> &LlmEndpointConfig {
        &self.config
    }

    fn attempt(&self, body: &serde_json::Value) -> Attempt {
        let resp = self
            .http
            .post(self.config.endpoint())
            .bearer_auth(&self.token)
            .json(body)
            .send();
        let resp = match resp {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status().as_u16();
        let text = resp.text().unwrap_or_default();
        match status {
            200..=299 => match serde_json::from_str::<ChatResponse>(&text) {
                Ok(r) => match r.choices.into_iter().next() {
                    Some(c) => Attempt::Done(c.message.content),
                    None => Attempt::Fatal(LlmError::Malformed("no choices".into())),
                },
                Err(e) => Attempt::Fatal(LlmError::Malformed(e.to_string())),
            },
            401 | 403 => Attempt::Fatal(LlmError::Auth(format!("HTTP {status}: {text}"))),
            429 | 500..=599 => Attempt::Retry(format!("HTTP {status}: {text}")),
            _ => Attempt::Fatal(LlmError::Http { status, body: text }),
        }
    }

    /// One chat completion with retries.
    pub fn complete(&self, messages: &[ChatMessage]) -> Result<String, LlmError> {
        let mut body = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": messages,
        });
        if let Some(p) = self.config.top_p {
            body["top_p"] = json!(p);
        }
        let attempts = self.config.max_retries + 1;
        let mut last = String::new();
        for k in 0..attempts {
            match self.attempt(&body) {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(msg) => {
                    last = msg;
                    if k + 1 < attempts {
                        let wait = self.config.backoff_ms.saturating_mul(1 << k.min(16));
                        std::thread::sleep(Duration::from_millis(wait));
                    }
                }
            }
        }
        Err(LlmError::Unreachable {
            attempts,
            message: last,
        })
    }

    /// `n` independent completions of one prompt, at most
    /// `max_concurrency` in flight; results keep sample order.
    pub fn complete_batch(&self, prompt: &str, n: usize) -> Vec<Result<String, LlmError>> {
        let messages = [ChatMessage::user(prompt)];
        let width = self.config.max_concurrency.max(1);
        let mut out = Vec::with_capacity(n);
        let ids: Vec<usize> = (0..n).collect();
        for chunk in ids.chunks(width) {
            let results: Vec<_> = std::thread::scope(|s| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|_| s.spawn(|| self.complete(&messages)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| {
                        h.join().unwrap_or_else(|_| {
                            Err(LlmError::Malformed("request thread panicked".into()))
                        })
                    })
                    .collect()
            });
            out.extend(results);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_joins_path() {
        let c = LlmEndpointConfig {
            base_url: "http://localhost:9/v1/".into(),
            ..Default::default()
        };
        assert_eq!(c.endpoint(), "http://localhost:9/v1/chat/completions");
    }

    #[test]
    fn missing_token_is_an_auth_error() {
        let c = LlmEndpointConfig {
            token_env: "DCSYNTH_TEST_TOKEN_THAT_IS_NEVER_SET".into(),
            ..Default::default()
        };
        match LlmClient::new(c) {
            Err(LlmError::Auth(m)) => assert!(m.contains("DCSYNTH_TEST_TOKEN_THAT_IS_NEVER_SET")),
            other => panic!("unexpected {:?}", other.err()),
        }
    }

    #[test]
    fn invalid_settings_are_rejected() {
        let bad = LlmEndpointConfig {
            samples: 0,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(LlmError::Config(_))));
        let bad = LlmEndpointConfig {
            temperature: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
