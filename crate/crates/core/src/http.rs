//! Blocking JSON-over-HTTP with bounded retries, shared by the remote completion and
//! embedding providers.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Errors from any completion or embedding provider. Remote variants carry the number
/// of attempts made.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProviderError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("HTTP status {code} after {attempts} attempt(s)")]
    HttpStatus { code: u16, attempts: u32 },
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("malformed response after {attempts} attempt(s): {message}")]
    MalformedResponse { attempts: u32, message: String },
    #[error("missing credentials: environment variable {0} is not set")]
    MissingToken(String),
    #[error("no scripted response matches the prompt")]
    UnmatchedPrompt,
    #[error("{0}")]
    Other(String),
}

impl ProviderError {
    pub fn attempts(&self) -> Option<u32> {
        match self {
            ProviderError::Transport { attempts, .. }
            | ProviderError::HttpStatus { attempts, .. }
            | ProviderError::Timeout { attempts }
            | ProviderError::MalformedResponse { attempts, .. } => Some(*attempts),
            _ => None,
        }
    }
}

fn default_timeout() -> f64 {
    60.0
}
fn default_attempts() -> u32 {
    3
}
fn default_backoff_base() -> f64 {
    1.0
}
fn default_backoff_factor() -> f64 {
    2.0
}

/// Endpoint settings for a remote provider. The token itself is never stored here,
/// only the name of the environment variable that holds it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    /// Total attempts per call, the first one included.
    #[serde(default = "default_attempts", alias = "max_retries")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff_base")]
    pub backoff_base_secs: f64,
    #[serde(default = "default_backoff_factor")]
    pub backoff_factor: f64,
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            token_env: None,
            timeout_secs: default_timeout(),
            max_attempts: default_attempts(),
            backoff_base_secs: default_backoff_base(),
            backoff_factor: default_backoff_factor(),
        }
    }

    pub fn token(&self) -> Result<Option<String>, ProviderError> {
        match &self.token_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| ProviderError::MissingToken(var.clone())),
        }
    }

    /// Delay before attempt `n + 1`, given `n` failed attempts so far.
    pub fn backoff(&self, failed: u32) -> Duration {
        let secs = self.backoff_base_secs * self.backoff_factor.powi(failed.saturating_sub(1) as i32);
        Duration::from_secs_f64(secs.max(0.0))
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}/{}", self.endpoint.trim_end_matches('/'), path.trim_start_matches('/'))
    }
}

pub struct JsonClient {
    client: reqwest::blocking::Client,
}

impl Default for JsonClient {
    fn default() -> Self {
        Self::new()
    }
}

impl JsonClient {
    pub fn new() -> Self {
        Self {
            client: reqwest::blocking::Client::new(),
        }
    }

    /// POSTs `body` and returns the decoded JSON response and the attempt count.
    /// Transport failures, timeouts, 429 and 5xx are retried up to `max_attempts`.
    pub fn post(
        &self,
        config: &HttpConfig,
        url: &str,
        body: &Value,
        max_attempts: u32,
    ) -> Result<(Value, u32), ProviderError> {
        let token = config.token()?;
        let max_attempts = max_attempts.max(1);
        let timeout = Duration::from_secs_f64(config.timeout_secs.max(0.001));
        let mut attempt = 0;
        loop {
            attempt += 1;
            let mut request = self.client.post(url).timeout(timeout).json(body);
            if let Some(token) = &token {
                request = request.bearer_auth(token);
            }
            let error = match request.send() {
                Ok(response) => {
                    let status = response.status();
                    if status.is_success() {
                        return response
                            .json::<Value>()
                            .map(|v| (v, attempt))
                            .map_err(|e| ProviderError::MalformedResponse {
                                attempts: attempt,
                                message: e.to_string(),
                            });
                    }
                    let err = ProviderError::HttpStatus {
                        code: status.as_u16(),
                        attempts: attempt,
                    };
                    if !(status.is_server_error() || status.as_u16() == 429) {
                        return Err(err);
                    }
                    err
                }
                Err(e) if e.is_timeout() => ProviderError::Timeout { attempts: attempt },
                Err(e) => ProviderError::Transport {
                    attempts: attempt,
                    message: e.to_string(),
                },
            };
            if attempt >= max_attempts {
                return Err(error);
            }
            log::warn!("request to {url} failed ({error}); retrying");
            std::thread::sleep(config.backoff(attempt));
        }
    }
}
