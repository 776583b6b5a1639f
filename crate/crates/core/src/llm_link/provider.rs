//! Completion providers: a remote HTTP chat-completions client with
//! retry/backoff, and a deterministic fixture-backed mock for tests and
//! offline runs.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::Rng;
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::{debug, warn};

use super::LlmRequest;

/// Provider output: the raw text plus a truncation flag set when the
/// provider signals a length cutoff.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub truncated: bool,
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("provider exhausted after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("unexpected provider response: {0}")]
    BadResponse(String),
    #[error("no mock fixture for key {key:?} in {dir}")]
    MissingFixture { key: String, dir: PathBuf },
    #[error("cannot read fixture {path}: {source}")]
    FixtureIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A completion backend. Implementations must be safe to call from
/// multiple threads at once.
pub trait LlmProvider: Send + Sync {
    fn complete(&self, request: &LlmRequest) -> Result<Completion, ProviderError>;
}

/// Sends a request through the given provider.
pub fn complete(provider: &dyn LlmProvider, request: &LlmRequest) -> Result<Completion, ProviderError> {
    provider.complete(request)
}

/// Exponential backoff with full jitter.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            base_delay: Duration::from_secs(1),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    /// Sleep duration before retry number `attempt` (1-based): uniform in
    /// `[0, min(base * 2^(attempt-1), max))`.
    fn backoff_delay(&self, attempt: u32) -> Duration {
        let exp = attempt.saturating_sub(1).min(20);
        let ceiling = self
            .base_delay
            .saturating_mul(1u32 << exp)
            .min(self.max_delay);
        if ceiling.is_zero() {
            return Duration::ZERO;
        }
        let nanos = rand::rng().random_range(0..ceiling.as_nanos().max(1));
        Duration::from_nanos(nanos as u64)
    }
}

/// HTTP chat-completions provider.
///
/// Posts `{model, temperature, max_tokens, messages:[{role:"user",...}]}`
/// to the configured endpoint and retries transient failures (connection
/// errors, HTTP 429 and 5xx) with exponential backoff and full jitter.
/// The credential comes from an environment variable and never from
/// configuration files.
pub struct RemoteProvider {
    endpoint: String,
    credential: String,
    auth_header: String,
    retry: RetryPolicy,
    client: reqwest::blocking::Client,
}

impl fmt::Debug for RemoteProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // credential intentionally omitted
        f.debug_struct("RemoteProvider")
            .field("endpoint", &self.endpoint)
            .field("auth_header", &self.auth_header)
            .field("retry", &self.retry)
            .finish_non_exhaustive()
    }
}

impl RemoteProvider {
    /// Builds a provider reading the credential from `credential_env`.
    /// Fails with [`ProviderError::Auth`] before any network traffic when
    /// the variable is unset or empty.
    pub fn from_env(endpoint: &str, credential_env: &str) -> Result<Self, ProviderError> {
        let credential = std::env::var(credential_env)
            .ok()
            .filter(|v| !v.is_empty())
            .ok_or_else(|| {
                ProviderError::Auth(format!("environment variable {credential_env} is not set"))
            })?;
        Ok(Self::new(endpoint, credential))
    }

    pub fn new(endpoint: &str, credential: String) -> Self {
        Self {
            endpoint: endpoint.to_string(),
            credential,
            auth_header: "Authorization".to_string(),
            retry: RetryPolicy::default(),
            client: reqwest::blocking::Client::new(),
        }
    }

    /// Overrides the credential header, e.g. `api-key` for Azure-style
    /// deployments. `Authorization` values are sent as `Bearer <cred>`.
    pub fn with_auth_header(mut self, header: &str) -> Self {
        self.auth_header = header.to_string();
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn attempt(&self, request: &LlmRequest) -> Result<Completion, AttemptError> {
        let body = json!({
            "model": request.model_name,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "messages": [{"role": "user", "content": request.prompt_text}],
        });
        let auth_value = if self.auth_header.eq_ignore_ascii_case("authorization") {
            format!("Bearer {}", self.credential)
        } else {
            self.credential.clone()
        };
        let response = self
            .client
            .post(&self.endpoint)
            .header(self.auth_header.as_str(), auth_value)
            .json(&body)
            .send()
            .map_err(|e| AttemptError::Transient(format!("request failed: {e}")))?;

        let status = response.status();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(AttemptError::Fatal(ProviderError::Auth(format!(
                "endpoint returned {status}"
            ))));
        }
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(AttemptError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(AttemptError::Fatal(ProviderError::BadResponse(format!(
                "HTTP {status}"
            ))));
        }

        let payload: serde_json::Value = response
            .json()
            .map_err(|e| AttemptError::Fatal(ProviderError::BadResponse(format!("invalid JSON: {e}"))))?;
        let choice = payload
            .get("choices")
            .and_then(|c| c.get(0))
            .ok_or_else(|| AttemptError::Fatal(ProviderError::BadResponse("no choices".into())))?;
        let text = choice
            .pointer("/message/content")
            .and_then(|v| v.as_str())
            .ok_or_else(|| AttemptError::Fatal(ProviderError::BadResponse("no message content".into())))?
            .to_string();
        let truncated = choice
            .get("finish_reason")
            .and_then(|v| v.as_str())
            .map(|r| r == "length")
            .unwrap_or(false);
        Ok(Completion { text, truncated })
    }
}

enum AttemptError {
    Transient(String),
    Fatal(ProviderError),
}

impl LlmProvider for RemoteProvider {
    fn complete(&self, request: &LlmRequest) -> Result<Completion, ProviderError> {
        let mut last = String::new();
        for attempt in 1..=self.retry.max_attempts {
            match self.attempt(request) {
                Ok(completion) => {
                    if completion.truncated {
                        warn!(tag = ?request.tag, "provider signaled length cutoff");
                    }
                    return Ok(completion);
                }
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Transient(msg)) => {
                    last = msg;
                    if attempt < self.retry.max_attempts {
                        let delay = self.retry.backoff_delay(attempt);
                        debug!(attempt, delay_ms = delay.as_millis() as u64, error = %last, "retrying after transient failure");
                        std::thread::sleep(delay);
                    }
                }
            }
        }
        Err(ProviderError::Exhausted {
            attempts: self.retry.max_attempts,
            last,
        })
    }
}

/// Fixture-backed provider. Responses live in a directory as
/// `<key>.response.txt`, looked up first by the request tag (the doc id),
/// then by the SHA-256 hex digest of the prompt (first 16 characters).
#[derive(Debug, Clone)]
pub struct MockProvider {
    fixture_dir: PathBuf,
}

impl MockProvider {
    pub fn new(fixture_dir: &Path) -> Self {
        Self {
            fixture_dir: fixture_dir.to_path_buf(),
        }
    }

    fn fixture_path(&self, key: &str) -> PathBuf {
        self.fixture_dir.join(format!("{key}.response.txt"))
    }

    /// Digest key used when no tag matches a fixture.
    pub fn prompt_key(prompt: &str) -> String {
        let digest = Sha256::digest(prompt.as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        hex[..16].to_string()
    }
}

impl LlmProvider for MockProvider {
    fn complete(&self, request: &LlmRequest) -> Result<Completion, ProviderError> {
        let mut keys = Vec::new();
        if let Some(tag) = &request.tag {
            keys.push(tag.clone());
        }
        keys.push(Self::prompt_key(&request.prompt_text));

        for key in &keys {
            let path = self.fixture_path(key);
            if path.exists() {
                let text = fs::read_to_string(&path).map_err(|e| ProviderError::FixtureIo {
                    path: path.clone(),
                    source: e,
                })?;
                return Ok(Completion {
                    text,
                    truncated: false,
                });
            }
        }
        Err(ProviderError::MissingFixture {
            key: keys.join(", "),
            dir: self.fixture_dir.clone(),
        })
    }
}
