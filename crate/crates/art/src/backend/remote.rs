//! Remote chat-completion backend speaking the `/v1/chat/completions`
//! protocol over HTTP, with bounded in-flight requests and exponential
//! backoff on retryable failures.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::wire;
use super::{Backend, BackendError, GenerationRequest, GenerationResult};

pub const DEFAULT_API_KEY_ENV: &str = "ART_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub id: String,
    /// Base URL of the server, e.g. `http://localhost:8000`.
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token, if any.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    /// Retries on transport errors and rate limits (0 disables retrying).
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_retry_base_ms")]
    pub retry_base_ms: u64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: u32,
}

fn default_api_key_env() -> String {
    DEFAULT_API_KEY_ENV.to_string()
}
fn default_timeout_secs() -> u64 {
    30
}
fn default_max_retries() -> u32 {
    3
}
fn default_retry_base_ms() -> u64 {
    100
}
fn default_max_in_flight() -> u32 {
    4
}

impl RemoteConfig {
    pub fn new(id: impl Into<String>, base_url: impl Into<String>, model: impl Into<String>) -> Self {
        RemoteConfig {
            id: id.into(),
            base_url: base_url.into(),
            model: model.into(),
            api_key_env: default_api_key_env(),
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            retry_base_ms: default_retry_base_ms(),
            max_in_flight: default_max_in_flight(),
        }
    }
}

struct Gate {
    permits: Mutex<u32>,
    freed: Condvar,
}

impl Gate {
    fn new(n: u32) -> Self {
        Gate { permits: Mutex::new(n.max(1)), freed: Condvar::new() }
    }

    fn acquire(&self) {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.freed.wait(permits).unwrap();
        }
        *permits -= 1;
    }

    fn release(&self) {
        *self.permits.lock().unwrap() += 1;
        self.freed.notify_one();
    }
}

pub struct RemoteBackend {
    config: RemoteConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
    gate: Gate,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        let agent_config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build();
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        let gate = Gate::new(config.max_in_flight);
        RemoteBackend { config, api_key, agent: ureq::Agent::new_with_config(agent_config), gate }
    }

    fn endpoint(&self) -> String {
        format!("{}/v1/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, body: &wire::ChatRequest) -> Result<GenerationResult, BackendError> {
        let mut request = self.agent.post(self.endpoint());
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", format!("Bearer {key}"));
        }
        let response = request
            .send_json(body)
            .map_err(|e| map_ureq_error(&e))?;

        let status = response.status().as_u16();
        if status == 429 {
            let retry_after_secs = response
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok())
                .and_then(|s| s.trim().parse::<u64>().ok());
            return Err(BackendError::RateLimited { retry_after_secs });
        }
        let text = response
            .into_body()
            .read_to_string()
            .map_err(|e| BackendError::Transport(format!("reading response body: {e}")))?;
        if status >= 500 {
            return Err(BackendError::Transport(format!("server error {status}: {text}")));
        }
        if !(200..300).contains(&status) {
            return Err(BackendError::Protocol(format!("unexpected status {status}: {text}")));
        }
        let (completion, usage) = wire::decode_response(&text)?;
        Ok(GenerationResult { text: completion, backend_id: self.config.id.clone(), usage })
    }
}

fn map_ureq_error(e: &ureq::Error) -> BackendError {
    match e {
        ureq::Error::Timeout(_) => BackendError::Transport(format!("timeout: {e}")),
        ureq::Error::Io(_) | ureq::Error::HostNotFound | ureq::Error::ConnectionFailed => {
            BackendError::Transport(e.to_string())
        }
        ureq::Error::Protocol(_) | ureq::Error::Http(_) | ureq::Error::BadUri(_) => {
            BackendError::Protocol(e.to_string())
        }
        other => BackendError::Transport(other.to_string()),
    }
}

impl Backend for RemoteBackend {
    fn id(&self) -> &str {
        &self.config.id
    }

    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        req.validate()?;
        let body = wire::encode_request(req, &self.config.model);

        self.gate.acquire();
        let result = (|| {
            let mut attempt_idx = 0u32;
            loop {
                match self.attempt(&body) {
                    Ok(out) => return Ok(out),
                    Err(err) if err.is_retryable() && attempt_idx < self.config.max_retries => {
                        let backoff =
                            Duration::from_millis(self.config.retry_base_ms << attempt_idx.min(6));
                        let wait = match &err {
                            BackendError::RateLimited { retry_after_secs: Some(secs) } => {
                                backoff.max(Duration::from_secs(*secs))
                            }
                            _ => backoff,
                        };
                        std::thread::sleep(wait.min(Duration::from_secs(10)));
                        attempt_idx += 1;
                    }
                    Err(err) => return Err(err),
                }
            }
        })();
        self.gate.release();
        result
    }
}
