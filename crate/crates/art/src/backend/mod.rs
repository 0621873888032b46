//! The generation contract and its two implementations: a remote
//! chat-completion client and a deterministic scripted backend for tests
//! and desk-scale ablations.

mod remote;
mod scripted;
pub mod wire;

pub use remote::{RemoteBackend, RemoteConfig};
pub use scripted::{ScriptEntry, ScriptedBackend, ScriptedFallback};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash;

pub const DEFAULT_MAX_TOKENS_PREDICTION: u32 = 512;
pub const DEFAULT_MAX_TOKENS_REFINEMENT: u32 = 768;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    fn tag(self) -> u8 {
        match self {
            Role::System => b's',
            Role::User => b'u',
            Role::Assistant => b'a',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message { role: Role::User, content: content.into() }
    }
}

/// A single generation request. `temperature == 0` with `top_p == 1`
/// denotes greedy decoding. The optional seed doubles as the sample index
/// for scripted backends (slot position when issued through [`generate_k`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub seed: Option<i64>,
}

impl GenerationRequest {
    /// Greedy request (temperature 0, top-p 1) over the given messages.
    pub fn greedy(messages: Vec<Message>, max_tokens: u32) -> Self {
        GenerationRequest { messages, temperature: 0.0, top_p: 1.0, max_tokens, seed: None }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.messages.is_empty() {
            return Err(BackendError::InvalidRequest("message sequence is empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(BackendError::InvalidRequest(format!(
                "top_p {} outside (0, 1]",
                self.top_p
            )));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> u64 {
        fingerprint_messages(&self.messages)
    }
}

/// Stable 64-bit fingerprint of a full message sequence. Role and content
/// are folded with unit separators so distinct sequences cannot collide by
/// concatenation.
pub fn fingerprint_messages(messages: &[Message]) -> u64 {
    let mut state = hash::FNV_OFFSET_BASIS;
    for m in messages {
        state = hash::fnv1a64_continue(state, &[m.role.tag(), 0x1f]);
        state = hash::fnv1a64_continue(state, m.content.as_bytes());
        state = hash::fnv1a64_continue(state, &[0x1e]);
    }
    state
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub backend_id: String,
    pub usage: Usage,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("invalid generation request: {0}")]
    InvalidRequest(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("no scripted response for fingerprint {fingerprint:016x} at temperature {temperature}, index {index}")]
    ScriptMiss { fingerprint: u64, temperature: f64, index: u32 },
    #[error("rate limited{}", retry_after_secs.map(|s| format!(" (retry after {s}s)")).unwrap_or_default())]
    RateLimited { retry_after_secs: Option<u64> },
    #[error("all {0} slots of a batched generation failed; first error: {1}")]
    AllSlotsFailed(usize, String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_) | BackendError::RateLimited { .. })
    }
}

/// A generation backend. Implementations must be shareable across
/// concurrent pipeline workers.
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, BackendError>;
}

/// Draw one sample per temperature; slot `i` runs at `temperatures[i]` with
/// its sample index carried in the seed field. Per-slot failures are
/// reported in place; the batch as a whole fails only if every slot fails.
pub fn generate_k(
    backend: &dyn Backend,
    base: &GenerationRequest,
    k: usize,
    temperatures: &[f64],
) -> Result<Vec<Result<GenerationResult, BackendError>>, BackendError> {
    if temperatures.len() != k {
        return Err(BackendError::InvalidRequest(format!(
            "k = {k} but {} temperatures supplied",
            temperatures.len()
        )));
    }
    if k == 0 {
        return Err(BackendError::InvalidRequest("k must be positive".into()));
    }
    let slots: Vec<Result<GenerationResult, BackendError>> = temperatures
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let mut req = base.clone();
            req.temperature = t;
            req.seed = Some(i as i64);
            backend.generate(&req)
        })
        .collect();
    if slots.iter().all(|s| s.is_err()) {
        let first = slots[0].as_ref().unwrap_err().to_string();
        return Err(BackendError::AllSlotsFailed(k, first));
    }
    Ok(slots)
}
