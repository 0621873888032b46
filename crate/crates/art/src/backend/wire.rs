//! Chat-completion wire protocol: JSON request/response encoding for the
//! de-facto `/v1/chat/completions` interface. Encoding is canonical
//! (compact, fixed field order) so golden fixtures can be compared
//! byte-for-byte.

use serde::{Deserialize, Serialize};

use super::{BackendError, GenerationRequest, Message, Usage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatChoice {
    pub index: u32,
    pub message: Message,
    pub finish_reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub id: String,
    pub object: String,
    pub model: String,
    pub choices: Vec<ChatChoice>,
    pub usage: Usage,
}

/// Encode a generation request as the canonical JSON request body.
pub fn encode_request(req: &GenerationRequest, model: &str) -> ChatRequest {
    ChatRequest {
        model: model.to_string(),
        messages: req.messages.clone(),
        temperature: req.temperature,
        top_p: req.top_p,
        max_tokens: req.max_tokens,
    }
}

pub fn request_to_json(req: &ChatRequest) -> String {
    serde_json::to_string(req).expect("chat request serializes")
}

/// Decode a response body, returning the completion text of the first
/// choice plus token usage.
pub fn decode_response(body: &str) -> Result<(String, Usage), BackendError> {
    let resp: ChatResponse = serde_json::from_str(body)
        .map_err(|e| BackendError::Protocol(format!("malformed response body: {e}")))?;
    let choice = resp
        .choices
        .first()
        .ok_or_else(|| BackendError::Protocol("response has no choices".into()))?;
    Ok((choice.message.content.clone(), resp.usage))
}

pub fn response_to_json(resp: &ChatResponse) -> String {
    serde_json::to_string(resp).expect("chat response serializes")
}
