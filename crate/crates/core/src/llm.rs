//! Minimal blocking client for a text-completion endpoint.
//!
//! Requests are `POST {model, system, user}` as JSON. The reply body may be any
//! JSON shape that carries the completion text; [`extract_text`] knows the
//! common ones (plain `text`/`content`, OpenAI `choices`, Anthropic `content`
//! blocks). The API key only ever comes from [`API_KEY_ENV`].

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const API_KEY_ENV: &str = "RISKGRAPH_LLM_API_KEY";

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("no completion text in reply: {0}")]
    Malformed(String),
}

/// One request/response exchange, kept for trace files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub purpose: String,
    pub system: String,
    pub user: String,
    pub response: Option<String>,
}

impl Transcript {
    pub fn redact(&mut self, secret: &str) {
        if secret.is_empty() {
            return;
        }
        for s in [&mut self.system, &mut self.user] {
            *s = s.replace(secret, "[REDACTED]");
        }
        if let Some(r) = &mut self.response {
            *r = r.replace(secret, "[REDACTED]");
        }
    }
}

pub trait LlmClient: Send + Sync {
    fn id(&self) -> String;
    fn complete(&self, system: &str, user: &str) -> Result<String, LlmError>;
    /// Secret to scrub from transcripts, if any.
    fn secret(&self) -> Option<&str> {
        None
    }
}

#[derive(Debug, Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    system: &'a str,
    user: &'a str,
}

pub struct HttpLlmClient {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpLlmClient {
    pub fn new(endpoint: &str, model: &str, api_key: Option<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpLlmClient {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            api_key,
            agent,
        }
    }

    /// Reads the key from the environment; fails when it is absent.
    pub fn from_env(endpoint: &str, model: &str) -> Result<Self, LlmError> {
        let key = std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| LlmError::Unavailable(format!("{API_KEY_ENV} is not set")))?;
        Ok(Self::new(endpoint, model, Some(key), DEFAULT_TIMEOUT))
    }
}

impl LlmClient for HttpLlmClient {
    fn id(&self) -> String {
        format!("http:{}", self.model)
    }

    fn secret(&self) -> Option<&str> {
        self.api_key.as_deref()
    }

    fn complete(&self, system: &str, user: &str) -> Result<String, LlmError> {
        let body = CompletionRequest {
            model: &self.model,
            system,
            user,
        };
        let mut req = self
            .agent
            .post(&self.endpoint)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let payload = serde_json::to_vec(&body).expect("request serializes");
        let mut resp = req
            .send(&payload[..])
            .map_err(|e| LlmError::Unavailable(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| LlmError::Unavailable(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(LlmError::Status { status, body: text });
        }
        let value: Value = serde_json::from_str(&text).map_err(|_| LlmError::Malformed(text.clone()))?;
        extract_text(&value).ok_or(LlmError::Malformed(text))
    }
}

/// Pulls the completion text out of the usual reply shapes.
pub fn extract_text(body: &Value) -> Option<String> {
    if let Some(s) = body.as_str() {
        return Some(s.to_string());
    }
    for key in ["text", "output", "completion", "response"] {
        if let Some(s) = body.get(key).and_then(Value::as_str) {
            return Some(s.to_string());
        }
    }
    if let Some(s) = body.pointer("/choices/0/message/content").and_then(Value::as_str) {
        return Some(s.to_string());
    }
    if let Some(s) = body.pointer("/choices/0/text").and_then(Value::as_str) {
        return Some(s.to_string());
    }
    match body.get("content") {
        Some(Value::String(s)) => Some(s.clone()),
        Some(Value::Array(blocks)) => {
            let parts: Vec<&str> = blocks
                .iter()
                .filter_map(|b| b.get("text").and_then(Value::as_str))
                .collect();
            (!parts.is_empty()).then(|| parts.concat())
        }
        _ => None,
    }
}

/// The outermost `{...}` span of `text`, tolerating code fences and prose.
pub fn extract_json_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    (end > start).then(|| &text[start..=end])
}
