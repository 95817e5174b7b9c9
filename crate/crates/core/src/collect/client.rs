use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Clone, thiserror::Error)]
pub enum TransportError {
    #[error("authentication rejected (HTTP {status}): {message}")]
    Auth { status: u16, message: String },
    #[error("HTTP {status}: {message}")]
    Http { status: u16, message: String },
    #[error("network error: {0}")]
    Network(String),
    #[error("could not decode response: {0}")]
    Decode(String),
}

impl TransportError {
    /// Rate limits, server errors and connection problems are worth another try.
    pub fn is_retryable(&self) -> bool {
        match self {
            Self::Http { status, .. } => *status == 408 || *status == 429 || *status >= 500,
            Self::Network(_) => true,
            Self::Auth { .. } | Self::Decode(_) => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: "system".into(), content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: "user".into(), content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

impl ChatRequest {
    pub fn to_json(&self) -> Value {
        json!({ "model": self.model, "messages": self.messages, "temperature": self.temperature })
    }
}

#[derive(Debug, Clone)]
pub struct ChatResponse {
    pub text: String,
    pub raw: Value,
}

/// Anything that can answer a chat request. Implemented over HTTP by
/// [`HttpChatClient`]; tests plug in scripted clients.
pub trait ChatClient: Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, TransportError>;
}

/// OpenAI-compatible chat-completion endpoint.
pub struct HttpChatClient {
    http: reqwest::blocking::Client,
    url: String,
    api_key: Option<String>,
}

impl HttpChatClient {
    pub fn new(base_url: &str, path: &str, api_key: Option<String>, timeout: Duration) -> Result<Self, TransportError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        let url = format!("{}/{}", base_url.trim_end_matches('/'), path.trim_start_matches('/'));
        Ok(Self { http, url, api_key })
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, TransportError> {
        let mut req = self.http.post(&self.url).json(&request.to_json());
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| TransportError::Network(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| TransportError::Network(e.to_string()))?;
        if status == 401 || status == 403 {
            return Err(TransportError::Auth { status, message: snippet(&body) });
        }
        if !(200..300).contains(&status) {
            return Err(TransportError::Http { status, message: snippet(&body) });
        }
        let raw: Value = serde_json::from_str(&body).map_err(|e| TransportError::Decode(e.to_string()))?;
        let text = raw
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| TransportError::Decode("missing choices[0].message.content".into()))?
            .to_string();
        Ok(ChatResponse { text, raw })
    }
}

fn snippet(body: &str) -> String {
    let s: String = body.chars().take(300).collect();
    s.trim().to_string()
}
