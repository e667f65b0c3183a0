//! OpenAI-compatible chat-completions transport.
//!
//! Frames travel as base64 `data:` URIs, one `image_url` part each, followed by
//! the prompt as the final `text` part of a single user message.

use std::time::{Duration, Instant};

use base64::Engine;
use serde_json::{json, Value};

use super::{BackendFailure, BackendRequest, Completion, VlmBackend};

#[derive(Debug, Clone, PartialEq)]
pub struct HttpConfig {
    /// Full chat-completions endpoint, e.g. `http://host:8000/v1/chat/completions`.
    pub url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

pub struct HttpBackend {
    cfg: HttpConfig,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(cfg: HttpConfig) -> Result<Self, BackendFailure> {
        let client = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| BackendFailure::Fatal { status: None, message: format!("http client: {e}") })?;
        Ok(Self { cfg, client })
    }
}

/// Request body for one query.
pub fn chat_request_body(model: &str, req: &BackendRequest) -> Value {
    let engine = base64::engine::general_purpose::STANDARD;
    let mut content: Vec<Value> = req
        .frames
        .iter()
        .map(|f| {
            json!({
                "type": "image_url",
                "image_url": { "url": format!("data:{};base64,{}", f.mime, engine.encode(&f.bytes)) }
            })
        })
        .collect();
    content.push(json!({ "type": "text", "text": req.prompt }));
    json!({
        "model": model,
        "messages": [{ "role": "user", "content": content }],
        "temperature": req.decoding.temperature(),
        "top_p": 1.0,
        "n": req.decoding.beams(),
        "max_tokens": req.decoding.max_output_tokens(),
        "stream": false
    })
}

/// Extracts the assistant text from a chat-completions response body.
pub fn parse_chat_response(body: &str) -> Result<String, BackendFailure> {
    let v: Value =
        serde_json::from_str(body).map_err(|e| BackendFailure::Protocol(format!("response is not JSON: {e}")))?;
    let content = v
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .and_then(|m| m.get("content"))
        .ok_or_else(|| BackendFailure::Protocol("response has no choices[0].message.content".into()))?;
    match content {
        Value::String(s) => Ok(s.clone()),
        // Some servers return content as a list of typed parts.
        Value::Array(parts) => {
            let text: Vec<&str> = parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect();
            if text.is_empty() {
                Err(BackendFailure::Protocol("response content has no text parts".into()))
            } else {
                Ok(text.concat())
            }
        }
        other => Err(BackendFailure::Protocol(format!("unexpected content type: {other}"))),
    }
}

fn classify_status(status: u16, body: &str) -> BackendFailure {
    let message = body.chars().take(200).collect::<String>();
    if status == 408 || status == 429 || (500..600).contains(&status) {
        BackendFailure::Transient { status: Some(status), message }
    } else {
        BackendFailure::Fatal { status: Some(status), message }
    }
}

impl VlmBackend for HttpBackend {
    fn identity(&self) -> String {
        format!("openai-chat:{}@{}", self.cfg.model, self.cfg.url)
    }

    fn complete(&self, req: &BackendRequest) -> Result<Completion, BackendFailure> {
        let started = Instant::now();
        let mut builder = self.client.post(&self.cfg.url).json(&chat_request_body(&self.cfg.model, req));
        if let Some(key) = &self.cfg.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder
            .send()
            .map_err(|e| BackendFailure::Transient { status: None, message: e.to_string() })?;
        let status = resp.status().as_u16();
        let body = resp
            .text()
            .map_err(|e| BackendFailure::Transient { status: Some(status), message: e.to_string() })?;
        if !(200..300).contains(&status) {
            return Err(classify_status(status, &body));
        }
        let text = parse_chat_response(&body)?;
        Ok(Completion { text, latency_ms: started.elapsed().as_millis() as u64 })
    }
}
