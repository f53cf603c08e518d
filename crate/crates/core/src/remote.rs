//! Blocking HTTP clients for the chat-completion and embedding endpoints.
//!
//! Request construction and response parsing are plain functions so they
//! can be tested without a network; the client itself only glues them to
//! reqwest. The bearer token always comes from the environment, never from
//! config files.

use std::time::Duration;

use serde_json::{json, Value};

use crate::atomize::CompletionBackend;
use crate::embed::EmbeddingBackend;
use crate::error::{Error, Result};
use crate::judge::ChatBackend;

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "AUDITOR_API_KEY";

pub const DEFAULT_TIMEOUT_SECS: u64 = 30;

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    /// Base URL, e.g. `https://api.example.com/v1`.
    pub endpoint: String,
    pub model: String,
    pub api_key: String,
    pub timeout_secs: u64,
}

impl RemoteConfig {
    pub fn from_env(endpoint: &str, model: &str) -> Result<Self> {
        let api_key = std::env::var(API_KEY_ENV).map_err(|_| Error::Config {
            key: API_KEY_ENV.to_string(),
            reason: "environment variable not set".to_string(),
        })?;
        Ok(RemoteConfig {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key,
            timeout_secs: DEFAULT_TIMEOUT_SECS,
        })
    }
}

pub fn build_chat_body(model: &str, system: &str, user: &str, temperature: f64) -> Value {
    json!({
        "model": model,
        "messages": [
            { "role": "system", "content": system },
            { "role": "user", "content": user },
        ],
        "temperature": temperature,
    })
}

pub fn parse_chat_response(body: &str) -> Result<String> {
    let v: Value = serde_json::from_str(body)
        .map_err(|e| Error::Backend(format!("malformed chat response: {e}")))?;
    v["choices"][0]["message"]["content"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| Error::Backend("chat response missing choices[0].message.content".into()))
}

pub fn build_embedding_body(model: &str, input: &str) -> Value {
    json!({ "model": model, "input": [input] })
}

pub fn parse_embedding_response(body: &str) -> Result<Vec<f64>> {
    let v: Value = serde_json::from_str(body)
        .map_err(|e| Error::Backend(format!("malformed embedding response: {e}")))?;
    let arr = v["data"][0]["embedding"]
        .as_array()
        .ok_or_else(|| Error::Backend("embedding response missing data[0].embedding".into()))?;
    arr.iter()
        .map(|x| {
            x.as_f64()
                .ok_or_else(|| Error::Backend("non-numeric embedding component".into()))
        })
        .collect()
}

pub struct HttpClient {
    cfg: RemoteConfig,
    client: reqwest::blocking::Client,
}

impl HttpClient {
    pub fn new(cfg: RemoteConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| Error::Backend(format!("client construction failed: {e}")))?;
        Ok(HttpClient { cfg, client })
    }

    fn post(&self, path: &str, body: &Value) -> Result<String> {
        let url = format!("{}{path}", self.cfg.endpoint);
        let resp = self
            .client
            .post(&url)
            .bearer_auth(&self.cfg.api_key)
            .json(body)
            .send()
            .map_err(|e| Error::Backend(format!("request to {url} failed: {e}")))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| Error::Backend(format!("reading response body failed: {e}")))?;
        if !status.is_success() {
            return Err(Error::Backend(format!("{url} returned {status}: {text}")));
        }
        Ok(text)
    }
}

impl ChatBackend for HttpClient {
    fn chat(&self, system: &str, user: &str, temperature: f64) -> Result<String> {
        let body = build_chat_body(&self.cfg.model, system, user, temperature);
        parse_chat_response(&self.post("/chat/completions", &body)?)
    }
}

impl CompletionBackend for HttpClient {
    fn complete(&self, system: &str, user: &str) -> Result<String> {
        self.chat(system, user, 0.0)
    }
}

impl EmbeddingBackend for HttpClient {
    fn embed_raw(&self, text: &str) -> Result<Vec<f64>> {
        let body = build_embedding_body(&self.cfg.model, text);
        parse_embedding_response(&self.post("/embeddings", &body)?)
    }
}
