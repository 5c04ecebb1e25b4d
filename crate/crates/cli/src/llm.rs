//! Hosted completion backend.
//!
//! Sends `{"model", "prompt", "temperature"}` as JSON to the configured
//! endpoint with a bearer key and reads the completion text from `text`,
//! `choices[0].text` or `choices[0].message.content`.

use std::time::Duration;

use serde_json::{json, Value};
use sonoswarm_core::nl_parse::{BackendError, ParserBackend};

pub const ENDPOINT_VAR: &str = "SONOSWARM_LLM_ENDPOINT";
pub const API_KEY_VAR: &str = "SONOSWARM_LLM_API_KEY";
pub const MODEL_VAR: &str = "SONOSWARM_LLM_MODEL";

pub struct HttpBackend {
    endpoint: String,
    api_key: Option<String>,
    model: String,
    client: reqwest::blocking::Client,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        // the key stays out of logs
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .finish_non_exhaustive()
    }
}

impl HttpBackend {
    pub fn new(endpoint: &str, api_key: Option<String>, model: &str) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.to_string(),
            api_key,
            model: model.to_string(),
            client,
        })
    }

    /// Reads the endpoint, key and model from the environment. `None` when no
    /// endpoint is configured.
    pub fn from_env() -> Option<Result<Self, BackendError>> {
        let endpoint = std::env::var(ENDPOINT_VAR).ok().filter(|s| !s.is_empty())?;
        let key = std::env::var(API_KEY_VAR).ok().filter(|s| !s.is_empty());
        let model = std::env::var(MODEL_VAR).unwrap_or_else(|_| "default".into());
        Some(Self::new(&endpoint, key, &model))
    }
}

fn completion_text(body: &Value) -> Option<&str> {
    body.get("text")
        .and_then(Value::as_str)
        .or_else(|| body.pointer("/choices/0/text").and_then(Value::as_str))
        .or_else(|| body.pointer("/choices/0/message/content").and_then(Value::as_str))
}

impl ParserBackend for HttpBackend {
    fn name(&self) -> &str {
        "http"
    }

    fn complete(&self, prompt: &str, temperature: f64) -> Result<String, BackendError> {
        let mut req = self.client.post(&self.endpoint).json(&json!({
            "model": self.model,
            "prompt": prompt,
            "temperature": temperature,
        }));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(BackendError::Transport(format!("endpoint answered {status}")));
        }
        let body: Value = resp.json().map_err(|e| BackendError::Protocol(e.to_string()))?;
        completion_text(&body)
            .map(str::to_string)
            .ok_or_else(|| BackendError::Protocol("response carries no completion text".into()))
    }
}
