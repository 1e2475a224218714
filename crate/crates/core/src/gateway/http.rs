//! HTTP adapter for OpenAI-style chat-completion endpoints.
//!
//! Configuration: base URL, model id (in `DecodingParams`), and an API key
//! read from a configurable environment variable. Retries and caching live
//! in the gateway, not here.

use serde::{Deserialize, Serialize};
use std::time::Duration;

use super::{ChatBackend, DecodingParams, GatewayError};
use crate::prompting::RenderedPrompt;

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: Option<String>,
}

pub struct HttpChatBackend {
    id: String,
    endpoint: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    timeout_ms: u64,
}

impl HttpChatBackend {
    /// `base_url` is the API root (e.g. `https://api.example.com/v1`); the
    /// adapter posts to `{base_url}/chat/completions`. The key is read from
    /// `api_key_env` at construction; absence means unauthenticated requests.
    pub fn new(base_url: &str, api_key_env: &str, timeout_ms: u64) -> Result<HttpChatBackend, GatewayError> {
        let api_key = std::env::var(api_key_env).ok();
        if api_key.is_none() {
            log::warn!("environment variable {api_key_env} not set; sending unauthenticated requests");
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(timeout_ms))
            .build()
            .map_err(|e| GatewayError::Backend(format!("http client: {e}")))?;
        Ok(HttpChatBackend {
            id: format!("http:{}", base_url.trim_end_matches('/')),
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key,
            client,
            timeout_ms,
        })
    }
}

impl ChatBackend for HttpChatBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn send(&self, prompt: &RenderedPrompt, params: &DecodingParams) -> Result<String, GatewayError> {
        let body = ChatRequest {
            model: &params.model_id,
            messages: vec![ChatMessage {
                role: "user",
                content: &prompt.text,
            }],
            temperature: params.temperature,
            max_tokens: params.max_tokens,
        };
        let mut request = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|err| {
            if err.is_timeout() {
                GatewayError::Timeout(self.timeout_ms)
            } else {
                GatewayError::BackendUnavailable {
                    backend: self.id.clone(),
                    attempts: 1,
                    last_error: err.to_string(),
                }
            }
        })?;

        let status = response.status();
        if status.as_u16() == 429 {
            let retry_after_ms = response
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<u64>().ok())
                .map(|secs| secs * 1000);
            return Err(GatewayError::RateLimited { retry_after_ms });
        }
        if status.is_server_error() {
            return Err(GatewayError::BackendUnavailable {
                backend: self.id.clone(),
                attempts: 1,
                last_error: format!("server returned {status}"),
            });
        }
        if !status.is_success() {
            let body = response.text().unwrap_or_default();
            let snippet: String = body.chars().take(200).collect();
            return Err(GatewayError::Backend(format!("{status}: {snippet}")));
        }

        let parsed: ChatResponse = response
            .json()
            .map_err(|e| GatewayError::Backend(format!("malformed response body: {e}")))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| GatewayError::Backend("response carried no message content".to_string()))?;
        Ok(content)
    }
}
