//! Blocking client for OpenAI-compatible chat-completion endpoints with
//! bounded retry on transport failures, 429, and 5xx.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{ChatBackend, Conversation, GatewayError, GenParams};

/// Retry behavior: at most `max_retries` retries with exponential backoff
/// starting at `base_delay`.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

/// Configuration for an OpenAI-compatible endpoint.
#[derive(Debug, Clone)]
pub struct HttpBackendConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub retry: RetryPolicy,
    pub timeout: Duration,
    pub max_context_chars: usize,
}

impl HttpBackendConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> HttpBackendConfig {
        HttpBackendConfig {
            base_url: base_url.into(),
            api_key: None,
            model: model.into(),
            retry: RetryPolicy::default(),
            timeout: Duration::from_secs(60),
            max_context_chars: 400_000,
        }
    }

    /// Fill endpoint, key, and model from `TOOLFORGE_API_BASE`,
    /// `TOOLFORGE_API_KEY`, and `TOOLFORGE_MODEL` when set.
    pub fn apply_env(mut self) -> HttpBackendConfig {
        if let Ok(base) = std::env::var("TOOLFORGE_API_BASE") {
            self.base_url = base;
        }
        if let Ok(key) = std::env::var("TOOLFORGE_API_KEY") {
            self.api_key = Some(key);
        }
        if let Ok(model) = std::env::var("TOOLFORGE_MODEL") {
            self.model = model;
        }
        self
    }
}

/// Chat-completion client for any endpoint speaking the de-facto protocol.
pub struct HttpBackend {
    config: HttpBackendConfig,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: String,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<HttpBackend, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        Ok(HttpBackend { config, client })
    }

    fn endpoint(&self) -> String {
        let base = self.config.base_url.trim_end_matches('/');
        let base = base.strip_suffix("/v1").unwrap_or(base);
        format!("{base}/v1/chat/completions")
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<String, (bool, GatewayError)> {
        let mut request = self
            .client
            .post(self.endpoint())
            .header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            request = request.header("Authorization", format!("Bearer {key}"));
        }
        let response = request
            .json(body)
            .send()
            .map_err(|e| (true, GatewayError::Transport(e.to_string())))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| (true, GatewayError::Transport(e.to_string())))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err((
                true,
                GatewayError::Http {
                    status: status.as_u16(),
                    body: text,
                },
            ));
        }
        if !status.is_success() {
            return Err((
                false,
                GatewayError::Http {
                    status: status.as_u16(),
                    body: text,
                },
            ));
        }
        let parsed: CompletionResponse = serde_json::from_str(&text)
            .map_err(|e| (false, GatewayError::MalformedResponse(e.to_string())))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or((
                false,
                GatewayError::MalformedResponse("no choices in response".into()),
            ))
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, conv: &Conversation, params: &GenParams) -> Result<String, GatewayError> {
        let chars = conv.total_chars();
        if chars > self.config.max_context_chars {
            return Err(GatewayError::BudgetExceeded {
                chars,
                budget: self.config.max_context_chars,
            });
        }
        let mut body = json!({
            "model": self.config.model,
            "messages": conv.messages,
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        });
        if let Some(seed) = params.seed {
            body["seed"] = json!(seed);
        }

        let mut delay = self.config.retry.base_delay;
        let mut last_err = None;
        for attempt in 0..=self.config.retry.max_retries {
            if attempt > 0 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            match self.attempt(&body) {
                Ok(content) => return Ok(content),
                Err((retryable, err)) => {
                    if !retryable {
                        return Err(err);
                    }
                    last_err = Some(err);
                }
            }
        }
        Err(last_err.unwrap_or_else(|| GatewayError::Transport("retries exhausted".into())))
    }

    fn id(&self) -> String {
        format!("http:{}:{}", self.config.base_url, self.config.model)
    }
}
