//! Uniform chat-completion backend contract: an HTTP client for
//! OpenAI-compatible endpoints, a scripted deterministic mock, the prompt
//! template registry, and lenient structured-output extraction.

mod extract;
mod http;
mod mock;
mod prompts;

pub use extract::extract_json;
pub use http::{HttpBackend, HttpBackendConfig, RetryPolicy};
pub use mock::{ScriptEntry, ScriptedBackend};
pub use prompts::{render_prompt, template_body, template_checksum, PromptId, ALL_PROMPTS};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// Errors raised by backends and prompt rendering.
#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    /// Network-level failure; retryable.
    #[error("transport error: {0}")]
    Transport(String),
    /// Non-retryable HTTP failure.
    #[error("http error: status {status}: {body}")]
    Http { status: u16, body: String },
    /// The scripted mock ran out of matching entries.
    #[error("mock script exhausted for {context}")]
    ScriptExhausted { context: String },
    /// The conversation exceeds the backend's context budget.
    #[error("context budget exceeded: {chars} chars > {budget}")]
    BudgetExceeded { chars: usize, budget: usize },
    /// A template placeholder was left unbound.
    #[error("missing binding: {0}")]
    MissingBinding(String),
    /// No JSON object could be located in a judge response.
    #[error("no JSON object found in response")]
    NoJsonFound,
    #[error("malformed response body: {0}")]
    MalformedResponse(String),
}

/// Message roles in a conversation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// One chat message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

/// An ordered message list plus the template it was rendered from, if any.
///
/// The tag travels with the conversation so scripted backends can match
/// responses per template.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub messages: Vec<Message>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tag: Option<PromptId>,
}

impl Conversation {
    pub fn new(first_role: Role, content: impl Into<String>) -> Conversation {
        debug_assert!(first_role != Role::Assistant);
        Conversation {
            messages: vec![Message {
                role: first_role,
                content: content.into(),
            }],
            tag: None,
        }
    }

    pub fn with_tag(mut self, tag: PromptId) -> Conversation {
        self.tag = Some(tag);
        self
    }

    pub fn push_user(&mut self, content: impl Into<String>) {
        self.messages.push(Message {
            role: Role::User,
            content: content.into(),
        });
    }

    pub fn push_assistant(&mut self, content: impl Into<String>) {
        self.messages.push(Message {
            role: Role::Assistant,
            content: content.into(),
        });
    }

    /// Content of the last user message, used for script pattern matching.
    pub fn last_user_content(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }

    pub fn total_chars(&self) -> usize {
        self.messages.iter().map(|m| m.content.len()).sum()
    }
}

/// Generation parameters for one completion call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
}

impl GenParams {
    /// Judge-role parameters: temperature pinned to zero.
    pub fn judge() -> GenParams {
        GenParams {
            temperature: 0.0,
            max_tokens: 1024,
            seed: None,
        }
    }

    /// Agent-role parameters at a chosen sampling temperature.
    pub fn agent(temperature: f64) -> GenParams {
        GenParams {
            temperature,
            max_tokens: 2048,
            seed: None,
        }
    }
}

/// A chat-completion backend. Shareable across concurrent pipeline tasks;
/// every `complete` call is independent.
pub trait ChatBackend: Send + Sync {
    /// Produce one assistant message for the conversation.
    fn complete(&self, conv: &Conversation, params: &GenParams) -> Result<String, GatewayError>;

    /// Stable identifier recorded in stage manifests.
    fn id(&self) -> String;
}

/// Shared handle to a backend.
pub type BackendHandle = Arc<dyn ChatBackend>;

impl<T: ChatBackend + ?Sized> ChatBackend for Arc<T> {
    fn complete(&self, conv: &Conversation, params: &GenParams) -> Result<String, GatewayError> {
        (**self).complete(conv, params)
    }

    fn id(&self) -> String {
        (**self).id()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn last_user_content_finds_most_recent() {
        let mut conv = Conversation::new(Role::System, "sys");
        conv.push_user("first");
        conv.push_assistant("mid");
        conv.push_user("second");
        assert_eq!(conv.last_user_content(), Some("second"));
    }

    #[test]
    fn judge_params_use_zero_temperature() {
        assert_eq!(GenParams::judge().temperature, 0.0);
    }
}
