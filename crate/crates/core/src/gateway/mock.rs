//! Scripted deterministic backend for offline runs.
//!
//! A script is an ordered list of entries. Each `complete` call consumes the
//! first unconsumed entry whose template filter matches the conversation tag
//! and whose pattern matches the last user message. Identical scripts driven
//! by identical call sequences produce identical outputs. Exhaustion fails
//! loudly; `sticky` entries are never consumed and so never exhaust.

use std::sync::Mutex;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{ChatBackend, Conversation, GatewayError, GenParams, PromptId};

/// One scripted response with optional matching filters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptEntry {
    /// Match only conversations rendered from this template; `None` matches any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<PromptId>,
    /// Regex over the last user message; `None` matches any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    /// The assistant text to return.
    pub response: String,
    /// Sticky entries are matched repeatedly and never consumed.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub sticky: bool,
}

impl ScriptEntry {
    pub fn new(response: impl Into<String>) -> ScriptEntry {
        ScriptEntry {
            template: None,
            pattern: None,
            response: response.into(),
            sticky: false,
        }
    }

    pub fn for_template(template: PromptId, response: impl Into<String>) -> ScriptEntry {
        ScriptEntry {
            template: Some(template),
            pattern: None,
            response: response.into(),
            sticky: false,
        }
    }

    pub fn with_pattern(mut self, pattern: impl Into<String>) -> ScriptEntry {
        self.pattern = Some(pattern.into());
        self
    }

    pub fn sticky(mut self) -> ScriptEntry {
        self.sticky = true;
        self
    }
}

struct Slot {
    entry: ScriptEntry,
    regex: Option<Regex>,
    consumed: bool,
}

/// Deterministic backend that replays a script.
pub struct ScriptedBackend {
    name: String,
    slots: Mutex<Vec<Slot>>,
}

impl ScriptedBackend {
    pub fn new(name: impl Into<String>, entries: Vec<ScriptEntry>) -> ScriptedBackend {
        let slots = entries
            .into_iter()
            .map(|entry| {
                let regex = entry
                    .pattern
                    .as_deref()
                    .map(|p| Regex::new(p).expect("script pattern must be a valid regex"));
                Slot {
                    entry,
                    regex,
                    consumed: false,
                }
            })
            .collect();
        ScriptedBackend {
            name: name.into(),
            slots: Mutex::new(slots),
        }
    }

    /// A backend that answers every call with the same text.
    pub fn always(name: impl Into<String>, response: impl Into<String>) -> ScriptedBackend {
        ScriptedBackend::new(name, vec![ScriptEntry::new(response).sticky()])
    }

    /// Number of unconsumed, non-sticky entries left.
    pub fn remaining(&self) -> usize {
        self.slots
            .lock()
            .expect("script lock")
            .iter()
            .filter(|s| !s.consumed && !s.entry.sticky)
            .count()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, conv: &Conversation, _params: &GenParams) -> Result<String, GatewayError> {
        let mut slots = self.slots.lock().expect("script lock");
        let last_user = conv.last_user_content().unwrap_or_default();
        for slot in slots.iter_mut() {
            if slot.consumed {
                continue;
            }
            if let Some(want) = slot.entry.template {
                if conv.tag != Some(want) {
                    continue;
                }
            }
            if let Some(re) = &slot.regex {
                if !re.is_match(last_user) {
                    continue;
                }
            }
            if !slot.entry.sticky {
                slot.consumed = true;
            }
            return Ok(slot.entry.response.clone());
        }
        Err(GatewayError::ScriptExhausted {
            context: format!(
                "backend `{}`, tag {:?}, last user message {:?}",
                self.name,
                conv.tag,
                truncate(last_user, 120)
            ),
        })
    }

    fn id(&self) -> String {
        format!("mock:{}", self.name)
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((idx, _)) => &s[..idx],
        None => s,
    }
}
