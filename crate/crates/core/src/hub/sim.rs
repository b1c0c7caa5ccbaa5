//! Doc-grounded call simulation.
//!
//! `Deterministic` mode synthesizes a schema-shaped envelope from the spec
//! and a hash of (name, canonical kwargs, seed): same inputs, identical
//! bytes, no state. `LlmBacked` mode asks a backend to play the API server
//! and extracts its envelope.

use std::collections::BTreeMap;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use super::HubError;
use crate::gateway::{extract_json, render_prompt, ChatBackend, GenParams, PromptId};
use crate::model::{canonical_json, ApiCall, Observation, ParamType, ToolSpec};

/// Simulation strategy.
#[derive(Clone)]
pub enum SimMode {
    LlmBacked(Arc<dyn ChatBackend>),
    Deterministic(u64),
}

impl std::fmt::Debug for SimMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SimMode::LlmBacked(b) => write!(f, "LlmBacked({})", b.id()),
            SimMode::Deterministic(seed) => write!(f, "Deterministic({seed})"),
        }
    }
}

/// Simulate one call against a spec.
pub fn simulate_call(
    spec: &ToolSpec,
    call: &ApiCall,
    mode: &SimMode,
) -> Result<Observation, HubError> {
    if call.tool_name != spec.name() {
        return Err(HubError::NameMismatch {
            call: call.tool_name.clone(),
            spec: spec.name().to_string(),
        });
    }
    match mode {
        SimMode::Deterministic(seed) => Ok(simulate_deterministic(spec, call, *seed)),
        SimMode::LlmBacked(backend) => simulate_llm(spec, call, backend.as_ref()),
    }
}

/// Pure, seedable simulation: a total function of (spec, canonical call, seed).
pub fn simulate_deterministic(spec: &ToolSpec, call: &ApiCall, seed: u64) -> Observation {
    // Undeclared kwargs are rejected before the missing-required check, so a
    // misnamed parameter reads as a parameter rejection rather than an
    // absence.
    for (name, value) in &call.kwargs {
        match spec.parameters().get(name) {
            None => {
                return Observation::failure(format!(
                    "Invalid parameter: `{name}` is not accepted by {}",
                    spec.name()
                ))
            }
            Some(p) => {
                if !p.ty.accepts(value) {
                    return Observation::failure(format!(
                        "Type mismatch for parameter `{name}`: expected {}",
                        p.ty.name()
                    ));
                }
            }
        }
    }
    // Missing required parameters are named in sorted order.
    for name in spec.required() {
        if !call.kwargs.contains_key(name) {
            return Observation::failure(format!("Missing required parameter: {name}"));
        }
    }

    let base = call_digest(spec, call, seed);
    let mut response = serde_json::Map::new();
    for (pname, pspec) in spec.parameters() {
        match call.kwargs.get(pname) {
            Some(value) => {
                response.insert(pname.clone(), value.to_json());
            }
            None => {
                response.insert(pname.clone(), fabricate(pspec.ty, &base, pname));
            }
        }
    }
    response.insert(
        "result".to_string(),
        serde_json::Value::String(format!("{}_{:08x}", spec.name(), derive_u64(&base, "result") as u32)),
    );
    Observation::success(serde_json::Value::Object(response))
}

fn call_digest(spec: &ToolSpec, call: &ApiCall, seed: u64) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(spec.name().as_bytes());
    hasher.update([0x1f]);
    hasher.update(canonical_json(&call.kwargs).as_bytes());
    hasher.update([0x1f]);
    hasher.update(seed.to_le_bytes());
    hasher.finalize().into()
}

fn derive_u64(base: &[u8; 32], label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base);
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Fabricate a response field by declared parameter type.
fn fabricate(ty: ParamType, base: &[u8; 32], pname: &str) -> serde_json::Value {
    let v = derive_u64(base, pname);
    match ty {
        ParamType::String => serde_json::Value::String(format!("{pname}_{:08x}", v as u32)),
        ParamType::Integer => serde_json::Value::Number(((v % 1000) as i64).into()),
        ParamType::Number => {
            let cents = (v % 100_000) as f64 / 100.0;
            serde_json::Number::from_f64(cents)
                .map(serde_json::Value::Number)
                .unwrap_or(serde_json::Value::Null)
        }
        ParamType::Boolean => serde_json::Value::Bool(v.is_multiple_of(2)),
        ParamType::Array => serde_json::Value::Array(vec![serde_json::Value::String(format!(
            "{pname}_{:08x}",
            v as u32
        ))]),
        ParamType::Object => {
            let mut m = serde_json::Map::new();
            m.insert(
                "value".to_string(),
                serde_json::Value::String(format!("{pname}_{:08x}", v as u32)),
            );
            serde_json::Value::Object(m)
        }
    }
}

fn simulate_llm(
    spec: &ToolSpec,
    call: &ApiCall,
    backend: &dyn ChatBackend,
) -> Result<Observation, HubError> {
    let input: BTreeMap<&String, serde_json::Value> = call
        .kwargs
        .iter()
        .map(|(k, v)| (k, v.to_json()))
        .collect();
    let bindings = BTreeMap::from([
        ("api_doc".to_string(), spec.doc_text()),
        (
            "api_input".to_string(),
            serde_json::to_string(&input).expect("kwargs serialize"),
        ),
    ]);
    let mut conv = render_prompt(PromptId::Simulate, &bindings)?;
    let params = GenParams::agent(0.0);

    for attempt in 0..2 {
        let text = backend.complete(&conv, &params)?;
        if let Ok(value) = extract_json(&text) {
            if let Ok(obs) = serde_json::from_value::<Observation>(value) {
                return Ok(obs);
            }
        }
        if attempt == 0 {
            conv.push_assistant(text);
            conv.push_user(
                "The response must be a JSON object with exactly the keys `error` and `response`.",
            );
        } else {
            return Err(HubError::EnvelopeError(format!(
                "backend output for {} lacked the error/response keys",
                spec.name()
            )));
        }
    }
    unreachable!("loop returns on both attempts")
}
