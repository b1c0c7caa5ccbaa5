//! API registry, probing, documentation refinement, and the simulator —
//! including the HTTP service that fronts the registry.

mod sim;
pub mod service;

pub use service::{serve_registry, RegistryService, ServiceConfig, ServiceMode};
pub use sim::{simulate_call, simulate_deterministic, SimMode};

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dsl::{parse_call_expr_with_limit, DslError};
use crate::gateway::{
    extract_json, render_prompt, ChatBackend, GatewayError, GenParams, PromptId,
};
use crate::model::{validate_tool_spec, ApiCall, ModelError, Observation, Origin, ToolSpec};

/// Errors raised by registry operations.
#[derive(Debug, thiserror::Error)]
pub enum HubError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Dsl(#[from] DslError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("probe produced no parseable sample calls: {0}")]
    NoSamples(String),
    #[error("simulator output lacked the error/response envelope: {0}")]
    EnvelopeError(String),
    #[error("call targets `{call}` but the spec is `{spec}`")]
    NameMismatch { call: String, spec: String },
    #[error("failed to bind {addr}: {reason}")]
    BindError { addr: String, reason: String },
}

/// Transport-level execution failure, distinct from an API error envelope.
#[derive(Debug, Clone, thiserror::Error)]
#[error("transport failure: {0}")]
pub struct TransportError(pub String);

/// Anything that can execute a call and produce an observation envelope.
///
/// `Err` means the carrier failed (timeout, connection loss); API-level
/// failures come back as `Ok` envelopes with a nonempty `error`.
pub trait CallExecutor: Send + Sync {
    fn execute(&self, call: &ApiCall) -> Result<Observation, TransportError>;
}

impl<T: CallExecutor + ?Sized> CallExecutor for Arc<T> {
    fn execute(&self, call: &ApiCall) -> Result<Observation, TransportError> {
        (**self).execute(call)
    }
}

/// Envelope returned when a tool name is not in the registry.
pub fn unknown_api_envelope() -> Observation {
    Observation::failure("API doesn't exist")
}

/// The set of validated tool specs, keyed by name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ApiRegistry {
    specs: BTreeMap<String, ToolSpec>,
}

impl ApiRegistry {
    pub fn new() -> ApiRegistry {
        ApiRegistry::default()
    }

    pub fn from_specs(specs: impl IntoIterator<Item = ToolSpec>) -> ApiRegistry {
        let mut registry = ApiRegistry::new();
        for spec in specs {
            registry.insert(spec);
        }
        registry
    }

    pub fn insert(&mut self, spec: ToolSpec) {
        self.specs.insert(spec.name().to_string(), spec);
    }

    pub fn get(&self, name: &str) -> Option<&ToolSpec> {
        self.specs.get(name)
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ToolSpec> {
        self.specs.values()
    }

    /// Resolve a list of tool names, erroring on the first unknown one.
    pub fn resolve(&self, names: &[String]) -> Result<Vec<ToolSpec>, HubError> {
        names
            .iter()
            .map(|n| {
                self.get(n).cloned().ok_or_else(|| {
                    HubError::Model(ModelError::schema("tools", format!("unknown tool `{n}`")))
                })
            })
            .collect()
    }
}

/// Executor that simulates every call against a registry.
pub struct SimExecutor {
    registry: Arc<ApiRegistry>,
    mode: SimMode,
}

impl SimExecutor {
    pub fn new(registry: Arc<ApiRegistry>, mode: SimMode) -> SimExecutor {
        SimExecutor { registry, mode }
    }
}

impl CallExecutor for SimExecutor {
    fn execute(&self, call: &ApiCall) -> Result<Observation, TransportError> {
        match self.registry.get(&call.tool_name) {
            None => Ok(unknown_api_envelope()),
            Some(spec) => simulate_call(spec, call, &self.mode)
                .map_err(|e| TransportError(e.to_string())),
        }
    }
}

// ---------------------------------------------------------------------------
// Probing
// ---------------------------------------------------------------------------

/// Validity classification of a probed API.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "reason", rename_all = "snake_case")]
pub enum ProbeClassification {
    Valid,
    Invalid(String),
    Flaky,
}

/// Result of probing one API with generated sample calls.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeReport {
    pub tool: ToolSpec,
    pub samples: Vec<(ApiCall, Observation)>,
    pub classification: ProbeClassification,
}

/// Maximum sample calls generated per probe.
pub const MAX_PROBE_SAMPLES: usize = 3;

/// Ask the agent backend for sample calls, execute them, and classify the API.
pub fn probe_api(
    spec: &ToolSpec,
    agent: &dyn ChatBackend,
    executor: &dyn CallExecutor,
) -> Result<ProbeReport, HubError> {
    let bindings = BTreeMap::from([
        ("api_name".to_string(), spec.name().to_string()),
        ("api_doc".to_string(), spec.doc_text()),
    ]);
    let mut conv = render_prompt(PromptId::ExampleGen, &bindings)?;
    let params = GenParams::agent(0.0);

    let mut calls = Vec::new();
    for attempt in 0..2 {
        let text = agent.complete(&conv, &params)?;
        match parse_sample_calls(&text) {
            Ok(parsed) if !parsed.is_empty() => {
                calls = parsed;
                break;
            }
            Ok(_) | Err(_) if attempt == 0 => {
                let reason = match parse_sample_calls(&text) {
                    Ok(_) => "no calls found".to_string(),
                    Err(e) => e.to_string(),
                };
                conv.push_assistant(text);
                conv.push_user(format!(
                    "Your examples could not be parsed ({reason}). Reply with up to {MAX_PROBE_SAMPLES} print(...) keyword-argument calls and nothing else."
                ));
            }
            Ok(_) => return Err(HubError::NoSamples("backend produced no calls".into())),
            Err(e) => return Err(HubError::NoSamples(e.to_string())),
        }
    }
    calls.truncate(MAX_PROBE_SAMPLES);

    let mut samples = Vec::new();
    let mut successes = 0usize;
    let mut transport_failures = 0usize;
    let mut first_hard_error: Option<String> = None;
    for call in calls {
        match executor.execute(&call) {
            Ok(obs) => {
                if obs.is_success() {
                    successes += 1;
                } else if first_hard_error.is_none() {
                    first_hard_error = Some(obs.error.clone());
                }
                samples.push((call, obs));
            }
            Err(TransportError(reason)) => {
                transport_failures += 1;
                samples.push((call, Observation::failure(format!("transport failure: {reason}"))));
            }
        }
    }

    let classification = if transport_failures > 0 {
        // Unstable carrier: route to simulation whether or not anything
        // succeeded.
        ProbeClassification::Flaky
    } else if successes > 0 {
        ProbeClassification::Valid
    } else {
        ProbeClassification::Invalid(
            first_hard_error.unwrap_or_else(|| "all samples failed".into()),
        )
    };

    Ok(ProbeReport {
        tool: spec.clone(),
        samples,
        classification,
    })
}

/// Parse backend-generated example output into calls, tolerating fences and
/// `print("...")` markers.
fn parse_sample_calls(text: &str) -> Result<Vec<ApiCall>, DslError> {
    let code = strip_fences(text);
    parse_call_expr_with_limit(&code, usize::MAX)
}

fn strip_fences(text: &str) -> String {
    if !text.contains("```") {
        return text.to_string();
    }
    let mut code = String::new();
    let mut in_fence = false;
    for line in text.lines() {
        if line.trim_start().starts_with("```") {
            in_fence = !in_fence;
            continue;
        }
        if in_fence {
            code.push_str(line);
            code.push('\n');
        }
    }
    code
}

// ---------------------------------------------------------------------------
// Documentation refinement
// ---------------------------------------------------------------------------

/// Outcome of a documentation-refinement pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineOutcome {
    pub is_api_valid: bool,
    pub refined: Option<ToolSpec>,
}

/// Why a refined document was rejected.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RefineRejection {
    #[error("refined document is not parseable: {0}")]
    Unparseable(String),
    #[error("API name changed from `{original}` to `{refined}`")]
    NameChanged { original: String, refined: String },
    #[error("parameter name set changed")]
    ParametersChanged,
    #[error("required set changed")]
    RequiredChanged,
}

/// Validate a candidate refined document against the immutability rules:
/// name, parameter-name set, and required set must be unchanged. Only the
/// free-text descriptions may differ.
pub fn apply_refinement(
    original: &ToolSpec,
    candidate: &serde_json::Value,
) -> Result<ToolSpec, RefineRejection> {
    let refined =
        validate_tool_spec(candidate).map_err(|e| RefineRejection::Unparseable(e.to_string()))?;
    if refined.name() != original.name() {
        return Err(RefineRejection::NameChanged {
            original: original.name().to_string(),
            refined: refined.name().to_string(),
        });
    }
    let original_params: Vec<&String> = original.parameters().keys().collect();
    let refined_params: Vec<&String> = refined.parameters().keys().collect();
    if original_params != refined_params {
        return Err(RefineRejection::ParametersChanged);
    }
    if original.required() != refined.required() {
        return Err(RefineRejection::RequiredChanged);
    }
    let param_descriptions: BTreeMap<String, String> = refined
        .parameters()
        .iter()
        .map(|(k, v)| (k.clone(), v.description.clone()))
        .collect();
    Ok(original
        .clone()
        .with_descriptions(refined.description().to_string(), &param_descriptions))
}

/// Run the documentation refiner over a probe report.
///
/// Rejected refinements are surfaced as warnings and the original document is
/// kept with validity taken from the probe classification.
pub fn refine_doc(
    spec: &ToolSpec,
    report: &ProbeReport,
    backend: &dyn ChatBackend,
) -> Result<RefineOutcome, HubError> {
    let mut samples_text = String::new();
    for (call, obs) in &report.samples {
        samples_text.push_str(&format!(
            "Call: {call}\nObservation: {}\n",
            crate::model::canonical_json(obs)
        ));
    }
    let bindings = BTreeMap::from([
        ("api_name".to_string(), spec.name().to_string()),
        ("api_doc".to_string(), spec.doc_text()),
        ("samples".to_string(), samples_text),
    ]);
    let mut conv = render_prompt(PromptId::RefineDoc, &bindings)?;
    let params = GenParams::agent(0.0);

    let probe_valid = matches!(report.classification, ProbeClassification::Valid);
    let fallback = RefineOutcome {
        is_api_valid: probe_valid,
        refined: None,
    };

    for attempt in 0..2 {
        let text = backend.complete(&conv, &params)?;
        match extract_json(&text) {
            Ok(value) => {
                let Some(is_valid) = value.get("is_api_valid").and_then(|v| v.as_bool()) else {
                    if attempt == 0 {
                        conv.push_assistant(text);
                        conv.push_user(
                            "The response must be a JSON object with an `is_api_valid` boolean.",
                        );
                        continue;
                    }
                    tracing::warn!(api = spec.name(), "refine output missing is_api_valid; keeping original");
                    return Ok(fallback);
                };
                if !is_valid {
                    return Ok(RefineOutcome {
                        is_api_valid: false,
                        refined: None,
                    });
                }
                match value.get("refine_api") {
                    None => {
                        return Ok(RefineOutcome {
                            is_api_valid: true,
                            refined: None,
                        })
                    }
                    Some(candidate) => match apply_refinement(spec, candidate) {
                        Ok(refined) => {
                            return Ok(RefineOutcome {
                                is_api_valid: true,
                                refined: Some(refined),
                            })
                        }
                        Err(rejection) => {
                            tracing::warn!(
                                api = spec.name(),
                                %rejection,
                                "refinement rejected; keeping original document"
                            );
                            return Ok(RefineOutcome {
                                is_api_valid: probe_valid,
                                refined: None,
                            });
                        }
                    },
                }
            }
            Err(_) if attempt == 0 => {
                conv.push_assistant(text);
                conv.push_user("The response must be one of the documented JSON shapes.");
            }
            Err(_) => {
                tracing::warn!(api = spec.name(), "refine output unparseable; keeping original");
                return Ok(fallback);
            }
        }
    }
    Ok(fallback)
}

/// Post-probe origin: invalid or flaky APIs are served by the simulator.
pub fn origin_after_probe(original: Origin, classification: &ProbeClassification) -> Origin {
    match classification {
        ProbeClassification::Valid => original,
        ProbeClassification::Invalid(_) | ProbeClassification::Flaky => Origin::Simulated,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ScriptEntry, ScriptedBackend};
    use crate::model::ParamType;
    use serde_json::json;

    fn weather_spec() -> ToolSpec {
        validate_tool_spec(&json!({
            "name": "get_weather_forecast",
            "description": "Weather forecast for a city and date.",
            "parameters": {
                "city": {"type": "string", "description": "City name."},
                "date": {"type": "string", "description": "Date in YYYY-MM-DD."}
            },
            "required": ["city", "date"],
            "origin": "simulated"
        }))
        .unwrap()
    }

    struct FailingExecutor;
    impl CallExecutor for FailingExecutor {
        fn execute(&self, _call: &ApiCall) -> Result<Observation, TransportError> {
            Err(TransportError("connection reset".into()))
        }
    }

    struct FixedExecutor(Observation);
    impl CallExecutor for FixedExecutor {
        fn execute(&self, _call: &ApiCall) -> Result<Observation, TransportError> {
            Ok(self.0.clone())
        }
    }

    fn example_script(code: &str) -> ScriptedBackend {
        ScriptedBackend::new("agent", vec![ScriptEntry::new(code.to_string())])
    }

    #[test]
    fn probe_classifies_valid_api() {
        let spec = weather_spec();
        let backend = example_script(
            "print(get_weather_forecast(city=\"London\", date=\"2024-12-25\"))",
        );
        let registry = Arc::new(ApiRegistry::from_specs([spec.clone()]));
        let executor = SimExecutor::new(registry, SimMode::Deterministic(7));
        let report = probe_api(&spec, &backend, &executor).unwrap();
        assert_eq!(report.classification, ProbeClassification::Valid);
        assert_eq!(report.samples.len(), 1);
    }

    #[test]
    fn probe_classifies_hard_errors_as_invalid() {
        let spec = weather_spec();
        let backend = example_script("print(get_weather_forecast(city=\"London\", date=\"x\"))");
        let executor = FixedExecutor(Observation::failure("API doesn't exist"));
        let report = probe_api(&spec, &backend, &executor).unwrap();
        assert_eq!(
            report.classification,
            ProbeClassification::Invalid("API doesn't exist".into())
        );

        let backend = example_script("print(get_weather_forecast(city=\"a\", date=\"b\"))");
        let executor = FixedExecutor(Observation::failure("ACCESS_DENIED"));
        let report = probe_api(&spec, &backend, &executor).unwrap();
        assert_eq!(
            report.classification,
            ProbeClassification::Invalid("ACCESS_DENIED".into())
        );
    }

    #[test]
    fn probe_transport_failures_are_flaky() {
        let spec = weather_spec();
        let backend = example_script("print(get_weather_forecast(city=\"a\", date=\"b\"))");
        let report = probe_api(&spec, &backend, &FailingExecutor).unwrap();
        assert_eq!(report.classification, ProbeClassification::Flaky);
        assert_eq!(
            origin_after_probe(Origin::Live, &report.classification),
            Origin::Simulated
        );
    }

    #[test]
    fn probe_truncates_to_three_samples() {
        let spec = weather_spec();
        let code = (1..=4)
            .map(|i| format!("print(get_weather_forecast(city=\"c{i}\", date=\"d\"))"))
            .collect::<Vec<_>>()
            .join("\n");
        let backend = example_script(&code);
        let registry = Arc::new(ApiRegistry::from_specs([spec.clone()]));
        let executor = SimExecutor::new(registry, SimMode::Deterministic(1));
        let report = probe_api(&spec, &backend, &executor).unwrap();
        assert_eq!(report.samples.len(), MAX_PROBE_SAMPLES);
    }

    #[test]
    fn probe_reasks_once_on_parse_failure() {
        let spec = weather_spec();
        let backend = ScriptedBackend::new(
            "agent",
            vec![
                ScriptEntry::new("here are examples: get_weather_forecast(London)"),
                ScriptEntry::new("print(get_weather_forecast(city=\"L\", date=\"D\"))"),
            ],
        );
        let registry = Arc::new(ApiRegistry::from_specs([spec.clone()]));
        let executor = SimExecutor::new(registry, SimMode::Deterministic(7));
        let report = probe_api(&spec, &backend, &executor).unwrap();
        assert_eq!(report.samples.len(), 1);
        assert_eq!(backend.remaining(), 0);
    }

    #[test]
    fn refine_parses_the_three_response_shapes() {
        let spec = weather_spec();
        let report = ProbeReport {
            tool: spec.clone(),
            samples: vec![],
            classification: ProbeClassification::Valid,
        };

        let backend = ScriptedBackend::new("j", vec![ScriptEntry::new(r#"{"is_api_valid": false}"#)]);
        let outcome = refine_doc(&spec, &report, &backend).unwrap();
        assert!(!outcome.is_api_valid);
        assert!(outcome.refined.is_none());

        let backend = ScriptedBackend::new("j", vec![ScriptEntry::new(r#"{"is_api_valid": true}"#)]);
        let outcome = refine_doc(&spec, &report, &backend).unwrap();
        assert!(outcome.is_api_valid);
        assert!(outcome.refined.is_none());

        let refined_doc = json!({
            "is_api_valid": true,
            "refine_api": {
                "type": "function",
                "function": {
                    "name": "get_weather_forecast",
                    "description": "Retrieve the forecast for a specific city and date.",
                    "parameters": {
                        "properties": {
                            "city": {"type": "string", "description": "Target city, e.g. London."},
                            "date": {"type": "string", "description": "Date in YYYY-MM-DD form."}
                        },
                        "required": ["city", "date"]
                    }
                }
            }
        });
        let backend =
            ScriptedBackend::new("j", vec![ScriptEntry::new(refined_doc.to_string())]);
        let outcome = refine_doc(&spec, &report, &backend).unwrap();
        assert!(outcome.is_api_valid);
        let refined = outcome.refined.unwrap();
        assert_eq!(refined.name(), spec.name());
        assert_eq!(
            refined.parameters().get("city").unwrap().description,
            "Target city, e.g. London."
        );
        assert_eq!(refined.origin(), spec.origin());
        assert_eq!(refined.parameters().get("city").unwrap().ty, ParamType::String);
    }

    #[test]
    fn refine_rejects_renamed_parameter() {
        let spec = weather_spec();
        let report = ProbeReport {
            tool: spec.clone(),
            samples: vec![],
            classification: ProbeClassification::Valid,
        };
        let mutated = json!({
            "is_api_valid": true,
            "refine_api": {
                "name": "get_weather_forecast",
                "description": "x",
                "parameters": {
                    "town": {"type": "string", "description": ""},
                    "date": {"type": "string", "description": ""}
                },
                "required": ["town", "date"]
            }
        });
        let backend = ScriptedBackend::new("j", vec![ScriptEntry::new(mutated.to_string())]);
        let outcome = refine_doc(&spec, &report, &backend).unwrap();
        assert!(outcome.refined.is_none());
        assert!(outcome.is_api_valid);
    }

    #[test]
    fn apply_refinement_guards_every_immutable_field() {
        let spec = weather_spec();
        let renamed = json!({"name": "other", "description": "", "parameters": {
            "city": {"type": "string", "description": ""},
            "date": {"type": "string", "description": ""}
        }, "required": ["city", "date"]});
        assert!(matches!(
            apply_refinement(&spec, &renamed),
            Err(RefineRejection::NameChanged { .. })
        ));

        let dropped_required = json!({"name": "get_weather_forecast", "description": "", "parameters": {
            "city": {"type": "string", "description": ""},
            "date": {"type": "string", "description": ""}
        }, "required": ["city"]});
        assert!(matches!(
            apply_refinement(&spec, &dropped_required),
            Err(RefineRejection::RequiredChanged)
        ));

        let extra_param = json!({"name": "get_weather_forecast", "description": "", "parameters": {
            "city": {"type": "string", "description": ""},
            "date": {"type": "string", "description": ""},
            "units": {"type": "string", "description": ""}
        }, "required": ["city", "date"]});
        assert!(matches!(
            apply_refinement(&spec, &extra_param),
            Err(RefineRejection::ParametersChanged)
        ));
    }
}
