//! HTTP service exposing a registry as a virtual API server.
//!
//! Endpoints: `POST /api/{name}` with a JSON kwargs body returns an
//! observation envelope; `GET /health` and `GET /specs` report liveness and
//! the registry contents. Upstream failures surface as envelope errors, never
//! as 5xx.

use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Json};
use axum::routing::{get, post};
use axum::Router;
use serde_json::json;

use super::{simulate_call, unknown_api_envelope, ApiRegistry, HubError, SimMode};
use crate::model::{ApiCall, Literal, Observation, Origin};

/// How the service answers calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServiceMode {
    /// Dispatch every call to the live upstream.
    Live,
    /// Simulate every call.
    Sim,
    /// Live-origin tools go upstream, simulated-origin tools are simulated.
    Auto,
}

impl ServiceMode {
    pub fn parse(s: &str) -> Option<ServiceMode> {
        Some(match s {
            "live" => ServiceMode::Live,
            "sim" => ServiceMode::Sim,
            "auto" => ServiceMode::Auto,
            _ => return None,
        })
    }
}

/// Service configuration.
#[derive(Clone)]
pub struct ServiceConfig {
    pub mode: ServiceMode,
    pub sim: SimMode,
    /// Base URL of the live upstream, when one exists.
    pub live_base: Option<String>,
    pub upstream_timeout: Duration,
}

impl ServiceConfig {
    pub fn deterministic(seed: u64) -> ServiceConfig {
        ServiceConfig {
            mode: ServiceMode::Sim,
            sim: SimMode::Deterministic(seed),
            live_base: None,
            upstream_timeout: Duration::from_secs(10),
        }
    }
}

struct ServiceState {
    registry: Arc<ApiRegistry>,
    config: ServiceConfig,
}

/// Handle to a running registry service. Dropping it shuts the server down.
pub struct RegistryService {
    addr: std::net::SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl RegistryService {
    pub fn addr(&self) -> std::net::SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(handle) = self.thread.take() {
            let _ = handle.join();
        }
    }
}

impl Drop for RegistryService {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Start the registry service on `bind` (e.g. `127.0.0.1:0`).
pub fn serve_registry(
    registry: Arc<ApiRegistry>,
    config: ServiceConfig,
    bind: &str,
) -> Result<RegistryService, HubError> {
    let state = Arc::new(ServiceState { registry, config });
    let listener = std::net::TcpListener::bind(bind).map_err(|e| HubError::BindError {
        addr: bind.to_string(),
        reason: e.to_string(),
    })?;
    listener.set_nonblocking(true).map_err(|e| HubError::BindError {
        addr: bind.to_string(),
        reason: e.to_string(),
    })?;
    let addr = listener.local_addr().map_err(|e| HubError::BindError {
        addr: bind.to_string(),
        reason: e.to_string(),
    })?;

    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        let runtime = tokio::runtime::Builder::new_current_thread()
            .enable_all()
            .build()
            .expect("tokio runtime");
        runtime.block_on(async move {
            let app = Router::new()
                .route("/health", get(health))
                .route("/specs", get(specs))
                .route("/api/{name}", post(call_api))
                .with_state(state);
            let listener =
                tokio::net::TcpListener::from_std(listener).expect("listener handoff");
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
                .expect("serve");
        });
    });

    Ok(RegistryService {
        addr,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({"status": "ok"}))
}

async fn specs(State(state): State<Arc<ServiceState>>) -> Json<serde_json::Value> {
    let list: Vec<&crate::model::ToolSpec> = state.registry.iter().collect();
    Json(serde_json::to_value(list).expect("specs serialize"))
}

async fn call_api(
    State(state): State<Arc<ServiceState>>,
    Path(name): Path<String>,
    body: String,
) -> impl IntoResponse {
    let Some(spec) = state.registry.get(&name).cloned() else {
        return (StatusCode::NOT_FOUND, Json(envelope_json(&unknown_api_envelope())));
    };

    let kwargs = match parse_kwargs(&body) {
        Ok(k) => k,
        Err(reason) => {
            return (
                StatusCode::BAD_REQUEST,
                Json(envelope_json(&Observation::failure(format!(
                    "Invalid request body: {reason}"
                )))),
            )
        }
    };
    let call = match ApiCall::new(name.clone(), kwargs) {
        Ok(c) => c,
        Err(e) => {
            return (
                StatusCode::BAD_REQUEST,
                Json(envelope_json(&Observation::failure(format!(
                    "Invalid request body: {e}"
                )))),
            )
        }
    };

    let use_live = match state.config.mode {
        ServiceMode::Live => true,
        ServiceMode::Sim => false,
        ServiceMode::Auto => spec.origin() == Origin::Live,
    };

    let state_for_block = state.clone();
    let observation = tokio::task::spawn_blocking(move || {
        if use_live {
            dispatch_live(&state_for_block, &call)
        } else {
            match simulate_call(&spec, &call, &state_for_block.config.sim) {
                Ok(obs) => obs,
                Err(e) => Observation::failure(format!("simulation failed: {e}")),
            }
        }
    })
    .await
    .unwrap_or_else(|e| Observation::failure(format!("internal dispatch failure: {e}")));

    (StatusCode::OK, Json(envelope_json(&observation)))
}

fn dispatch_live(state: &ServiceState, call: &ApiCall) -> Observation {
    let Some(base) = &state.config.live_base else {
        return Observation::failure("live upstream not configured");
    };
    let url = format!("{}/api/{}", base.trim_end_matches('/'), call.tool_name);
    let kwargs_json: serde_json::Map<String, serde_json::Value> = call
        .kwargs
        .iter()
        .map(|(k, v)| (k.clone(), v.to_json()))
        .collect();
    let client = match reqwest::blocking::Client::builder()
        .timeout(state.config.upstream_timeout)
        .build()
    {
        Ok(c) => c,
        Err(e) => return Observation::failure(format!("upstream client error: {e}")),
    };
    let result = client
        .post(url)
        .json(&serde_json::Value::Object(kwargs_json))
        .send()
        .and_then(|r| r.text());
    match result {
        Ok(text) => match serde_json::from_str::<Observation>(&text) {
            Ok(obs) => obs,
            Err(_) => Observation::failure(format!("upstream returned a non-envelope body: {text}")),
        },
        Err(e) => Observation::failure(format!("upstream error: {e}")),
    }
}

fn parse_kwargs(
    body: &str,
) -> Result<std::collections::BTreeMap<String, Literal>, String> {
    let trimmed = body.trim();
    if trimmed.is_empty() {
        return Ok(Default::default());
    }
    let value: serde_json::Value =
        serde_json::from_str(trimmed).map_err(|e| format!("not JSON: {e}"))?;
    let obj = value.as_object().ok_or("body must be a JSON object")?;
    let mut kwargs = std::collections::BTreeMap::new();
    for (k, v) in obj {
        let lit = Literal::from_json(v).map_err(|e| format!("kwarg `{k}`: {e}"))?;
        kwargs.insert(k.clone(), lit);
    }
    Ok(kwargs)
}

fn envelope_json(obs: &Observation) -> serde_json::Value {
    serde_json::to_value(obs).expect("envelope serializes")
}

/// Executor that dispatches calls to a running registry service over HTTP.
pub struct HttpExecutor {
    base_url: String,
    client: reqwest::blocking::Client,
}

impl HttpExecutor {
    pub fn new(base_url: impl Into<String>) -> HttpExecutor {
        HttpExecutor {
            base_url: base_url.into(),
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(30))
                .build()
                .expect("client"),
        }
    }
}

impl super::CallExecutor for HttpExecutor {
    fn execute(&self, call: &ApiCall) -> Result<Observation, super::TransportError> {
        let url = format!("{}/api/{}", self.base_url.trim_end_matches('/'), call.tool_name);
        let kwargs: serde_json::Map<String, serde_json::Value> = call
            .kwargs
            .iter()
            .map(|(k, v)| (k.clone(), v.to_json()))
            .collect();
        let response = self
            .client
            .post(url)
            .json(&serde_json::Value::Object(kwargs))
            .send()
            .map_err(|e| super::TransportError(e.to_string()))?;
        let text = response
            .text()
            .map_err(|e| super::TransportError(e.to_string()))?;
        serde_json::from_str::<Observation>(&text)
            .map_err(|e| super::TransportError(format!("non-envelope body: {e}: {text}")))
    }
}
