//! Immutable domain types shared by every pipeline stage, plus structural
//! validation of tool documents.
//!
//! Everything here is a value object: cheap to clone, safe to share across
//! threads, and serialized with a stable key order so dataset files diff and
//! hash deterministically.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Errors raised while constructing or validating domain values.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    /// A tool document violates the schema at `path`.
    #[error("schema error at {path}: {reason}")]
    Schema { path: String, reason: String },
    /// A parameter declares a type outside the allowed set.
    #[error("unknown parameter type at {path}: {ty:?}")]
    UnknownType { path: String, ty: String },
    /// A literal value exceeds the flat nesting budget or mixes element kinds.
    #[error("invalid literal: {0}")]
    InvalidLiteral(String),
    /// A step or trace violates a structural invariant.
    #[error("invalid structure: {0}")]
    InvalidStructure(String),
}

impl ModelError {
    pub fn schema(path: impl Into<String>, reason: impl Into<String>) -> Self {
        ModelError::Schema {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

/// Serialize any value to its canonical JSON form.
///
/// Struct fields keep declaration order and all map-like fields in this
/// module are backed by sorted containers, so equal values always produce
/// identical bytes.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("domain types serialize infallibly")
}

/// Hex-encoded SHA-256 of a byte string; used for dataset checksums.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// True for `[A-Za-z_][A-Za-z0-9_]*`.
pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

// ---------------------------------------------------------------------------
// Literals
// ---------------------------------------------------------------------------

/// The restricted value grammar allowed in call keyword arguments.
///
/// Scalars, one level of homogeneous list, or one level of flat string-keyed
/// map. Anything deeper is rejected at construction and at parse time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Literal {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    List(Vec<Literal>),
    Map(BTreeMap<String, Literal>),
}

impl Literal {
    pub fn is_scalar(&self) -> bool {
        !matches!(self, Literal::List(_) | Literal::Map(_))
    }

    fn kind_name(&self) -> &'static str {
        match self {
            Literal::Null => "null",
            Literal::Bool(_) => "boolean",
            Literal::Int(_) => "integer",
            Literal::Float(_) => "number",
            Literal::Str(_) => "string",
            Literal::List(_) => "list",
            Literal::Map(_) => "map",
        }
    }

    /// Enforce depth <= 2 and list homogeneity.
    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            Literal::List(items) => {
                let mut kind: Option<&'static str> = None;
                for item in items {
                    if !item.is_scalar() {
                        return Err(ModelError::InvalidLiteral(
                            "list elements must be scalar".into(),
                        ));
                    }
                    match kind {
                        None => kind = Some(item.kind_name()),
                        Some(k) if k == item.kind_name() => {}
                        Some(k) => {
                            return Err(ModelError::InvalidLiteral(format!(
                                "heterogeneous list: {} vs {}",
                                k,
                                item.kind_name()
                            )))
                        }
                    }
                }
                Ok(())
            }
            Literal::Map(entries) => {
                for v in entries.values() {
                    if !v.is_scalar() {
                        return Err(ModelError::InvalidLiteral(
                            "map values must be scalar".into(),
                        ));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("literals serialize infallibly")
    }

    /// Convert a JSON value into a literal, rejecting over-deep nesting.
    pub fn from_json(value: &serde_json::Value) -> Result<Literal, ModelError> {
        let lit = Self::from_json_inner(value, 0)?;
        lit.validate()?;
        Ok(lit)
    }

    fn from_json_inner(value: &serde_json::Value, depth: usize) -> Result<Literal, ModelError> {
        if depth > 1 && (value.is_array() || value.is_object()) {
            return Err(ModelError::InvalidLiteral(
                "nesting deeper than one container level".into(),
            ));
        }
        Ok(match value {
            serde_json::Value::Null => Literal::Null,
            serde_json::Value::Bool(b) => Literal::Bool(*b),
            serde_json::Value::Number(n) => {
                if let Some(i) = n.as_i64() {
                    Literal::Int(i)
                } else {
                    Literal::Float(n.as_f64().unwrap_or(0.0))
                }
            }
            serde_json::Value::String(s) => Literal::Str(s.clone()),
            serde_json::Value::Array(items) => Literal::List(
                items
                    .iter()
                    .map(|v| Self::from_json_inner(v, depth + 1))
                    .collect::<Result<_, _>>()?,
            ),
            serde_json::Value::Object(entries) => Literal::Map(
                entries
                    .iter()
                    .map(|(k, v)| Ok((k.clone(), Self::from_json_inner(v, depth + 1)?)))
                    .collect::<Result<_, ModelError>>()?,
            ),
        })
    }
}

// ---------------------------------------------------------------------------
// Tool documents
// ---------------------------------------------------------------------------

/// Allowed parameter types in tool documents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamType {
    String,
    Integer,
    Number,
    Boolean,
    Array,
    Object,
}

impl ParamType {
    pub fn parse(s: &str) -> Option<ParamType> {
        Some(match s {
            "string" => ParamType::String,
            "integer" => ParamType::Integer,
            "number" => ParamType::Number,
            "boolean" => ParamType::Boolean,
            "array" => ParamType::Array,
            "object" => ParamType::Object,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ParamType::String => "string",
            ParamType::Integer => "integer",
            ParamType::Number => "number",
            ParamType::Boolean => "boolean",
            ParamType::Array => "array",
            ParamType::Object => "object",
        }
    }

    /// Whether a literal value conforms to this declared type.
    pub fn accepts(&self, value: &Literal) -> bool {
        match self {
            ParamType::String => matches!(value, Literal::Str(_)),
            ParamType::Integer => matches!(value, Literal::Int(_)),
            ParamType::Number => matches!(value, Literal::Int(_) | Literal::Float(_)),
            ParamType::Boolean => matches!(value, Literal::Bool(_)),
            ParamType::Array => matches!(value, Literal::List(_)),
            ParamType::Object => matches!(value, Literal::Map(_)),
        }
    }
}

/// One declared parameter of a tool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    #[serde(rename = "type")]
    pub ty: ParamType,
    pub description: String,
}

/// Where responses for a tool come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    #[default]
    Live,
    Simulated,
}

/// One API in function-calling document form.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToolSpec {
    name: String,
    description: String,
    parameters: BTreeMap<String, ParamSpec>,
    required: BTreeSet<String>,
    origin: Origin,
}

impl ToolSpec {
    pub fn new(
        name: impl Into<String>,
        description: impl Into<String>,
        parameters: BTreeMap<String, ParamSpec>,
        required: BTreeSet<String>,
        origin: Origin,
    ) -> Result<ToolSpec, ModelError> {
        let spec = ToolSpec {
            name: name.into(),
            description: description.into(),
            parameters,
            required,
            origin,
        };
        spec.check()?;
        Ok(spec)
    }

    fn check(&self) -> Result<(), ModelError> {
        if !is_identifier(&self.name) {
            return Err(ModelError::schema("name", "not a nonempty identifier"));
        }
        for pname in self.parameters.keys() {
            if !is_identifier(pname) {
                return Err(ModelError::schema(
                    format!("parameters.{pname}"),
                    "parameter name is not an identifier",
                ));
            }
        }
        for r in &self.required {
            if !self.parameters.contains_key(r) {
                return Err(ModelError::schema("required", "not a declared parameter"));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn parameters(&self) -> &BTreeMap<String, ParamSpec> {
        &self.parameters
    }

    pub fn required(&self) -> &BTreeSet<String> {
        &self.required
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }

    pub fn with_origin(mut self, origin: Origin) -> ToolSpec {
        self.origin = origin;
        self
    }

    /// Replace the free-text fields, keeping name, parameter names, and the
    /// required set fixed. Used by documentation refinement.
    pub fn with_descriptions(
        mut self,
        description: String,
        param_descriptions: &BTreeMap<String, String>,
    ) -> ToolSpec {
        self.description = description;
        for (pname, pdesc) in param_descriptions {
            if let Some(p) = self.parameters.get_mut(pname) {
                p.description = pdesc.clone();
            }
        }
        self
    }

    /// Render the document as the plain-text block inserted into prompts.
    pub fn doc_text(&self) -> String {
        let mut out = format!("{}: {}\n", self.name, self.description);
        if self.parameters.is_empty() {
            out.push_str("Parameters: none\n");
        } else {
            out.push_str("Parameters:\n");
            for (pname, p) in &self.parameters {
                let req = if self.required.contains(pname) {
                    "required"
                } else {
                    "optional"
                };
                out.push_str(&format!(
                    "- {pname} ({}, {req}): {}\n",
                    p.ty.name(),
                    p.description
                ));
            }
        }
        out
    }
}

impl<'de> Deserialize<'de> for ToolSpec {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        let value = serde_json::Value::deserialize(deserializer)?;
        validate_tool_spec(&value).map_err(serde::de::Error::custom)
    }
}

/// Validate a raw JSON tool document and canonicalize it into a [`ToolSpec`].
///
/// Accepts the flat record form (`name`/`description`/`parameters`/`required`)
/// and the function-calling wrapper form
/// (`{"type": "function", "function": {..., "parameters": {"properties": ...,
/// "required": [...]}}}`).
pub fn validate_tool_spec(doc: &serde_json::Value) -> Result<ToolSpec, ModelError> {
    let obj = doc
        .as_object()
        .ok_or_else(|| ModelError::schema("", "document is not a JSON object"))?;

    // Unwrap the function-calling envelope when present.
    if let Some(function) = obj.get("function") {
        return validate_function_form(function);
    }

    let name = required_str(obj, "name")?;
    let description = optional_str(obj, "description").unwrap_or_default();
    let origin = match obj.get("origin") {
        None => Origin::Live,
        Some(v) => serde_json::from_value(v.clone())
            .map_err(|_| ModelError::schema("origin", "expected \"live\" or \"simulated\""))?,
    };

    let (parameters, required) = match obj.get("parameters") {
        None => (BTreeMap::new(), collect_required(obj.get("required"))?),
        Some(serde_json::Value::Object(params)) => {
            if params.contains_key("properties") {
                // JSON-Schema style: required nested alongside properties.
                let props = params
                    .get("properties")
                    .and_then(|p| p.as_object())
                    .ok_or_else(|| {
                        ModelError::schema("parameters.properties", "expected an object")
                    })?;
                let required = collect_required(params.get("required"))?;
                (parse_param_map(props)?, required)
            } else {
                (parse_param_map(params)?, collect_required(obj.get("required"))?)
            }
        }
        Some(_) => return Err(ModelError::schema("parameters", "expected an object")),
    };

    ToolSpec::new(name, description, parameters, required, origin)
}

fn validate_function_form(function: &serde_json::Value) -> Result<ToolSpec, ModelError> {
    let obj = function
        .as_object()
        .ok_or_else(|| ModelError::schema("function", "expected an object"))?;
    let name = required_str(obj, "name")?;
    let description = optional_str(obj, "description").unwrap_or_default();
    let (parameters, required) = match obj.get("parameters") {
        None => (BTreeMap::new(), BTreeSet::new()),
        Some(serde_json::Value::Object(params)) => {
            let props = match params.get("properties") {
                Some(p) => p.as_object().ok_or_else(|| {
                    ModelError::schema("function.parameters.properties", "expected an object")
                })?,
                None => params,
            };
            (parse_param_map(props)?, collect_required(params.get("required"))?)
        }
        Some(_) => {
            return Err(ModelError::schema("function.parameters", "expected an object"))
        }
    };
    ToolSpec::new(name, description, parameters, required, Origin::Live)
}

fn parse_param_map(
    props: &serde_json::Map<String, serde_json::Value>,
) -> Result<BTreeMap<String, ParamSpec>, ModelError> {
    let mut out = BTreeMap::new();
    for (pname, pval) in props {
        let pobj = pval.as_object().ok_or_else(|| {
            ModelError::schema(format!("parameters.{pname}"), "expected an object")
        })?;
        let ty_raw = pobj
            .get("type")
            .and_then(|t| t.as_str())
            .ok_or_else(|| ModelError::schema(format!("parameters.{pname}.type"), "missing"))?;
        let ty = ParamType::parse(ty_raw).ok_or_else(|| ModelError::UnknownType {
            path: format!("parameters.{pname}.type"),
            ty: ty_raw.to_string(),
        })?;
        let description = pobj
            .get("description")
            .and_then(|d| d.as_str())
            .unwrap_or_default()
            .to_string();
        out.insert(pname.clone(), ParamSpec { ty, description });
    }
    Ok(out)
}

fn collect_required(value: Option<&serde_json::Value>) -> Result<BTreeSet<String>, ModelError> {
    match value {
        None => Ok(BTreeSet::new()),
        Some(serde_json::Value::Array(items)) => {
            let mut out = BTreeSet::new();
            for item in items {
                let s = item
                    .as_str()
                    .ok_or_else(|| ModelError::schema("required", "expected strings"))?;
                out.insert(s.to_string());
            }
            Ok(out)
        }
        Some(_) => Err(ModelError::schema("required", "expected an array")),
    }
}

fn required_str(
    obj: &serde_json::Map<String, serde_json::Value>,
    key: &str,
) -> Result<String, ModelError> {
    obj.get(key)
        .and_then(|v| v.as_str())
        .map(str::to_string)
        .ok_or_else(|| ModelError::schema(key, "missing or not a string"))
}

fn optional_str(obj: &serde_json::Map<String, serde_json::Value>, key: &str) -> Option<String> {
    obj.get(key).and_then(|v| v.as_str()).map(str::to_string)
}

// ---------------------------------------------------------------------------
// Queries
// ---------------------------------------------------------------------------

/// Task-complexity grouping of queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    G1,
    G2,
    G3,
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Group::G1 => write!(f, "G1"),
            Group::G2 => write!(f, "G2"),
            Group::G3 => write!(f, "G3"),
        }
    }
}

/// A user request plus the tool names made available to solve it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Query {
    pub id: String,
    pub text: String,
    pub group: Group,
    pub tools: Vec<String>,
}

impl Query {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        group: Group,
        tools: Vec<String>,
    ) -> Result<Query, ModelError> {
        let q = Query {
            id: id.into(),
            text: text.into(),
            group,
            tools,
        };
        if q.text.is_empty() {
            return Err(ModelError::schema("text", "empty query text"));
        }
        if q.tools.is_empty() {
            return Err(ModelError::schema("tools", "query references no tools"));
        }
        Ok(q)
    }
}

impl<'de> Deserialize<'de> for Query {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        #[derive(Deserialize)]
        struct Raw {
            id: String,
            text: String,
            group: Group,
            tools: Vec<String>,
        }
        let raw = Raw::deserialize(deserializer)?;
        Query::new(raw.id, raw.text, raw.group, raw.tools).map_err(serde::de::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// Calls, observations, steps, traces
// ---------------------------------------------------------------------------

/// One keyword-argument API invocation.
///
/// Kwargs are kept lexicographically sorted; this is the canonical form used
/// for rendering, hashing, and parse-equality.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiCall {
    pub tool_name: String,
    pub kwargs: BTreeMap<String, Literal>,
}

impl ApiCall {
    pub fn new(
        tool_name: impl Into<String>,
        kwargs: BTreeMap<String, Literal>,
    ) -> Result<ApiCall, ModelError> {
        let call = ApiCall {
            tool_name: tool_name.into(),
            kwargs,
        };
        if !is_identifier(&call.tool_name) {
            return Err(ModelError::schema("tool_name", "not a valid identifier"));
        }
        for (k, v) in &call.kwargs {
            if !is_identifier(k) {
                return Err(ModelError::schema(
                    format!("kwargs.{k}"),
                    "not a valid identifier",
                ));
            }
            v.validate()?;
        }
        Ok(call)
    }

    /// Canonical JSON of the call; two calls are parse-equal iff these match.
    pub fn canonical(&self) -> String {
        canonical_json(self)
    }

    pub fn parse_eq(&self, other: &ApiCall) -> bool {
        self.canonical() == other.canonical()
    }
}

impl<'de> Deserialize<'de> for ApiCall {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        #[derive(Deserialize)]
        struct Raw {
            tool_name: String,
            kwargs: BTreeMap<String, Literal>,
        }
        let raw = Raw::deserialize(deserializer)?;
        ApiCall::new(raw.tool_name, raw.kwargs).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for ApiCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.tool_name)?;
        let mut first = true;
        for (k, v) in &self.kwargs {
            if !first {
                write!(f, ", ")?;
            }
            first = false;
            write!(f, "{k}={}", render_literal(v))?;
        }
        write!(f, ")")
    }
}

/// Render a literal in call-expression syntax.
pub fn render_literal(lit: &Literal) -> String {
    match lit {
        Literal::Null => "None".into(),
        Literal::Bool(true) => "True".into(),
        Literal::Bool(false) => "False".into(),
        Literal::Int(i) => i.to_string(),
        Literal::Float(x) => {
            let s = format!("{x}");
            if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN") {
                s
            } else {
                format!("{s}.0")
            }
        }
        Literal::Str(s) => render_string_literal(s),
        Literal::List(items) => {
            let inner: Vec<String> = items.iter().map(render_literal).collect();
            format!("[{}]", inner.join(", "))
        }
        Literal::Map(entries) => {
            let inner: Vec<String> = entries
                .iter()
                .map(|(k, v)| format!("{}: {}", render_string_literal(k), render_literal(v)))
                .collect();
            format!("{{{}}}", inner.join(", "))
        }
    }
}

fn render_string_literal(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            _ => out.push(c),
        }
    }
    out.push('"');
    out
}

/// The two-field response envelope every API call returns.
///
/// An empty `error` string means success.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Observation {
    pub error: String,
    pub response: serde_json::Value,
}

impl Observation {
    pub fn success(response: serde_json::Value) -> Observation {
        Observation {
            error: String::new(),
            response,
        }
    }

    pub fn failure(error: impl Into<String>) -> Observation {
        Observation {
            error: error.into(),
            response: serde_json::Value::String(String::new()),
        }
    }

    pub fn is_success(&self) -> bool {
        self.error.is_empty()
    }
}

/// One reasoning iteration: a thought, up to two calls, and their aligned
/// observations. A zero-call step is only valid as the closing step of a
/// trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Step {
    thought: String,
    calls: Vec<ApiCall>,
    observations: Vec<Observation>,
}

pub const MAX_CALLS_PER_STEP: usize = 2;

impl Step {
    pub fn new(
        thought: impl Into<String>,
        calls: Vec<ApiCall>,
        observations: Vec<Observation>,
    ) -> Result<Step, ModelError> {
        if calls.len() > MAX_CALLS_PER_STEP {
            return Err(ModelError::InvalidStructure(format!(
                "step has {} calls; at most {MAX_CALLS_PER_STEP} allowed",
                calls.len()
            )));
        }
        if calls.len() != observations.len() {
            return Err(ModelError::InvalidStructure(format!(
                "{} observations for {} calls",
                observations.len(),
                calls.len()
            )));
        }
        Ok(Step {
            thought: thought.into(),
            calls,
            observations,
        })
    }

    pub fn thought(&self) -> &str {
        &self.thought
    }

    pub fn calls(&self) -> &[ApiCall] {
        &self.calls
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }
}

impl<'de> Deserialize<'de> for Step {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        #[derive(Deserialize)]
        struct Raw {
            thought: String,
            calls: Vec<ApiCall>,
            observations: Vec<Observation>,
        }
        let raw = Raw::deserialize(deserializer)?;
        Step::new(raw.thought, raw.calls, raw.observations).map_err(serde::de::Error::custom)
    }
}

/// How a trace ended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "text", rename_all = "snake_case")]
pub enum Terminal {
    FinalAnswer(String),
    GivenUp,
    /// The iteration budget was exhausted before an explicit ending.
    Truncated,
}

/// An ordered reasoning trajectory ending in a terminal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trace {
    steps: Vec<Step>,
    terminal: Terminal,
}

impl Trace {
    pub fn new(steps: Vec<Step>, terminal: Terminal) -> Result<Trace, ModelError> {
        for (i, step) in steps.iter().enumerate() {
            let is_last = i + 1 == steps.len();
            if step.calls().is_empty() && !is_last {
                return Err(ModelError::InvalidStructure(format!(
                    "step {i} has no calls but is not the closing step"
                )));
            }
        }
        Ok(Trace { steps, terminal })
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn terminal(&self) -> &Terminal {
        &self.terminal
    }

    /// Total number of API calls across all steps.
    pub fn total_calls(&self) -> usize {
        self.steps.iter().map(|s| s.calls().len()).sum()
    }

    /// Indices of steps that carry at least one call.
    pub fn action_step_indices(&self) -> Vec<usize> {
        self.steps
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.calls().is_empty())
            .map(|(i, _)| i)
            .collect()
    }
}

impl<'de> Deserialize<'de> for Trace {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        #[derive(Deserialize)]
        struct Raw {
            steps: Vec<Step>,
            terminal: Terminal,
        }
        let raw = Raw::deserialize(deserializer)?;
        Trace::new(raw.steps, raw.terminal).map_err(serde::de::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// Verdict algebra
// ---------------------------------------------------------------------------

/// Task-completion judgment for an answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnswerStatus {
    Pass,
    Unsure,
    Fail,
}

/// Whether every reasoning step contributed to the result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepValidity {
    Yes,
    No,
}

/// Query feasibility decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Solvability {
    Solvable,
    Unsolvable,
}

/// Binary judgment used for error recognition and correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PassFail {
    Pass,
    Fail,
}

// ---------------------------------------------------------------------------
// Dataset records
// ---------------------------------------------------------------------------

/// Verdict pair attached to an accepted trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceVerdict {
    pub answer_status: AnswerStatus,
    pub all_steps_valid: StepValidity,
}

/// One verified instruction record: query, tool set, accepted trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifiedInstance {
    pub query: Query,
    pub tools: Vec<ToolSpec>,
    pub trace: Trace,
    pub verdict: InstanceVerdict,
}

impl VerifiedInstance {
    pub fn new(
        query: Query,
        tools: Vec<ToolSpec>,
        trace: Trace,
        verdict: InstanceVerdict,
    ) -> Result<VerifiedInstance, ModelError> {
        if verdict.answer_status != AnswerStatus::Pass {
            return Err(ModelError::InvalidStructure(
                "verified instance requires answer_status = Pass".into(),
            ));
        }
        if verdict.all_steps_valid != StepValidity::Yes {
            return Err(ModelError::InvalidStructure(
                "verified instance requires all_steps_valid = Yes".into(),
            ));
        }
        if !matches!(trace.terminal(), Terminal::FinalAnswer(_)) {
            return Err(ModelError::InvalidStructure(
                "verified instance requires a final answer terminal".into(),
            ));
        }
        Ok(VerifiedInstance {
            query,
            tools,
            trace,
            verdict,
        })
    }
}

impl<'de> Deserialize<'de> for VerifiedInstance {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        #[derive(Deserialize)]
        struct Raw {
            query: Query,
            tools: Vec<ToolSpec>,
            trace: Trace,
            verdict: InstanceVerdict,
        }
        let raw = Raw::deserialize(deserializer)?;
        VerifiedInstance::new(raw.query, raw.tools, raw.trace, raw.verdict)
            .map_err(serde::de::Error::custom)
    }
}

/// Sub-kinds of execution failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallingError {
    MissingParameter,
    TypeMismatch,
    UnknownApi,
    InvalidParameter,
}

/// Sub-kinds of successful-but-irrelevant executions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanningError {
    WrongTool,
    WrongParameterContent,
}

/// Classification of a failed exploration branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "class", content = "sub", rename_all = "snake_case")]
pub enum ErrorKind {
    Calling(CallingError),
    Planning(PlanningError),
}

/// One reflection record mined from a failed exploration branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionInstance {
    pub query: Query,
    pub tools: Vec<ToolSpec>,
    pub prefix: Vec<Step>,
    pub wrong_action: ApiCall,
    pub wrong_observation: Observation,
    pub reflection: String,
    pub reference_action: ApiCall,
    pub error_kind: ErrorKind,
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn car_data_doc() -> serde_json::Value {
        json!({
            "name": "cars_for_car_data",
            "description": "Retrieve and filter lists of cars",
            "parameters": {
                "page": {"type": "integer", "description": "The page number for pagination. Starts from 0."},
                "limit": {"type": "integer", "description": "The maximum number of car records to retrieve per page."},
                "make": {"type": "string", "description": ""},
                "year": {"type": "integer", "description": ""},
                "model": {"type": "string", "description": ""},
                "type": {"type": "string", "description": ""}
            },
            "required": ["page", "limit"]
        })
    }

    #[test]
    fn validates_refined_car_data_doc() {
        let spec = validate_tool_spec(&car_data_doc()).unwrap();
        assert_eq!(spec.name(), "cars_for_car_data");
        assert_eq!(spec.parameters().len(), 6);
        assert_eq!(spec.required().len(), 2);
        assert!(spec.required().contains("page"));
        assert!(spec.required().contains("limit"));
    }

    #[test]
    fn required_must_be_declared() {
        let doc = json!({"name": "f", "description": "", "parameters": {}, "required": ["x"]});
        let err = validate_tool_spec(&doc).unwrap_err();
        match err {
            ModelError::Schema { path, reason } => {
                assert_eq!(path, "required");
                assert!(reason.contains("not a declared parameter"));
            }
            other => panic!("unexpected error: {other:?}"),
        }
    }

    #[test]
    fn validate_is_idempotent() {
        let first = validate_tool_spec(&car_data_doc()).unwrap();
        let reserialized: serde_json::Value =
            serde_json::from_str(&canonical_json(&first)).unwrap();
        let second = validate_tool_spec(&reserialized).unwrap();
        assert_eq!(first, second);
        assert_eq!(canonical_json(&first), canonical_json(&second));
    }

    #[test]
    fn unknown_parameter_type_is_rejected() {
        let doc = json!({
            "name": "f",
            "description": "",
            "parameters": {"x": {"type": "tuple", "description": ""}},
            "required": []
        });
        assert!(matches!(
            validate_tool_spec(&doc),
            Err(ModelError::UnknownType { .. })
        ));
    }

    #[test]
    fn function_wrapper_form_is_unwrapped() {
        let doc = json!({
            "type": "function",
            "function": {
                "name": "g",
                "description": "demo",
                "parameters": {
                    "properties": {"a": {"type": "string", "description": "d"}},
                    "required": ["a"]
                }
            }
        });
        let spec = validate_tool_spec(&doc).unwrap();
        assert_eq!(spec.name(), "g");
        assert!(spec.required().contains("a"));
    }

    #[test]
    fn observation_serializes_to_exactly_two_keys() {
        let obs = Observation::success(json!({"b": 1, "a": 2}));
        let text = canonical_json(&obs);
        assert_eq!(text, r#"{"error":"","response":{"a":2,"b":1}}"#);
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value.as_object().unwrap().len(), 2);
        // Extra keys are rejected on the way back in.
        let bad = r#"{"error":"","response":"","extra":1}"#;
        assert!(serde_json::from_str::<Observation>(bad).is_err());
    }

    #[test]
    fn step_with_three_calls_fails() {
        let call = ApiCall::new("f", BTreeMap::new()).unwrap();
        let obs = Observation::success(json!(null));
        let result = Step::new(
            "t",
            vec![call.clone(), call.clone(), call],
            vec![obs.clone(), obs.clone(), obs],
        );
        assert!(result.is_err());
    }

    #[test]
    fn zero_call_step_only_at_end() {
        let action = Step::new(
            "t",
            vec![ApiCall::new("f", BTreeMap::new()).unwrap()],
            vec![Observation::success(json!("ok"))],
        )
        .unwrap();
        let closer = Step::new("done", vec![], vec![]).unwrap();
        assert!(Trace::new(
            vec![action.clone(), closer.clone()],
            Terminal::FinalAnswer("x".into())
        )
        .is_ok());
        assert!(Trace::new(vec![closer, action], Terminal::Truncated).is_err());
    }

    #[test]
    fn literal_depth_and_homogeneity() {
        let nested = Literal::List(vec![Literal::List(vec![])]);
        assert!(nested.validate().is_err());
        let mixed = Literal::List(vec![Literal::Int(1), Literal::Str("a".into())]);
        assert!(mixed.validate().is_err());
        let flat = Literal::List(vec![Literal::Int(1), Literal::Int(2)]);
        assert!(flat.validate().is_ok());
        let deep_json = json!({"a": {"b": {"c": 1}}});
        assert!(Literal::from_json(&deep_json).is_err());
    }

    #[test]
    fn canonical_call_sorts_kwargs() {
        let mut kwargs = BTreeMap::new();
        kwargs.insert("travel_mode".to_string(), Literal::Str("Train".into()));
        kwargs.insert("destination".to_string(), Literal::Str("Beijing".into()));
        let call = ApiCall::new("ticket_info_query", kwargs).unwrap();
        assert_eq!(
            call.canonical(),
            r#"{"tool_name":"ticket_info_query","kwargs":{"destination":"Beijing","travel_mode":"Train"}}"#
        );
        assert_eq!(
            call.to_string(),
            r#"ticket_info_query(destination="Beijing", travel_mode="Train")"#
        );
    }

    #[test]
    fn verified_instance_enforces_verdict() {
        let query = Query::new("q1", "text", Group::G1, vec!["f".into()]).unwrap();
        let trace = Trace::new(
            vec![Step::new(
                "t",
                vec![ApiCall::new("f", BTreeMap::new()).unwrap()],
                vec![Observation::success(json!("ok"))],
            )
            .unwrap()],
            Terminal::FinalAnswer("answer".into()),
        )
        .unwrap();
        let bad = VerifiedInstance::new(
            query.clone(),
            vec![],
            trace.clone(),
            InstanceVerdict {
                answer_status: AnswerStatus::Unsure,
                all_steps_valid: StepValidity::Yes,
            },
        );
        assert!(bad.is_err());
        let good = VerifiedInstance::new(
            query,
            vec![],
            trace,
            InstanceVerdict {
                answer_status: AnswerStatus::Pass,
                all_steps_valid: StepValidity::Yes,
            },
        );
        assert!(good.is_ok());
    }
}
