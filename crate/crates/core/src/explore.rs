//! Exploration-based reflection mining: sample alternative actions at chosen
//! steps of verified trajectories, harvest the failures as (wrong action,
//! wrong observation, reference action) tuples, classify each error, and
//! generate reflection text.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsl::{parse_call_expr, tokenize_blocks, BlockKind};
use crate::forge::{conversation_through_step, render_iteration};
use crate::gateway::{
    extract_json, render_prompt, ChatBackend, Conversation, GatewayError, GenParams, PromptId,
    Role,
};
use crate::hub::{CallExecutor, TransportError};
use crate::model::{
    canonical_json, ApiCall, CallingError, ErrorKind, ModelError, Observation, PlanningError,
    ReflectionInstance, Step, VerifiedInstance,
};

#[derive(Debug, thiserror::Error)]
pub enum ExploreError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Sampling configuration for dataset construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExploreConfig {
    /// Exploration points drawn per trace.
    pub k: usize,
    /// Alternative actions sampled per point.
    pub n: usize,
    /// Sampling temperature for alternatives.
    pub temperature: f64,
    pub seed: u64,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        ExploreConfig {
            k: 2,
            n: 4,
            temperature: 0.9,
            seed: 0,
        }
    }
}

/// Whether a sampled branch advanced the task or failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "error", rename_all = "snake_case")]
pub enum Disposition {
    Success,
    Failure(ErrorKind),
}

/// One sampled alternative action at an exploration point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchOutcome {
    pub origin_step: usize,
    pub sampled_action: ApiCall,
    pub observation: Observation,
    pub disposition: Disposition,
}

/// Context shared by classification and reflection generation.
pub struct BranchContext<'a> {
    pub instance: &'a VerifiedInstance,
    /// Exploration point: the branch replaces the action at `t + 1`.
    pub t: usize,
}

impl BranchContext<'_> {
    /// The reference (correct) action the branch competes with.
    pub fn reference_action(&self) -> &ApiCall {
        &self.instance.trace.steps()[self.t + 1].calls()[0]
    }

    fn reference_step(&self) -> &Step {
        &self.instance.trace.steps()[self.t + 1]
    }
}

/// Indices eligible as exploration points: steps whose successor step carries
/// an action. The terminal and the last action step are never eligible.
pub fn eligible_points(trace: &crate::model::Trace) -> Vec<usize> {
    let steps = trace.steps();
    (0..steps.len())
        .filter(|&t| {
            !steps[t].calls().is_empty()
                && t + 1 < steps.len()
                && !steps[t + 1].calls().is_empty()
        })
        .collect()
}

/// Uniformly sample `min(k, eligible)` distinct exploration points,
/// deterministically under a fixed seed. Returned indices are sorted.
pub fn pick_exploration_points(
    trace: &crate::model::Trace,
    k: usize,
    rng_seed: u64,
) -> Vec<usize> {
    let eligible = eligible_points(trace);
    if eligible.is_empty() || k == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut picked: Vec<usize> = eligible
        .choose_multiple(&mut rng, k.min(eligible.len()))
        .copied()
        .collect();
    picked.sort_unstable();
    picked
}

/// Sample `n` alternative next actions at exploration point `t`, execute each
/// against the executor, and record outcome dispositions. Unparseable samples
/// are discarded and re-drawn, bounded by `2n` total attempts.
pub fn sample_branches(
    instance: &VerifiedInstance,
    t: usize,
    agent: &dyn ChatBackend,
    judge: &dyn ChatBackend,
    executor: &dyn CallExecutor,
    config: &ExploreConfig,
) -> Result<Vec<BranchOutcome>, ExploreError> {
    let ctx = BranchContext { instance, t };
    let base_conv =
        conversation_through_step(&instance.query, &instance.tools, instance.trace.steps(), t)?;
    let params = GenParams::agent(config.temperature);

    let mut outcomes = Vec::new();
    let mut attempts = 0;
    while outcomes.len() < config.n && attempts < config.n * 2 {
        attempts += 1;
        let text = agent.complete(&base_conv, &params)?;
        let Some(action) = parse_sampled_action(&text) else {
            continue;
        };
        let observation = match executor.execute(&action) {
            Ok(obs) => obs,
            Err(TransportError(reason)) => {
                Observation::failure(format!("transport failure: {reason}"))
            }
        };
        let disposition = judge_disposition(&ctx, &action, &observation, judge)?;
        outcomes.push(BranchOutcome {
            origin_step: t,
            sampled_action: action,
            observation,
            disposition,
        });
    }
    Ok(outcomes)
}

/// Parse a sampled turn into its first call; tolerate bare execute blocks.
fn parse_sampled_action(text: &str) -> Option<ApiCall> {
    if let Ok(blocks) = tokenize_blocks(text) {
        for block in &blocks {
            if block.kind == BlockKind::Execute {
                if let Ok(calls) = parse_call_expr(&block.body) {
                    if let Some(first) = calls.into_iter().next() {
                        return Some(first);
                    }
                }
                return None;
            }
        }
    }
    // No execute tag: try the text as raw call statements.
    parse_call_expr(text).ok().and_then(|c| c.into_iter().next())
}

fn judge_disposition(
    ctx: &BranchContext<'_>,
    action: &ApiCall,
    observation: &Observation,
    judge: &dyn ChatBackend,
) -> Result<Disposition, ExploreError> {
    let reference = ctx.reference_action();
    if !observation.is_success() {
        return Ok(Disposition::Failure(classify_error(
            action,
            observation,
            ctx,
            judge,
        )?));
    }
    if action.parse_eq(reference) {
        return Ok(Disposition::Success);
    }
    if action.tool_name != reference.tool_name {
        return Ok(Disposition::Failure(ErrorKind::Planning(
            PlanningError::WrongTool,
        )));
    }
    // Same tool, different parameters, clean execution: ask the judge whether
    // the branch still advanced the task.
    match judge_branch(ctx, action, observation, judge)? {
        BranchLabel::Relevant => Ok(Disposition::Success),
        BranchLabel::WrongTool => Ok(Disposition::Failure(ErrorKind::Planning(
            PlanningError::WrongTool,
        ))),
        BranchLabel::WrongParameterContent => Ok(Disposition::Failure(ErrorKind::Planning(
            PlanningError::WrongParameterContent,
        ))),
    }
}

/// Classify a failed branch.
///
/// Nonempty observation errors are matched mechanically against the known
/// error shapes. Clean executions route to the judge, which labels the
/// planning failure relative to the reference action; an unusable judge
/// answer defaults to wrong-parameter-content.
pub fn classify_error(
    wrong_action: &ApiCall,
    wrong_observation: &Observation,
    ctx: &BranchContext<'_>,
    judge: &dyn ChatBackend,
) -> Result<ErrorKind, ExploreError> {
    if !wrong_observation.is_success() {
        return Ok(classify_error_text(&wrong_observation.error));
    }
    let reference = ctx.reference_action();
    if wrong_action.tool_name != reference.tool_name {
        return Ok(ErrorKind::Planning(PlanningError::WrongTool));
    }
    match judge_branch(ctx, wrong_action, wrong_observation, judge)? {
        BranchLabel::WrongTool => Ok(ErrorKind::Planning(PlanningError::WrongTool)),
        _ => Ok(ErrorKind::Planning(PlanningError::WrongParameterContent)),
    }
}

/// Mechanical classification of an error envelope.
pub fn classify_error_text(error: &str) -> ErrorKind {
    let lower = error.to_lowercase();
    if lower.contains("missing") || lower.contains("required") || lower.contains("incomplete") {
        ErrorKind::Calling(CallingError::MissingParameter)
    } else if lower.contains("type mismatch")
        || lower.contains("format")
        || lower.contains("expected integer")
        || lower.contains("expected string")
    {
        ErrorKind::Calling(CallingError::TypeMismatch)
    } else if lower.contains("doesn't exist")
        || lower.contains("does not exist")
        || lower.contains("unknown api")
        || lower.contains("not found")
    {
        ErrorKind::Calling(CallingError::UnknownApi)
    } else {
        ErrorKind::Calling(CallingError::InvalidParameter)
    }
}

enum BranchLabel {
    Relevant,
    WrongTool,
    WrongParameterContent,
}

/// One judge call deciding whether a clean-running branch advanced the task,
/// and if not, which planning error it is.
fn judge_branch(
    ctx: &BranchContext<'_>,
    action: &ApiCall,
    observation: &Observation,
    judge: &dyn ChatBackend,
) -> Result<BranchLabel, ExploreError> {
    let mut conv = Conversation::new(
        Role::System,
        "You are an assistant judging one step of a tool-use trajectory. Given the query, the reference action known to advance the task, and a sampled alternative action with its observation, decide whether the sampled action also advances the task. Respond with a JSON object: {\"disposition\": \"success\"} if it does, or {\"disposition\": \"wrong_tool\"} or {\"disposition\": \"wrong_parameter_content\"} if it does not.",
    );
    conv.push_user(format!(
        "Query: {}\nReference action: {}\nSampled action: {}\nSampled observation: {}",
        ctx.instance.query.text,
        ctx.reference_action(),
        action,
        canonical_json(observation),
    ));
    let params = GenParams::judge();

    for attempt in 0..2 {
        let text = judge.complete(&conv, &params)?;
        if let Ok(value) = extract_json(&text) {
            if let Some(label) = value.get("disposition").and_then(|d| d.as_str()) {
                match label {
                    l if l.eq_ignore_ascii_case("success") => return Ok(BranchLabel::Relevant),
                    l if l.eq_ignore_ascii_case("wrong_tool") => {
                        return Ok(BranchLabel::WrongTool)
                    }
                    l if l.eq_ignore_ascii_case("wrong_parameter_content") => {
                        return Ok(BranchLabel::WrongParameterContent)
                    }
                    _ => {}
                }
            }
        }
        if attempt == 0 {
            conv.push_assistant(text);
            conv.push_user(
                "Respond with {\"disposition\": \"success\" | \"wrong_tool\" | \"wrong_parameter_content\"}.",
            );
        }
    }
    tracing::warn!("branch judge output unusable after re-ask; defaulting to wrong_parameter_content");
    Ok(BranchLabel::WrongParameterContent)
}

/// Why a failure branch produced no reflection instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dropped {
    pub query_id: String,
    pub origin_step: usize,
    pub reason: String,
}

/// Generate reflection text for a failure branch.
///
/// The output must contain exactly one thought block and one execute block
/// whose single call is parse-equal to the reference action; a violating
/// output earns one re-ask and is then dropped.
pub fn generate_reflection(
    ctx: &BranchContext<'_>,
    wrong_action: &ApiCall,
    wrong_observation: &Observation,
    reference_action: &ApiCall,
    backend: &dyn ChatBackend,
) -> Result<Result<String, String>, ExploreError> {
    let previous = ctx.instance.trace.steps()[..=ctx.t]
        .iter()
        .map(render_iteration)
        .collect::<Vec<_>>()
        .join("\n");
    let api_docs = ctx
        .instance
        .tools
        .iter()
        .map(|t| t.doc_text())
        .collect::<Vec<_>>()
        .join("\n");
    let wrong_iteration = format!("<execute>\nprint({wrong_action})\n</execute>");
    let bindings = BTreeMap::from([
        ("query".to_string(), ctx.instance.query.text.clone()),
        ("api_docs".to_string(), api_docs),
        ("previous_iterations".to_string(), previous),
        ("wrong_iteration".to_string(), wrong_iteration),
        (
            "wrong_observation".to_string(),
            canonical_json(wrong_observation),
        ),
        (
            "right_iteration".to_string(),
            crate::dsl::render_step_assistant(ctx.reference_step()),
        ),
    ]);
    let mut conv = render_prompt(PromptId::Reflection, &bindings)?;
    let params = GenParams::judge();

    let mut last_reason = String::new();
    for attempt in 0..2 {
        let text = backend.complete(&conv, &params)?;
        match validate_reflection(&text, reference_action) {
            Ok(()) => return Ok(Ok(text)),
            Err(reason) => {
                last_reason = reason.clone();
                if attempt == 0 {
                    conv.push_assistant(text);
                    conv.push_user(format!(
                        "The reflection was rejected: {reason}. Reply with exactly one <thought> block and one <execute> block whose call matches the reference iteration."
                    ));
                }
            }
        }
    }
    Ok(Err(last_reason))
}

fn validate_reflection(text: &str, reference: &ApiCall) -> Result<(), String> {
    let blocks = tokenize_blocks(text).map_err(|e| e.to_string())?;
    let thoughts = blocks.iter().filter(|b| b.kind == BlockKind::Thought).count();
    let executes: Vec<_> = blocks
        .iter()
        .filter(|b| b.kind == BlockKind::Execute)
        .collect();
    if thoughts != 1 || executes.len() != 1 {
        return Err(format!(
            "expected exactly one thought and one execute block, found {thoughts} and {}",
            executes.len()
        ));
    }
    let calls = parse_call_expr(&executes[0].body).map_err(|e| e.to_string())?;
    if calls.len() != 1 {
        return Err(format!("expected exactly one corrected call, found {}", calls.len()));
    }
    if !calls[0].parse_eq(reference) {
        return Err("reflection diverges from reference".into());
    }
    Ok(())
}

/// Aggregate report from a dataset build.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ExploreReport {
    pub instances: usize,
    pub points: usize,
    pub branches_sampled: usize,
    pub successes: usize,
    pub failures: usize,
    pub reflections_kept: usize,
    pub dropped: Vec<Dropped>,
    pub error_kinds: BTreeMap<String, usize>,
}

/// Backends used during exploration.
pub struct ExploreBackends<'a> {
    pub agent: &'a dyn ChatBackend,
    pub judge: &'a dyn ChatBackend,
    pub reflector: &'a dyn ChatBackend,
}

/// Build the reflection dataset over verified instances.
///
/// Output order is deterministic: (instance, point, branch), with the
/// per-instance point seed derived from the configured seed.
pub fn build_reflection_dataset(
    instances: &[VerifiedInstance],
    config: &ExploreConfig,
    backends: &ExploreBackends<'_>,
    executor: &dyn CallExecutor,
) -> Result<(Vec<ReflectionInstance>, ExploreReport), ExploreError> {
    let mut dataset = Vec::new();
    let mut report = ExploreReport {
        instances: instances.len(),
        ..ExploreReport::default()
    };

    for (index, instance) in instances.iter().enumerate() {
        let point_seed = config
            .seed
            .wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let points = pick_exploration_points(&instance.trace, config.k, point_seed);
        report.points += points.len();
        for t in points {
            let ctx = BranchContext { instance, t };
            let reference = ctx.reference_action().clone();
            let branches =
                sample_branches(instance, t, backends.agent, backends.judge, executor, config)?;
            report.branches_sampled += branches.len();
            for branch in branches {
                match branch.disposition {
                    Disposition::Success => {
                        // Successful non-reference branches carry no reflection
                        // signal; they are counted and discarded.
                        report.successes += 1;
                    }
                    Disposition::Failure(error_kind) => {
                        report.failures += 1;
                        *report
                            .error_kinds
                            .entry(format!("{error_kind:?}"))
                            .or_default() += 1;
                        match generate_reflection(
                            &ctx,
                            &branch.sampled_action,
                            &branch.observation,
                            &reference,
                            backends.reflector,
                        )? {
                            Ok(reflection) => {
                                report.reflections_kept += 1;
                                dataset.push(ReflectionInstance {
                                    query: instance.query.clone(),
                                    tools: instance.tools.clone(),
                                    prefix: instance.trace.steps()[..=t].to_vec(),
                                    wrong_action: branch.sampled_action,
                                    wrong_observation: branch.observation,
                                    reflection,
                                    reference_action: reference.clone(),
                                    error_kind,
                                });
                            }
                            Err(reason) => report.dropped.push(Dropped {
                                query_id: instance.query.id.clone(),
                                origin_step: t,
                                reason,
                            }),
                        }
                    }
                }
            }
        }
    }
    Ok((dataset, report))
}
