//! Multi-turn episode loop plus the step-wise triple verification (format,
//! semantic, and execution checks) that admits traces into the verified
//! instruction dataset.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::dsl::{
    parse_call_expr, render_step_assistant, render_step_observations, tokenize_blocks, BlockKind,
    DslError,
};
use crate::gateway::{extract_json, render_prompt, ChatBackend, GatewayError, GenParams, PromptId};
use crate::hub::{CallExecutor, TransportError};
use crate::model::{
    canonical_json, AnswerStatus, InstanceVerdict, ModelError, Observation, Query, Step,
    StepValidity, Terminal, ToolSpec, Trace, VerifiedInstance,
};

#[derive(Debug, thiserror::Error)]
pub enum ForgeError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Budget for one episode. Two calls per iteration is a fixed ceiling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeLimits {
    pub max_iterations: usize,
    pub per_call_timeout: Duration,
}

impl Default for EpisodeLimits {
    fn default() -> Self {
        // Twelve iterations covers multi-tool episodes with headroom while
        // keeping judge cost bounded.
        EpisodeLimits {
            max_iterations: 12,
            per_call_timeout: Duration::from_secs(30),
        }
    }
}

/// Verdict attached to a candidate trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceVerdict {
    pub format_ok: bool,
    pub answer_status: AnswerStatus,
    pub all_steps_valid: StepValidity,
    pub judge_rationale: String,
}

/// Why a candidate instance was not admitted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
pub enum Rejection {
    #[error("format check failed")]
    FormatFailed,
    #[error("answer status was {0:?}, not Pass")]
    NotPassed(AnswerStatus),
    #[error("judge found redundant or invalid steps")]
    InvalidSteps,
    #[error("trace contains no API calls")]
    NoCalls,
    #[error("consecutive duplicate call: {0}")]
    DuplicateCall(String),
}

/// Observation payloads are clipped to this many bytes before entering the
/// conversation, keeping context growth bounded.
pub const OBSERVATION_CLIP_BYTES: usize = 4096;

/// Clip a feedback payload to at most [`OBSERVATION_CLIP_BYTES`], keeping the
/// head and tail around an elision marker.
pub fn clip_feedback(text: &str) -> String {
    if text.len() <= OBSERVATION_CLIP_BYTES {
        return text.to_string();
    }
    let keep = OBSERVATION_CLIP_BYTES / 2;
    let head_end = floor_char_boundary(text, keep);
    let tail_start = ceil_char_boundary(text, text.len() - keep);
    format!(
        "{} ...[{} bytes elided]... {}",
        &text[..head_end],
        text.len() - head_end - (text.len() - tail_start),
        &text[tail_start..]
    )
}

fn floor_char_boundary(s: &str, mut i: usize) -> usize {
    while i > 0 && !s.is_char_boundary(i) {
        i -= 1;
    }
    i
}

fn ceil_char_boundary(s: &str, mut i: usize) -> usize {
    while i < s.len() && !s.is_char_boundary(i) {
        i += 1;
    }
    i
}

/// One parsed agent turn.
enum TurnAction {
    Execute { thought: String, calls: Vec<crate::model::ApiCall> },
    Final { thought: String, answer: String },
    GiveUp { thought: String },
}

fn parse_turn(text: &str) -> Result<TurnAction, DslError> {
    let blocks = tokenize_blocks(text)?;
    let mut iter = blocks.iter();
    let first = iter.next().ok_or(DslError::ParseError {
        offset: 0,
        expected: "a <thought> block".into(),
    })?;
    if first.kind != BlockKind::Thought {
        return Err(DslError::ParseError {
            offset: first.span.0,
            expected: "a <thought> block before the action".into(),
        });
    }
    let second = iter.next().ok_or(DslError::ParseError {
        offset: first.span.1,
        expected: "<execute>, <final_answer>, or <given_up> after the thought".into(),
    })?;
    if let Some(extra) = iter.next() {
        return Err(DslError::TrailingBlocks(extra.span.0));
    }
    let thought = first.body.clone();
    match second.kind {
        BlockKind::Execute => {
            let calls = parse_call_expr(&second.body)?;
            if calls.is_empty() {
                return Err(DslError::ParseError {
                    offset: second.span.0,
                    expected: "at least one call in the execute block".into(),
                });
            }
            Ok(TurnAction::Execute { thought, calls })
        }
        BlockKind::FinalAnswer => Ok(TurnAction::Final {
            thought,
            answer: second.body.clone(),
        }),
        BlockKind::GivenUp => Ok(TurnAction::GiveUp { thought }),
        BlockKind::Thought => Err(DslError::UnpairedThought(second.span.0)),
    }
}

/// Build the system+user conversation that opens an episode.
pub fn episode_conversation(
    query: &Query,
    tools: &[ToolSpec],
) -> Result<crate::gateway::Conversation, GatewayError> {
    let api_docs = tools
        .iter()
        .map(|t| t.doc_text())
        .collect::<Vec<_>>()
        .join("\n");
    let bindings = BTreeMap::from([
        ("api_docs".to_string(), api_docs),
        ("query".to_string(), query.text.clone()),
    ]);
    render_prompt(PromptId::TrajectoryConstruct, &bindings)
}

/// Render the user-turn feedback for a step's observations.
pub fn observation_feedback(observations: &[Observation]) -> String {
    let joined = observations
        .iter()
        .map(canonical_json)
        .collect::<Vec<_>>()
        .join("\n");
    clip_feedback(&joined)
}

/// Run one plan/act/observe episode.
///
/// Each iteration asks the agent for a thought plus an action, executes the
/// calls, and feeds the observation envelopes back as the next user turn. A
/// malformed turn earns exactly one corrective re-ask; a second failure in the
/// same iteration ends the episode as Truncated.
pub fn run_episode(
    query: &Query,
    tools: &[ToolSpec],
    agent: &dyn ChatBackend,
    executor: &dyn CallExecutor,
    limits: &EpisodeLimits,
    params: &GenParams,
) -> Result<Trace, ForgeError> {
    let mut conv = episode_conversation(query, tools)?;
    let mut steps: Vec<Step> = Vec::new();

    for _ in 0..limits.max_iterations {
        let mut turn = None;
        for attempt in 0..2 {
            let text = agent.complete(&conv, params)?;
            match parse_turn(&text) {
                Ok(action) => {
                    conv.push_assistant(text);
                    turn = Some(action);
                    break;
                }
                Err(err) if attempt == 0 => {
                    conv.push_assistant(text);
                    conv.push_user(format!(
                        "Your last message could not be parsed: {err}. Reply with one <thought> block followed by exactly one <execute>, <final_answer>, or <given_up> block."
                    ));
                }
                Err(err) => {
                    tracing::warn!(query = %query.id, %err, "turn unparseable after re-ask; truncating episode");
                }
            }
        }
        let Some(turn) = turn else {
            return Ok(Trace::new(steps, Terminal::Truncated)?);
        };

        match turn {
            TurnAction::Final { thought, answer } => {
                steps.push(Step::new(thought, vec![], vec![])?);
                return Ok(Trace::new(steps, Terminal::FinalAnswer(answer))?);
            }
            TurnAction::GiveUp { thought } => {
                steps.push(Step::new(thought, vec![], vec![])?);
                return Ok(Trace::new(steps, Terminal::GivenUp)?);
            }
            TurnAction::Execute { thought, calls } => {
                let mut observations = Vec::with_capacity(calls.len());
                for call in &calls {
                    let obs = match executor.execute(call) {
                        Ok(obs) => obs,
                        Err(TransportError(reason)) => {
                            Observation::failure(format!("transport failure: {reason}"))
                        }
                    };
                    observations.push(obs);
                }
                conv.push_user(observation_feedback(&observations));
                steps.push(Step::new(thought, calls, observations)?);
            }
        }
    }
    Ok(Trace::new(steps, Terminal::Truncated)?)
}

/// Format check: the trace must end in a nonempty final answer and every step
/// must obey the structural step invariants.
pub fn check_format(trace: &Trace) -> bool {
    let answer_ok = matches!(trace.terminal(), Terminal::FinalAnswer(text) if !text.trim().is_empty());
    if !answer_ok {
        return false;
    }
    for (i, step) in trace.steps().iter().enumerate() {
        let is_last = i + 1 == trace.steps().len();
        if step.calls().len() > crate::model::MAX_CALLS_PER_STEP {
            return false;
        }
        if step.calls().len() != step.observations().len() {
            return false;
        }
        if step.calls().is_empty() && !is_last {
            return false;
        }
    }
    true
}

/// Find the first pair of consecutive steps issuing an identical call.
pub fn find_consecutive_duplicate(trace: &Trace) -> Option<String> {
    for window in trace.steps().windows(2) {
        let previous: Vec<String> = window[0].calls().iter().map(|c| c.canonical()).collect();
        for call in window[1].calls() {
            if previous.contains(&call.canonical()) {
                return Some(call.to_string());
            }
        }
    }
    None
}

/// One judge call covering both the semantic check (answer status) and the
/// execution check (step validity). Format failures skip the judge entirely.
pub fn verify_trace(
    query: &Query,
    trace: &Trace,
    judge: &dyn ChatBackend,
) -> Result<TraceVerdict, ForgeError> {
    if !check_format(trace) {
        return Ok(TraceVerdict {
            format_ok: false,
            answer_status: AnswerStatus::Fail,
            all_steps_valid: StepValidity::No,
            judge_rationale: "format check failed; judge skipped".into(),
        });
    }

    let bindings = BTreeMap::from([
        ("query".to_string(), query.text.clone()),
        ("trajectory".to_string(), crate::dsl::render_trace(trace)),
    ]);
    let mut conv = render_prompt(PromptId::AnswerVerify, &bindings)?;
    let params = GenParams::judge();

    for attempt in 0..2 {
        let text = judge.complete(&conv, &params)?;
        if let Some((status, validity, rationale)) = parse_answer_verdict(&text) {
            return Ok(TraceVerdict {
                format_ok: true,
                answer_status: status,
                all_steps_valid: validity,
                judge_rationale: rationale,
            });
        }
        if attempt == 0 {
            conv.push_assistant(text);
            conv.push_user(
                "Respond with a JSON object containing `answer_status` (Pass/Fail/Unsure) and `all_steps_validity` (yes/no).",
            );
        } else {
            tracing::warn!(query = %query.id, "malformed trace verdict after re-ask; failing closed");
        }
    }
    Ok(TraceVerdict {
        format_ok: true,
        answer_status: AnswerStatus::Unsure,
        all_steps_valid: StepValidity::No,
        judge_rationale: "judge output malformed after re-ask".into(),
    })
}

fn parse_answer_verdict(text: &str) -> Option<(AnswerStatus, StepValidity, String)> {
    let value = extract_json(text).ok()?;
    let status = match value.get("answer_status")?.as_str()? {
        s if s.eq_ignore_ascii_case("pass") => AnswerStatus::Pass,
        s if s.eq_ignore_ascii_case("fail") => AnswerStatus::Fail,
        s if s.eq_ignore_ascii_case("unsure") => AnswerStatus::Unsure,
        _ => return None,
    };
    let validity = match value.get("all_steps_validity")?.as_str()? {
        s if s.eq_ignore_ascii_case("yes") => StepValidity::Yes,
        s if s.eq_ignore_ascii_case("no") => StepValidity::No,
        _ => return None,
    };
    let rationale = value
        .get("content")
        .and_then(|c| c.as_str())
        .unwrap_or_default()
        .to_string();
    Some((status, validity, rationale))
}

/// Admit a candidate into the verified dataset iff the full conjunction holds:
/// format ok, answer passed, all steps valid, at least one call, and no
/// consecutive duplicate calls.
pub fn admit_instance(
    query: &Query,
    tools: &[ToolSpec],
    trace: &Trace,
    verdict: &TraceVerdict,
) -> Result<VerifiedInstance, Rejection> {
    if !verdict.format_ok {
        return Err(Rejection::FormatFailed);
    }
    if verdict.answer_status != AnswerStatus::Pass {
        return Err(Rejection::NotPassed(verdict.answer_status));
    }
    if verdict.all_steps_valid != StepValidity::Yes {
        return Err(Rejection::InvalidSteps);
    }
    if trace.total_calls() == 0 {
        return Err(Rejection::NoCalls);
    }
    if let Some(dup) = find_consecutive_duplicate(trace) {
        return Err(Rejection::DuplicateCall(dup));
    }
    VerifiedInstance::new(
        query.clone(),
        tools.to_vec(),
        trace.clone(),
        InstanceVerdict {
            answer_status: verdict.answer_status,
            all_steps_valid: verdict.all_steps_valid,
        },
    )
    .map_err(|_| Rejection::FormatFailed)
}

/// Rebuild the episode conversation up to and including step `t`, as the
/// exploration and export stages see it.
pub fn conversation_through_step(
    query: &Query,
    tools: &[ToolSpec],
    trace_steps: &[Step],
    t: usize,
) -> Result<crate::gateway::Conversation, GatewayError> {
    let mut conv = episode_conversation(query, tools)?;
    for step in &trace_steps[..=t] {
        conv.push_assistant(render_step_assistant(step));
        if !step.calls().is_empty() {
            conv.push_user(observation_feedback(step.observations()));
        }
    }
    Ok(conv)
}

/// Rendered text of a step used inside reflection prompts: the assistant turn
/// plus the fenced observations.
pub fn render_iteration(step: &Step) -> String {
    let mut out = render_step_assistant(step);
    if !step.calls().is_empty() {
        out.push('\n');
        out.push_str(&render_step_observations(step));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ScriptEntry, ScriptedBackend};
    use crate::hub::{ApiRegistry, SimExecutor, SimMode};
    use crate::model::{validate_tool_spec, Group};
    use serde_json::json;
    use std::sync::Arc;

    fn weather_tool() -> ToolSpec {
        validate_tool_spec(&json!({
            "name": "get_weather_forecast",
            "description": "Forecast by city and date.",
            "parameters": {
                "city": {"type": "string", "description": ""},
                "date": {"type": "string", "description": ""}
            },
            "required": ["city", "date"],
            "origin": "simulated"
        }))
        .unwrap()
    }

    fn weather_query() -> Query {
        Query::new(
            "q_weather",
            "What's the weather in London on December 25, 2024?",
            Group::G1,
            vec!["get_weather_forecast".into()],
        )
        .unwrap()
    }

    fn sim_executor() -> SimExecutor {
        SimExecutor::new(
            Arc::new(ApiRegistry::from_specs([weather_tool()])),
            SimMode::Deterministic(7),
        )
    }

    fn agent_turn_call() -> &'static str {
        "<thought>I need the forecast for London on 2024-12-25.</thought>\n<execute>\nprint(get_weather_forecast(city=\"London\", date=\"2024-12-25\"))\n</execute>"
    }

    fn agent_turn_final() -> &'static str {
        "<thought>I have the forecast and can answer.</thought>\n<final_answer>The weather will be cold and clear.</final_answer>"
    }

    #[test]
    fn episode_runs_call_then_final_answer() {
        let agent = ScriptedBackend::new(
            "agent",
            vec![
                ScriptEntry::new(agent_turn_call()),
                ScriptEntry::new(agent_turn_final()),
            ],
        );
        let trace = run_episode(
            &weather_query(),
            &[weather_tool()],
            &agent,
            &sim_executor(),
            &EpisodeLimits::default(),
            &GenParams::agent(0.0),
        )
        .unwrap();
        assert_eq!(trace.total_calls(), 1);
        assert_eq!(trace.steps().len(), 2);
        let call = &trace.steps()[0].calls()[0];
        assert_eq!(call.to_string(), "get_weather_forecast(city=\"London\", date=\"2024-12-25\")");
        assert!(matches!(trace.terminal(), Terminal::FinalAnswer(t) if t.contains("weather")));
        assert!(trace.steps()[0].observations()[0].is_success());
    }

    #[test]
    fn episode_without_terminal_truncates_at_budget() {
        let agent = ScriptedBackend::always("agent", agent_turn_call());
        let limits = EpisodeLimits {
            max_iterations: 5,
            ..EpisodeLimits::default()
        };
        let trace = run_episode(
            &weather_query(),
            &[weather_tool()],
            &agent,
            &sim_executor(),
            &limits,
            &GenParams::agent(0.0),
        )
        .unwrap();
        assert_eq!(trace.steps().len(), 5);
        assert_eq!(trace.terminal(), &Terminal::Truncated);
    }

    #[test]
    fn malformed_turn_gets_one_corrective_reask() {
        let agent = ScriptedBackend::new(
            "agent",
            vec![
                ScriptEntry::new("no tags at all"),
                ScriptEntry::new(agent_turn_call()),
                ScriptEntry::new(agent_turn_final()),
            ],
        );
        let trace = run_episode(
            &weather_query(),
            &[weather_tool()],
            &agent,
            &sim_executor(),
            &EpisodeLimits::default(),
            &GenParams::agent(0.0),
        )
        .unwrap();
        assert_eq!(trace.total_calls(), 1);
        assert!(matches!(trace.terminal(), Terminal::FinalAnswer(_)));
    }

    #[test]
    fn second_failure_in_iteration_truncates() {
        let agent = ScriptedBackend::always("agent", "still not a valid turn");
        let trace = run_episode(
            &weather_query(),
            &[weather_tool()],
            &agent,
            &sim_executor(),
            &EpisodeLimits::default(),
            &GenParams::agent(0.0),
        )
        .unwrap();
        assert_eq!(trace.steps().len(), 0);
        assert_eq!(trace.terminal(), &Terminal::Truncated);
    }

    fn sample_trace(terminal: Terminal) -> Trace {
        let step = Step::new(
            "t",
            vec![crate::model::ApiCall::new("get_weather_forecast", Default::default()).unwrap()],
            vec![Observation::success(json!({"ok": true}))],
        )
        .unwrap();
        Trace::new(vec![step], terminal).unwrap()
    }

    #[test]
    fn format_check_requires_final_answer() {
        assert!(check_format(&sample_trace(Terminal::FinalAnswer(
            "The weather will be mild.".into()
        ))));
        assert!(!check_format(&sample_trace(Terminal::GivenUp)));
        assert!(!check_format(&sample_trace(Terminal::Truncated)));
        assert!(!check_format(&sample_trace(Terminal::FinalAnswer("  ".into()))));
    }

    #[test]
    fn verify_trace_skips_judge_on_format_failure() {
        let judge = ScriptedBackend::new("judge", vec![]);
        let verdict =
            verify_trace(&weather_query(), &sample_trace(Terminal::GivenUp), &judge).unwrap();
        assert!(!verdict.format_ok);
        assert_eq!(verdict.all_steps_valid, StepValidity::No);
    }

    #[test]
    fn verify_trace_parses_judge_output() {
        let judge = ScriptedBackend::new(
            "judge",
            vec![ScriptEntry::new(
                r#"{"content": "Valid weather data obtained", "answer_status": "Pass", "all_steps_validity": "yes"}"#,
            )],
        );
        let trace = sample_trace(Terminal::FinalAnswer("cold".into()));
        let verdict = verify_trace(&weather_query(), &trace, &judge).unwrap();
        assert_eq!(verdict.answer_status, AnswerStatus::Pass);
        assert_eq!(verdict.all_steps_valid, StepValidity::Yes);
        assert_eq!(verdict.judge_rationale, "Valid weather data obtained");
    }

    #[test]
    fn verify_trace_fails_closed_on_malformed_judge() {
        let judge = ScriptedBackend::always("judge", "garbage with no json");
        let trace = sample_trace(Terminal::FinalAnswer("cold".into()));
        let verdict = verify_trace(&weather_query(), &trace, &judge).unwrap();
        assert_eq!(verdict.answer_status, AnswerStatus::Unsure);
        assert_eq!(verdict.all_steps_valid, StepValidity::No);
    }

    fn verdict(format_ok: bool, status: AnswerStatus, validity: StepValidity) -> TraceVerdict {
        TraceVerdict {
            format_ok,
            answer_status: status,
            all_steps_valid: validity,
            judge_rationale: String::new(),
        }
    }

    #[test]
    fn admission_conjunction() {
        let query = weather_query();
        let tools = [weather_tool()];
        let trace = sample_trace(Terminal::FinalAnswer("cold".into()));

        assert!(admit_instance(
            &query,
            &tools,
            &trace,
            &verdict(true, AnswerStatus::Pass, StepValidity::Yes)
        )
        .is_ok());
        assert_eq!(
            admit_instance(
                &query,
                &tools,
                &trace,
                &verdict(true, AnswerStatus::Pass, StepValidity::No)
            )
            .unwrap_err(),
            Rejection::InvalidSteps
        );
        assert!(matches!(
            admit_instance(
                &query,
                &tools,
                &trace,
                &verdict(true, AnswerStatus::Unsure, StepValidity::Yes)
            )
            .unwrap_err(),
            Rejection::NotPassed(AnswerStatus::Unsure)
        ));
        assert_eq!(
            admit_instance(
                &query,
                &tools,
                &trace,
                &verdict(false, AnswerStatus::Pass, StepValidity::Yes)
            )
            .unwrap_err(),
            Rejection::FormatFailed
        );
    }

    #[test]
    fn duplicate_consecutive_calls_are_rejected_mechanically() {
        let call = crate::model::ApiCall::new("get_weather_forecast", Default::default()).unwrap();
        let step = |c: &crate::model::ApiCall| {
            Step::new("t", vec![c.clone()], vec![Observation::success(json!(1))]).unwrap()
        };
        let trace = Trace::new(
            vec![step(&call), step(&call), Step::new("end", vec![], vec![]).unwrap()],
            Terminal::FinalAnswer("x".into()),
        )
        .unwrap();
        assert!(find_consecutive_duplicate(&trace).is_some());
        assert!(matches!(
            admit_instance(
                &weather_query(),
                &[weather_tool()],
                &trace,
                &verdict(true, AnswerStatus::Pass, StepValidity::Yes)
            )
            .unwrap_err(),
            Rejection::DuplicateCall(_)
        ));
    }

    #[test]
    fn zero_call_final_answer_is_not_admitted() {
        let trace = Trace::new(
            vec![Step::new("just answering", vec![], vec![]).unwrap()],
            Terminal::FinalAnswer("made up".into()),
        )
        .unwrap();
        assert_eq!(
            admit_instance(
                &weather_query(),
                &[weather_tool()],
                &trace,
                &verdict(true, AnswerStatus::Pass, StepValidity::Yes)
            )
            .unwrap_err(),
            Rejection::NoCalls
        );
    }

    #[test]
    fn clip_feedback_keeps_head_and_tail() {
        let long = "x".repeat(10_000);
        let clipped = clip_feedback(&long);
        assert!(clipped.len() < 6000);
        assert!(clipped.contains("elided"));
        let short = "short";
        assert_eq!(clip_feedback(short), "short");
    }
}
