//! Metrics engine and benchmark tooling: pass rate, win rate, error
//! recognition/correction rates, call-count statistics, the judge wrappers
//! behind them, and error-case forging for reflection benchmarks.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsl::parse_call_expr;
use crate::gateway::{
    extract_json, render_prompt, ChatBackend, Conversation, GatewayError, GenParams, PromptId,
    Role,
};
use crate::hub::{CallExecutor, TransportError};
use crate::model::{
    AnswerStatus, ApiCall, Literal, Observation, PassFail, Query, Step, ToolSpec, Trace,
    VerifiedInstance,
};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("empty input")]
    EmptyInput,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("no solvable case after {attempts} attempts: {reason}")]
    UnsolvableCase { attempts: usize, reason: String },
}

// ---------------------------------------------------------------------------
// Metric formulas
// ---------------------------------------------------------------------------

/// Pass rate: mean of Pass=1.0, Unsure=0.5, Fail=0.0.
pub fn pass_rate(statuses: &[AnswerStatus]) -> Result<f64, EvalError> {
    if statuses.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let sum: f64 = statuses
        .iter()
        .map(|s| match s {
            AnswerStatus::Pass => 1.0,
            AnswerStatus::Unsure => 0.5,
            AnswerStatus::Fail => 0.0,
        })
        .sum();
    Ok(sum / statuses.len() as f64)
}

/// One pairwise comparison outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comparison {
    /// Index of the better answer in candidate space (0 or 1).
    pub better_index: u8,
    pub rationale: String,
}

/// Win rate: fraction of comparisons won by `candidate_index`.
pub fn win_rate(comparisons: &[Comparison], candidate_index: u8) -> Result<f64, EvalError> {
    if comparisons.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let wins = comparisons
        .iter()
        .filter(|c| c.better_index == candidate_index)
        .count();
    Ok(wins as f64 / comparisons.len() as f64)
}

/// Recognition/correction judgment for one error case.
///
/// Construction coerces the impossible corrected-but-unrecognized pair to
/// both-fail, so `correction = Pass` implies `recognition = Pass`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorJudgement {
    pub recognition: PassFail,
    pub correction: PassFail,
}

impl ErrorJudgement {
    pub fn new(recognition: PassFail, correction: PassFail) -> ErrorJudgement {
        if recognition == PassFail::Fail && correction == PassFail::Pass {
            tracing::warn!("correction without recognition coerced to both-fail");
            return ErrorJudgement {
                recognition: PassFail::Fail,
                correction: PassFail::Fail,
            };
        }
        ErrorJudgement {
            recognition,
            correction,
        }
    }

    pub fn fail_closed() -> ErrorJudgement {
        ErrorJudgement {
            recognition: PassFail::Fail,
            correction: PassFail::Fail,
        }
    }
}

/// Error recognition rate and error correction rate over judged cases.
pub fn err_ecr(judgements: &[ErrorJudgement]) -> Result<(f64, f64), EvalError> {
    if judgements.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let n = judgements.len() as f64;
    let recognized = judgements
        .iter()
        .filter(|j| j.recognition == PassFail::Pass)
        .count() as f64;
    let corrected = judgements
        .iter()
        .filter(|j| j.recognition == PassFail::Pass && j.correction == PassFail::Pass)
        .count() as f64;
    Ok((recognized / n, corrected / n))
}

/// Mean API-call count per trace.
pub fn avg_api_calls(traces: &[Trace]) -> Result<f64, EvalError> {
    if traces.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let total: usize = traces.iter().map(Trace::total_calls).sum();
    Ok(total as f64 / traces.len() as f64)
}

// ---------------------------------------------------------------------------
// Judges
// ---------------------------------------------------------------------------

/// Pass/fail/unsure judgment for one answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassJudgement {
    pub status: AnswerStatus,
    pub rationale: String,
}

/// Judge one final answer with its execution chain. Fail-closed to Unsure on
/// malformed output after one re-ask.
pub fn judge_pass(
    query: &str,
    final_answer: &str,
    trace_text: &str,
    judge: &dyn ChatBackend,
) -> Result<PassJudgement, EvalError> {
    let bindings = BTreeMap::from([
        ("query".to_string(), query.to_string()),
        ("final_answer".to_string(), final_answer.to_string()),
        ("execution_chain".to_string(), trace_text.to_string()),
    ]);
    let mut conv = render_prompt(PromptId::PassJudge, &bindings)?;
    let params = GenParams::judge();

    for attempt in 0..2 {
        let text = judge.complete(&conv, &params)?;
        if let Ok(value) = extract_json(&text) {
            if let Some(status) = value
                .get("answer_status")
                .and_then(|s| s.as_str())
                .and_then(parse_status)
            {
                let rationale = value
                    .get("content")
                    .and_then(|c| c.as_str())
                    .unwrap_or_default()
                    .to_string();
                return Ok(PassJudgement { status, rationale });
            }
        }
        if attempt == 0 {
            conv.push_assistant(text);
            conv.push_user(
                "Respond with a JSON object containing `answer_status` (Pass/Fail/Unsure).",
            );
        }
    }
    Ok(PassJudgement {
        status: AnswerStatus::Unsure,
        rationale: "judge output malformed after re-ask".into(),
    })
}

fn parse_status(s: &str) -> Option<AnswerStatus> {
    if s.eq_ignore_ascii_case("pass") {
        Some(AnswerStatus::Pass)
    } else if s.eq_ignore_ascii_case("fail") {
        Some(AnswerStatus::Fail)
    } else if s.eq_ignore_ascii_case("unsure") {
        Some(AnswerStatus::Unsure)
    } else {
        None
    }
}

/// Compare two answers. With `swap` the presentation order is reversed; the
/// returned index is always in candidate space. Malformed output after one
/// re-ask discards the comparison.
pub fn judge_compare(
    query: &str,
    answer_a: &str,
    answer_b: &str,
    judge: &dyn ChatBackend,
    swap: bool,
) -> Result<Option<Comparison>, EvalError> {
    let (first, second) = if swap {
        (answer_b, answer_a)
    } else {
        (answer_a, answer_b)
    };
    let bindings = BTreeMap::from([
        ("query".to_string(), query.to_string()),
        ("answer_0".to_string(), first.to_string()),
        ("answer_1".to_string(), second.to_string()),
    ]);
    let mut conv = render_prompt(PromptId::WinJudge, &bindings)?;
    let params = GenParams::judge();

    for attempt in 0..2 {
        let text = judge.complete(&conv, &params)?;
        if let Ok(value) = extract_json(&text) {
            if let Some(presented) = parse_better_index(&value) {
                let better_index = if swap { 1 - presented } else { presented };
                let rationale = value
                    .get("content")
                    .and_then(|c| c.as_str())
                    .unwrap_or_default()
                    .to_string();
                return Ok(Some(Comparison {
                    better_index,
                    rationale,
                }));
            }
        }
        if attempt == 0 {
            conv.push_assistant(text);
            conv.push_user(
                "Respond with a JSON object containing `better_answer_index` (\"0\" or \"1\").",
            );
        }
    }
    Ok(None)
}

fn parse_better_index(value: &serde_json::Value) -> Option<u8> {
    let raw = value.get("better_answer_index")?;
    if let Some(i) = raw.as_u64() {
        return (i <= 1).then_some(i as u8);
    }
    match raw.as_str()?.trim() {
        "0" => Some(0),
        "1" => Some(1),
        _ => None,
    }
}

/// One answer pair submitted to the win-rate evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnswerPair {
    pub query: String,
    pub candidate: String,
    pub reference: String,
}

/// Win-rate evaluation report with position-swap auditing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WinReport {
    /// Comparisons that produced a verdict, candidate at index 0.
    pub comparisons: Vec<Comparison>,
    pub discarded: usize,
    pub win_rate: f64,
    /// Of the audited pairs, how many swapped verdicts disagreed.
    pub audited: usize,
    pub swap_disagreements: usize,
}

/// Judge a batch of pairs. A seeded fraction of pairs is judged a second time
/// with positions swapped; disagreement between the two verdicts is reported,
/// not corrected — the metric itself uses only the unswapped verdicts.
pub fn run_win_eval(
    pairs: &[AnswerPair],
    judge: &dyn ChatBackend,
    swap_fraction: f64,
    seed: u64,
) -> Result<WinReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut comparisons = Vec::new();
    let mut discarded = 0usize;
    let mut audited = 0usize;
    let mut swap_disagreements = 0usize;

    for pair in pairs {
        let primary = judge_compare(&pair.query, &pair.candidate, &pair.reference, judge, false)?;
        let audit_this = rng.gen_bool(swap_fraction.clamp(0.0, 1.0));
        match primary {
            None => discarded += 1,
            Some(comparison) => {
                if audit_this {
                    audited += 1;
                    if let Some(swapped) =
                        judge_compare(&pair.query, &pair.candidate, &pair.reference, judge, true)?
                    {
                        if swapped.better_index != comparison.better_index {
                            swap_disagreements += 1;
                        }
                    }
                }
                comparisons.push(comparison);
            }
        }
    }

    let win_rate = if comparisons.is_empty() {
        0.0
    } else {
        win_rate(&comparisons, 0)?
    };
    Ok(WinReport {
        comparisons,
        discarded,
        win_rate,
        audited,
        swap_disagreements,
    })
}

/// Judge error recognition and correction over the three message segments.
/// Fail-closed to both-fail; an inconsistent verdict is coerced with a
/// warning.
pub fn judge_error_handling(
    initial_msgs: &str,
    wrong_msgs: &str,
    after_msgs: &str,
    judge: &dyn ChatBackend,
) -> Result<ErrorJudgement, EvalError> {
    let bindings = BTreeMap::from([
        ("initial_messages".to_string(), initial_msgs.to_string()),
        ("wrong_messages".to_string(), wrong_msgs.to_string()),
        ("after_messages".to_string(), after_msgs.to_string()),
    ]);
    let mut conv = render_prompt(PromptId::ErrorJudge, &bindings)?;
    let params = GenParams::judge();

    for attempt in 0..2 {
        let text = judge.complete(&conv, &params)?;
        if let Ok(value) = extract_json(&text) {
            let recognition = value
                .get("error_recognition")
                .and_then(|v| v.as_str())
                .and_then(parse_pass_fail);
            let correction = value
                .get("error_correction")
                .and_then(|v| v.as_str())
                .and_then(parse_pass_fail);
            if let (Some(recognition), Some(correction)) = (recognition, correction) {
                return Ok(ErrorJudgement::new(recognition, correction));
            }
        }
        if attempt == 0 {
            conv.push_assistant(text);
            conv.push_user(
                "Respond with a JSON object containing `error_recognition` and `error_correction`, each Pass or Fail.",
            );
        }
    }
    Ok(ErrorJudgement::fail_closed())
}

fn parse_pass_fail(s: &str) -> Option<PassFail> {
    if s.eq_ignore_ascii_case("pass") {
        Some(PassFail::Pass)
    } else if s.eq_ignore_ascii_case("fail") {
        Some(PassFail::Fail)
    } else {
        None
    }
}

// ---------------------------------------------------------------------------
// Error-case forging
// ---------------------------------------------------------------------------

/// Error-case scenario families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    /// Single-tool API-level errors against live-capable tools.
    I1,
    /// Single-tool API-level errors against simulator-served tools.
    I2,
    /// Multi-tool interaction errors injected into a verified trace.
    I3,
}

/// One forged error case.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefineCase {
    pub scenario: Scenario,
    pub query: Query,
    pub injected_prefix: Vec<Step>,
    pub wrong_action: ApiCall,
    pub wrong_observation: Observation,
    /// The verified correct action for this case; consumers use it to score
    /// corrections.
    pub reference_action: ApiCall,
}

/// Source material for forging one case.
pub enum RefineSource<'a> {
    /// A query plus the single tool it exercises (scenarios I1/I2).
    Single { query: &'a Query, tool: &'a ToolSpec },
    /// A verified instance whose trace gets perturbed (scenario I3).
    Instance(&'a VerifiedInstance),
}

const FORGE_ATTEMPTS: usize = 3;

/// Forge one error case.
///
/// I1/I2 ask the backend for a wrong/correct call pair with a deliberate
/// API-level error; I3 perturbs a random eligible step of the source trace
/// (tool swap within the instance's tool set, or a content mutation of one
/// kwarg). Every emitted case has `wrong != reference` and a reference action
/// that executes successfully; a case that cannot be made solvable within
/// three attempts is skipped with an error.
pub fn forge_refine_case(
    scenario: Scenario,
    source: &RefineSource<'_>,
    rng_seed: u64,
    backend: &dyn ChatBackend,
    executor: &dyn CallExecutor,
) -> Result<RefineCase, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut last_reason = String::from("no attempt made");
    for _ in 0..FORGE_ATTEMPTS {
        let candidate = match source {
            RefineSource::Single { query, tool } => {
                forge_single(scenario, query, tool, backend, executor)
            }
            RefineSource::Instance(instance) => forge_injected(instance, &mut rng, executor),
        };
        match candidate {
            Ok(case) => return Ok(case),
            Err(reason) => last_reason = reason,
        }
    }
    Err(EvalError::UnsolvableCase {
        attempts: FORGE_ATTEMPTS,
        reason: last_reason,
    })
}

fn forge_single(
    scenario: Scenario,
    query: &Query,
    tool: &ToolSpec,
    backend: &dyn ChatBackend,
    executor: &dyn CallExecutor,
) -> Result<RefineCase, String> {
    let mut conv = Conversation::new(
        Role::System,
        "You are constructing error cases for a tool-reflection benchmark. Given a query and one API document, produce a deliberately wrong call (an API-level error such as a missing required parameter, a wrong parameter name, a type mismatch, or a wrong API name) and the correct call that solves the query. Respond with a JSON object: {\"wrong_call\": \"name(kw=value, ...)\", \"correct_call\": \"name(kw=value, ...)\"}.",
    );
    conv.push_user(format!(
        "Query: {}\nAPI document:\n{}",
        query.text,
        tool.doc_text()
    ));
    let text = backend
        .complete(&conv, &GenParams::agent(0.0))
        .map_err(|e| e.to_string())?;
    let value = extract_json(&text).map_err(|e| e.to_string())?;
    let wrong_src = value
        .get("wrong_call")
        .and_then(|v| v.as_str())
        .ok_or("missing wrong_call")?;
    let correct_src = value
        .get("correct_call")
        .and_then(|v| v.as_str())
        .ok_or("missing correct_call")?;
    let wrong = first_call(wrong_src)?;
    let correct = first_call(correct_src)?;
    if wrong.parse_eq(&correct) {
        return Err("wrong call equals correct call".into());
    }

    let reference_obs = execute(executor, &correct)?;
    if !reference_obs.is_success() {
        return Err(format!(
            "reference call failed: {}",
            reference_obs.error
        ));
    }
    let wrong_observation = execute(executor, &wrong)?;
    if wrong_observation.is_success() {
        // Single-tool scenarios target API-level errors, which must surface
        // in the envelope.
        return Err("wrong call did not produce an API-level error".into());
    }
    Ok(RefineCase {
        scenario,
        query: query.clone(),
        injected_prefix: Vec::new(),
        wrong_action: wrong,
        wrong_observation,
        reference_action: correct,
    })
}

fn forge_injected(
    instance: &VerifiedInstance,
    rng: &mut ChaCha8Rng,
    executor: &dyn CallExecutor,
) -> Result<RefineCase, String> {
    // Perturbable steps need a nonempty prefix, so step 0 is excluded.
    let action_steps: Vec<usize> = instance
        .trace
        .action_step_indices()
        .into_iter()
        .filter(|&t| t > 0)
        .collect();
    let &t = action_steps
        .as_slice()
        .choose(rng)
        .ok_or("no eligible step with a nonempty prefix")?;
    let reference = instance.trace.steps()[t].calls()[0].clone();

    let wrong = perturb_call(&reference, &instance.tools, rng)?;
    if wrong.parse_eq(&reference) {
        return Err("perturbation reproduced the original action".into());
    }
    let reference_obs = execute(executor, &reference)?;
    if !reference_obs.is_success() {
        return Err(format!("reference call failed: {}", reference_obs.error));
    }
    let wrong_observation = execute(executor, &wrong)?;
    Ok(RefineCase {
        scenario: Scenario::I3,
        query: instance.query.clone(),
        injected_prefix: instance.trace.steps()[..t].to_vec(),
        wrong_action: wrong,
        wrong_observation,
        reference_action: reference,
    })
}

/// Mutate a call: either swap the tool for another from the set, or mutate
/// one kwarg's content.
fn perturb_call(
    reference: &ApiCall,
    tools: &[ToolSpec],
    rng: &mut ChaCha8Rng,
) -> Result<ApiCall, String> {
    let other_tools: Vec<&ToolSpec> = tools
        .iter()
        .filter(|t| t.name() != reference.tool_name)
        .collect();
    let swap_tool = !other_tools.is_empty() && (reference.kwargs.is_empty() || rng.gen_bool(0.5));
    if swap_tool {
        let tool = other_tools.choose(rng).expect("nonempty");
        return ApiCall::new(tool.name().to_string(), reference.kwargs.clone())
            .map_err(|e| e.to_string());
    }
    let keys: Vec<&String> = reference.kwargs.keys().collect();
    let key = keys.choose(rng).ok_or("no kwargs to mutate")?.to_string();
    let mut kwargs = reference.kwargs.clone();
    let mutated = match &kwargs[&key] {
        Literal::Int(_) => Literal::Int(12345),
        Literal::Float(x) => Literal::Float(x + 9999.0),
        Literal::Str(s) => Literal::Str(format!("{s}_wrong")),
        Literal::Bool(b) => Literal::Bool(!b),
        other => other.clone(),
    };
    kwargs.insert(key, mutated);
    ApiCall::new(reference.tool_name.clone(), kwargs).map_err(|e| e.to_string())
}

fn first_call(src: &str) -> Result<ApiCall, String> {
    parse_call_expr(src)
        .map_err(|e| e.to_string())?
        .into_iter()
        .next()
        .ok_or_else(|| "no call in expression".into())
}

fn execute(executor: &dyn CallExecutor, call: &ApiCall) -> Result<Observation, String> {
    match executor.execute(call) {
        Ok(obs) => Ok(obs),
        Err(TransportError(reason)) => Err(format!("transport failure: {reason}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ScriptEntry, ScriptedBackend};
    use crate::hub::{ApiRegistry, SimExecutor, SimMode};
    use crate::model::{
        validate_tool_spec, Group, InstanceVerdict, StepValidity, Terminal, Trace,
    };
    use serde_json::json;
    use std::collections::BTreeMap as Map;
    use std::sync::Arc;

    #[test]
    fn pass_rate_matches_formula() {
        assert_eq!(
            pass_rate(&[AnswerStatus::Pass, AnswerStatus::Pass]).unwrap(),
            1.0
        );
        assert_eq!(
            pass_rate(&[AnswerStatus::Pass, AnswerStatus::Unsure, AnswerStatus::Fail]).unwrap(),
            0.5
        );
        assert_eq!(
            pass_rate(&[AnswerStatus::Fail; 4]).unwrap(),
            0.0
        );
        assert!(matches!(pass_rate(&[]), Err(EvalError::EmptyInput)));
    }

    #[test]
    fn win_rate_counts_wins() {
        let cmp = |i: u8| Comparison {
            better_index: i,
            rationale: String::new(),
        };
        let comparisons = vec![cmp(0), cmp(1), cmp(0)];
        assert!((win_rate(&comparisons, 0).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(win_rate(&[cmp(0), cmp(0)], 0).unwrap(), 1.0);
        assert!(matches!(win_rate(&[], 0), Err(EvalError::EmptyInput)));
    }

    #[test]
    fn err_ecr_formulas() {
        use PassFail::*;
        let j = |r, c| ErrorJudgement::new(r, c);
        let judged = vec![j(Pass, Pass), j(Pass, Fail), j(Fail, Fail), j(Fail, Fail)];
        let (err, ecr) = err_ecr(&judged).unwrap();
        assert_eq!(err, 0.5);
        assert_eq!(ecr, 0.25);
        assert!(ecr <= err);
    }

    #[test]
    fn inconsistent_judgement_is_coerced() {
        let j = ErrorJudgement::new(PassFail::Fail, PassFail::Pass);
        assert_eq!(j.recognition, PassFail::Fail);
        assert_eq!(j.correction, PassFail::Fail);
    }

    fn call(name: &str, kwargs: &[(&str, Literal)]) -> ApiCall {
        let map: Map<String, Literal> = kwargs
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect();
        ApiCall::new(name, map).unwrap()
    }

    fn trace_with_calls(counts: &[usize]) -> Trace {
        let steps: Vec<Step> = counts
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let calls: Vec<ApiCall> = (0..n)
                    .map(|j| call("f", &[("x", Literal::Int((i * 10 + j) as i64))]))
                    .collect();
                let obs = vec![Observation::success(json!(1)); n];
                Step::new(format!("s{i}"), calls, obs).unwrap()
            })
            .collect();
        Trace::new(steps, Terminal::Truncated).unwrap()
    }

    #[test]
    fn avg_api_calls_is_the_mean_of_totals() {
        let t3 = trace_with_calls(&[1, 1, 1]);
        let t6 = trace_with_calls(&[2, 2, 1, 1]);
        assert_eq!(t3.total_calls(), 3);
        assert_eq!(t6.total_calls(), 6);
        assert_eq!(avg_api_calls(&[t3, t6]).unwrap(), 4.5);
    }

    #[test]
    fn judge_pass_parses_and_fails_closed() {
        let judge = ScriptedBackend::new(
            "judge",
            vec![ScriptEntry::new(
                r#"{"content": "complete", "answer_status": "Pass"}"#,
            )],
        );
        let result = judge_pass("q", "a", "chain", &judge).unwrap();
        assert_eq!(result.status, AnswerStatus::Pass);

        let judge = ScriptedBackend::always("judge", "no json");
        let result = judge_pass("q", "a", "chain", &judge).unwrap();
        assert_eq!(result.status, AnswerStatus::Unsure);
    }

    #[test]
    fn judge_compare_maps_swapped_index_back() {
        let judge = ScriptedBackend::always(
            "judge",
            r#"{"content": "first is better", "better_answer_index": "0"}"#,
        );
        let plain = judge_compare("q", "A", "B", &judge, false).unwrap().unwrap();
        assert_eq!(plain.better_index, 0);
        let swapped = judge_compare("q", "A", "B", &judge, true).unwrap().unwrap();
        // Judge picked presented index 0, which is the reference when swapped.
        assert_eq!(swapped.better_index, 1);
    }

    #[test]
    fn malformed_comparison_is_discarded() {
        let judge = ScriptedBackend::always("judge", "not json");
        assert!(judge_compare("q", "A", "B", &judge, false).unwrap().is_none());
    }

    #[test]
    fn win_eval_reports_swap_disagreement() {
        // Judge always prefers presented index 0: a pure position bias.
        let judge = ScriptedBackend::always(
            "judge",
            r#"{"content": "", "better_answer_index": "0"}"#,
        );
        let pairs: Vec<AnswerPair> = (0..8)
            .map(|i| AnswerPair {
                query: format!("q{i}"),
                candidate: "A".into(),
                reference: "B".into(),
            })
            .collect();
        let report = run_win_eval(&pairs, &judge, 1.0, 3).unwrap();
        assert_eq!(report.comparisons.len(), 8);
        assert_eq!(report.audited, 8);
        assert_eq!(report.swap_disagreements, 8);
        assert_eq!(report.win_rate, 1.0);
    }

    #[test]
    fn error_judge_parses_cases_from_rubric() {
        let judge = ScriptedBackend::new(
            "judge",
            vec![ScriptEntry::new(
                r#"{"content": "switched to order_id and succeeded", "error_recognition": "Pass", "error_correction": "Pass"}"#,
            )],
        );
        let j = judge_error_handling("init", "wrong", "after", &judge).unwrap();
        assert_eq!(j.recognition, PassFail::Pass);
        assert_eq!(j.correction, PassFail::Pass);

        let judge = ScriptedBackend::new(
            "judge",
            vec![ScriptEntry::new(
                r#"{"error_recognition": "Pass", "error_correction": "Fail"}"#,
            )],
        );
        let j = judge_error_handling("init", "wrong", "after", &judge).unwrap();
        assert_eq!(j.recognition, PassFail::Pass);
        assert_eq!(j.correction, PassFail::Fail);

        let judge = ScriptedBackend::always("judge", "###");
        let j = judge_error_handling("init", "wrong", "after", &judge).unwrap();
        assert_eq!(j, ErrorJudgement::fail_closed());

        let judge = ScriptedBackend::new(
            "judge",
            vec![ScriptEntry::new(
                r#"{"error_recognition": "Fail", "error_correction": "Pass"}"#,
            )],
        );
        let j = judge_error_handling("init", "wrong", "after", &judge).unwrap();
        assert_eq!(j, ErrorJudgement::fail_closed());
    }

    fn order_tools() -> Vec<ToolSpec> {
        vec![
            validate_tool_spec(&json!({
                "name": "get_order_for_onboarding_project_v3",
                "description": "Order detail by id.",
                "parameters": {"order_id": {"type": "integer", "description": ""}},
                "required": ["order_id"],
                "origin": "simulated"
            }))
            .unwrap(),
            validate_tool_spec(&json!({
                "name": "get_user_orders_for_onboarding_project_v3",
                "description": "Order history for a user.",
                "parameters": {"user_id": {"type": "string", "description": ""}},
                "required": ["user_id"],
                "origin": "simulated"
            }))
            .unwrap(),
        ]
    }

    fn order_executor() -> SimExecutor {
        SimExecutor::new(
            Arc::new(ApiRegistry::from_specs(order_tools())),
            SimMode::Deterministic(7),
        )
    }

    #[test]
    fn forge_single_case_with_parameter_name_error() {
        let backend = ScriptedBackend::new(
            "gen",
            vec![ScriptEntry::new(
                r#"{"wrong_call": "get_order_for_onboarding_project_v3(is_id=1234)", "correct_call": "get_order_for_onboarding_project_v3(order_id=1234)"}"#,
            )],
        );
        let query = Query::new(
            "q_order",
            "Fetch the details of my recent order 1234.",
            Group::G1,
            vec!["get_order_for_onboarding_project_v3".into()],
        )
        .unwrap();
        let tools = order_tools();
        let case = forge_refine_case(
            Scenario::I1,
            &RefineSource::Single {
                query: &query,
                tool: &tools[0],
            },
            11,
            &backend,
            &order_executor(),
        )
        .unwrap();
        assert!(!case.wrong_action.parse_eq(&case.reference_action));
        assert!(case.wrong_observation.error.contains("is_id"));
        assert!(case.injected_prefix.is_empty());
    }

    #[test]
    fn forge_retries_then_skips_unsolvable() {
        // The generated pair is identical, so every attempt fails.
        let backend = ScriptedBackend::always(
            "gen",
            r#"{"wrong_call": "get_order_for_onboarding_project_v3(order_id=1)", "correct_call": "get_order_for_onboarding_project_v3(order_id=1)"}"#,
        );
        let query = Query::new(
            "q",
            "order",
            Group::G1,
            vec!["get_order_for_onboarding_project_v3".into()],
        )
        .unwrap();
        let tools = order_tools();
        let err = forge_refine_case(
            Scenario::I1,
            &RefineSource::Single {
                query: &query,
                tool: &tools[0],
            },
            11,
            &backend,
            &order_executor(),
        )
        .unwrap_err();
        assert!(matches!(err, EvalError::UnsolvableCase { attempts: 3, .. }));
    }

    #[test]
    fn forge_injected_perturbs_a_late_step() {
        let steps = vec![
            Step::new(
                "list",
                vec![call("get_user_orders_for_onboarding_project_v3", &[("user_id", Literal::Str("u1".into()))])],
                vec![Observation::success(json!({"orders": [1234]}))],
            )
            .unwrap(),
            Step::new(
                "detail",
                vec![call("get_order_for_onboarding_project_v3", &[("order_id", Literal::Int(1234))])],
                vec![Observation::success(json!({"status": "Shipped"}))],
            )
            .unwrap(),
            Step::new("answer", vec![], vec![]).unwrap(),
        ];
        let instance = VerifiedInstance::new(
            Query::new(
                "q_orders",
                "Fetch my orders and the detail of the first one.",
                Group::G2,
                vec![
                    "get_user_orders_for_onboarding_project_v3".into(),
                    "get_order_for_onboarding_project_v3".into(),
                ],
            )
            .unwrap(),
            order_tools(),
            Trace::new(steps, Terminal::FinalAnswer("Shipped".into())).unwrap(),
            InstanceVerdict {
                answer_status: AnswerStatus::Pass,
                all_steps_valid: StepValidity::Yes,
            },
        )
        .unwrap();
        let backend = ScriptedBackend::new("unused", vec![]);
        let case = forge_refine_case(
            Scenario::I3,
            &RefineSource::Instance(&instance),
            99,
            &backend,
            &order_executor(),
        )
        .unwrap();
        assert_eq!(case.scenario, Scenario::I3);
        assert!(!case.injected_prefix.is_empty());
        assert!(!case.wrong_action.parse_eq(&case.reference_action));
    }
}
