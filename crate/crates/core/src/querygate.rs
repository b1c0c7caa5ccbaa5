//! Query feasibility gate: a judged solvability decision plus a 1-10 quality
//! score per query, and batch filtering with retention statistics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::gateway::{extract_json, render_prompt, ChatBackend, GatewayError, GenParams, PromptId};
use crate::model::{Group, Query, Solvability, ToolSpec};

#[derive(Debug, thiserror::Error)]
pub enum QueryGateError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("batch of {batch} queries has {verdicts} verdicts")]
    LengthMismatch { batch: usize, verdicts: usize },
}

/// Default retention threshold: queries scoring 8-10 are kept.
pub const DEFAULT_QUALITY_THRESHOLD: u8 = 8;

/// Judged feasibility and quality of one query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryVerdict {
    pub decision: Solvability,
    pub quality_score: u8,
    pub rationale: String,
}

impl QueryVerdict {
    /// Fail-closed verdict used when the judge output stays malformed.
    pub fn fail_closed(rationale: impl Into<String>) -> QueryVerdict {
        QueryVerdict {
            decision: Solvability::Unsolvable,
            quality_score: 1,
            rationale: rationale.into(),
        }
    }
}

/// Counts for one slice of a filtered batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct FilterCounts {
    pub total: usize,
    pub solvable: usize,
    pub retained: usize,
    pub retention_rate: f64,
}

impl FilterCounts {
    fn finish(mut self) -> FilterCounts {
        self.retention_rate = if self.total == 0 {
            0.0
        } else {
            self.retained as f64 / self.total as f64
        };
        self
    }
}

/// Batch retention statistics, overall and per group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterStats {
    pub total: usize,
    pub solvable: usize,
    pub retained: usize,
    pub retention_rate: f64,
    pub per_group: BTreeMap<Group, FilterCounts>,
}

/// Ask the judge whether a query is solvable and how well-formed it is.
///
/// Malformed output triggers one re-ask, then the query is marked Unsolvable
/// with score 1 (fail-closed). Non-integer scores are floored; out-of-range
/// scores count as malformed.
pub fn assess_query(
    query: &Query,
    tools: &[ToolSpec],
    backend: &dyn ChatBackend,
) -> Result<QueryVerdict, QueryGateError> {
    let tool_docs = tools
        .iter()
        .map(|t| t.doc_text())
        .collect::<Vec<_>>()
        .join("\n");
    let bindings = BTreeMap::from([
        ("query".to_string(), query.text.clone()),
        ("tools".to_string(), tool_docs),
    ]);
    let mut conv = render_prompt(PromptId::QueryVerify, &bindings)?;
    let params = GenParams::judge();

    for attempt in 0..2 {
        let text = backend.complete(&conv, &params)?;
        if let Some(verdict) = parse_verdict(&text) {
            return Ok(verdict);
        }
        if attempt == 0 {
            conv.push_assistant(text);
            conv.push_user(
                "Respond with a JSON object containing `decision` (\"Solvable\" or \"Unsolvable\") and `quality_score` (an integer from 1 to 10).",
            );
        } else {
            tracing::warn!(query = %query.id, "malformed query verdict after re-ask; failing closed");
        }
    }
    Ok(QueryVerdict::fail_closed(
        "judge output malformed after re-ask",
    ))
}

fn parse_verdict(text: &str) -> Option<QueryVerdict> {
    let value = extract_json(text).ok()?;
    let decision = match value.get("decision")?.as_str()? {
        d if d.eq_ignore_ascii_case("solvable") => Solvability::Solvable,
        d if d.eq_ignore_ascii_case("unsolvable") => Solvability::Unsolvable,
        _ => return None,
    };
    let score_raw = value.get("quality_score")?;
    let floored = if let Some(i) = score_raw.as_i64() {
        i
    } else {
        let f = score_raw.as_f64()?;
        f.floor() as i64
    };
    if !(1..=10).contains(&floored) {
        return None;
    }
    let rationale = value
        .get("content")
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .unwrap_or_else(|| text.trim().to_string());
    Some(QueryVerdict {
        decision,
        quality_score: floored as u8,
        rationale,
    })
}

/// Keep queries judged Solvable with `quality_score >= threshold`, preserving
/// batch order, and compute retention statistics overall and per group.
pub fn filter_queries(
    batch: &[Query],
    verdicts: &[QueryVerdict],
    threshold: u8,
) -> Result<(Vec<Query>, FilterStats), QueryGateError> {
    if batch.len() != verdicts.len() {
        return Err(QueryGateError::LengthMismatch {
            batch: batch.len(),
            verdicts: verdicts.len(),
        });
    }
    let mut retained = Vec::new();
    let mut overall = FilterCounts::default();
    let mut per_group: BTreeMap<Group, FilterCounts> = BTreeMap::new();

    for (query, verdict) in batch.iter().zip(verdicts) {
        let group = per_group.entry(query.group).or_default();
        overall.total += 1;
        group.total += 1;
        let solvable = verdict.decision == Solvability::Solvable;
        if solvable {
            overall.solvable += 1;
            group.solvable += 1;
        }
        if solvable && verdict.quality_score >= threshold {
            overall.retained += 1;
            group.retained += 1;
            retained.push(query.clone());
        }
    }

    let overall = overall.finish();
    let stats = FilterStats {
        total: overall.total,
        solvable: overall.solvable,
        retained: overall.retained,
        retention_rate: overall.retention_rate,
        per_group: per_group
            .into_iter()
            .map(|(g, c)| (g, c.finish()))
            .collect(),
    };
    Ok((retained, stats))
}
