//! SFT-record export: every verified instance contributes one record per
//! step (context = everything before the step, target = the step's assistant
//! turn), every reflection instance contributes one record, and the two
//! sources are interleaved at a configured ratio under a seeded shuffle.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsl::render_step_assistant;
use crate::forge::{episode_conversation, observation_feedback};
use crate::gateway::{Conversation, GatewayError};
use crate::model::{canonical_json, ReflectionInstance, Terminal, VerifiedInstance};

/// Where a supervised record came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SftSource {
    /// Step `step` of a verified instance.
    V { step: usize },
    /// A reflection instance.
    R,
}

/// One supervised training record: the conversation context and the target
/// assistant turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub messages: Conversation,
    pub target: String,
    pub source: SftSource,
}

/// Target text for step `i` of a trace: the assistant turn, with the final
/// answer (or give-up) tag appended on the closing step.
fn step_target(instance: &VerifiedInstance, i: usize) -> String {
    let step = &instance.trace.steps()[i];
    let mut target = render_step_assistant(step);
    if i + 1 == instance.trace.steps().len() {
        match instance.trace.terminal() {
            Terminal::FinalAnswer(text) => {
                target.push_str(&format!("\n<final_answer>{text}</final_answer>"));
            }
            Terminal::GivenUp => target.push_str("\n<given_up></given_up>"),
            Terminal::Truncated => {}
        }
    }
    target
}

fn v_records(instance: &VerifiedInstance) -> Result<Vec<SftRecord>, GatewayError> {
    let mut conv = episode_conversation(&instance.query, &instance.tools)?;
    let mut records = Vec::new();
    for (i, step) in instance.trace.steps().iter().enumerate() {
        records.push(SftRecord {
            messages: conv.clone(),
            target: step_target(instance, i),
            source: SftSource::V { step: i },
        });
        conv.push_assistant(render_step_assistant(step));
        if !step.calls().is_empty() {
            conv.push_user(observation_feedback(step.observations()));
        }
    }
    Ok(records)
}

fn r_record(instance: &ReflectionInstance) -> Result<SftRecord, GatewayError> {
    let mut conv = episode_conversation(&instance.query, &instance.tools)?;
    for step in &instance.prefix {
        conv.push_assistant(render_step_assistant(step));
        if !step.calls().is_empty() {
            conv.push_user(observation_feedback(step.observations()));
        }
    }
    conv.push_assistant(format!(
        "<execute>\nprint({})\n</execute>",
        instance.wrong_action
    ));
    conv.push_user(canonical_json(&instance.wrong_observation));
    Ok(SftRecord {
        messages: conv,
        target: instance.reflection.clone(),
        source: SftSource::R,
    })
}

/// Export supervised records from both datasets.
///
/// The record-count law holds unconditionally: the output length is the sum
/// of step counts over `verified` plus `reflections.len()`. Records are
/// shuffled per source under the seed, then interleaved so that every
/// reflection record follows `mix_ratio` verified records while both supplies
/// last; leftovers of whichever side remains are appended in order.
pub fn export_sft(
    verified: &[VerifiedInstance],
    reflections: &[ReflectionInstance],
    mix_ratio: f64,
    seed: u64,
) -> Result<Vec<SftRecord>, GatewayError> {
    assert!(mix_ratio > 0.0, "mix_ratio must be positive");
    let mut v: Vec<SftRecord> = Vec::new();
    for instance in verified {
        v.extend(v_records(instance)?);
    }
    let mut r: Vec<SftRecord> = reflections
        .iter()
        .map(r_record)
        .collect::<Result<_, _>>()?;

    if r.is_empty() && !v.is_empty() {
        tracing::warn!("no reflection records; emitting verified records only");
    }
    if v.is_empty() && !r.is_empty() {
        tracing::warn!(
            "mix ratio {mix_ratio} wants verified records but none exist; emitting reflections only"
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    v.shuffle(&mut rng);
    r.shuffle(&mut rng);

    let mut out = Vec::with_capacity(v.len() + r.len());
    let mut v_iter = v.into_iter();
    let mut r_iter = r.into_iter();
    let mut v_emitted = 0usize;
    let mut r_emitted = 0usize;
    loop {
        let want_v = (v_emitted as f64) < mix_ratio * (r_emitted + 1) as f64;
        let next = if want_v {
            v_iter.next().map(|rec| (rec, true)).or_else(|| r_iter.next().map(|rec| (rec, false)))
        } else {
            r_iter.next().map(|rec| (rec, false)).or_else(|| v_iter.next().map(|rec| (rec, true)))
        };
        match next {
            None => break,
            Some((rec, is_v)) => {
                if is_v {
                    v_emitted += 1;
                } else {
                    r_emitted += 1;
                }
                out.push(rec);
            }
        }
    }
    Ok(out)
}
