//! Shared generators for property and acceptance tests.

use std::collections::BTreeMap;

use rand::Rng;
use serde_json::json;
use toolforge_core::model::{ApiCall, Literal, Observation, Step, Terminal, Trace};

const IDENT_CHARS: &[u8] = b"abcdefghijklmnopqrstuvwxyz_";
const TEXT_CHARS: &[u8] = b"abcdefghijklmnopqrstuvwxyz ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 .,:;!?-_()";

pub fn ident<R: Rng>(rng: &mut R, max_len: usize) -> String {
    let len = rng.gen_range(1..=max_len);
    let mut out = String::new();
    for _ in 0..len {
        out.push(IDENT_CHARS[rng.gen_range(0..IDENT_CHARS.len())] as char);
    }
    out
}

/// Prose that survives tag scanning and body trimming unchanged.
pub fn safe_text<R: Rng>(rng: &mut R, max_len: usize) -> String {
    let len = rng.gen_range(1..=max_len);
    let mut out = String::new();
    for _ in 0..len {
        out.push(TEXT_CHARS[rng.gen_range(0..TEXT_CHARS.len())] as char);
    }
    out.trim().to_string() + "x"
}

/// A string literal value exercising the escape paths.
fn tricky_string<R: Rng>(rng: &mut R) -> String {
    let specials = ["\"", "\\", "\n", "\t", "'", "é", "北", " "];
    let mut out = String::new();
    for _ in 0..rng.gen_range(0..8) {
        if rng.gen_bool(0.3) {
            out.push_str(specials[rng.gen_range(0..specials.len())]);
        } else {
            out.push(TEXT_CHARS[rng.gen_range(0..TEXT_CHARS.len())] as char);
        }
    }
    out
}

fn scalar<R: Rng>(rng: &mut R) -> Literal {
    match rng.gen_range(0..5) {
        0 => Literal::Null,
        1 => Literal::Bool(rng.gen()),
        2 => Literal::Int(rng.gen_range(-1_000_000..1_000_000)),
        // Eighths print without exponents and round-trip exactly.
        3 => Literal::Float(rng.gen_range(-8_000..8_000) as f64 / 8.0),
        _ => Literal::Str(tricky_string(rng)),
    }
}

fn homogeneous_list<R: Rng>(rng: &mut R) -> Literal {
    let len = rng.gen_range(0..4);
    let kind = rng.gen_range(0..4);
    let items = (0..len)
        .map(|_| match kind {
            0 => Literal::Bool(rng.gen()),
            1 => Literal::Int(rng.gen_range(-100..100)),
            2 => Literal::Float(rng.gen_range(-80..80) as f64 / 8.0),
            _ => Literal::Str(tricky_string(rng)),
        })
        .collect();
    Literal::List(items)
}

pub fn literal<R: Rng>(rng: &mut R) -> Literal {
    match rng.gen_range(0..8) {
        0..=5 => scalar(rng),
        6 => homogeneous_list(rng),
        _ => {
            let mut entries = BTreeMap::new();
            for _ in 0..rng.gen_range(0..3) {
                entries.insert(ident(rng, 6), scalar(rng));
            }
            Literal::Map(entries)
        }
    }
}

pub fn api_call<R: Rng>(rng: &mut R) -> ApiCall {
    let mut kwargs = BTreeMap::new();
    for _ in 0..rng.gen_range(0..4) {
        kwargs.insert(ident(rng, 8), literal(rng));
    }
    ApiCall::new(ident(rng, 12), kwargs).expect("generated call is valid")
}

fn observation<R: Rng>(rng: &mut R) -> Observation {
    if rng.gen_bool(0.2) {
        Observation::failure(safe_text(rng, 30))
    } else {
        Observation::success(json!({
            "value": safe_text(rng, 20),
            "n": rng.gen_range(0..1000),
        }))
    }
}

/// A structurally valid random trace.
pub fn random_trace<R: Rng>(rng: &mut R) -> Trace {
    let action_steps = rng.gen_range(0..6);
    let mut steps = Vec::new();
    for _ in 0..action_steps {
        let call_count = rng.gen_range(1..=2);
        let calls: Vec<ApiCall> = (0..call_count).map(|_| api_call(rng)).collect();
        let observations: Vec<Observation> = (0..call_count).map(|_| observation(rng)).collect();
        steps.push(Step::new(safe_text(rng, 60), calls, observations).expect("valid step"));
    }
    let terminal = match rng.gen_range(0..3) {
        0 => Terminal::FinalAnswer(safe_text(rng, 80)),
        1 => Terminal::GivenUp,
        _ => Terminal::Truncated,
    };
    // Most traces close with a final zero-call thought; a terminal directly
    // after an execute block and a dangling thought at truncation are both
    // legal shapes.
    if rng.gen_bool(0.7) {
        steps.push(Step::new(safe_text(rng, 40), vec![], vec![]).expect("closer"));
    }
    Trace::new(steps, terminal).expect("generated trace is valid")
}
