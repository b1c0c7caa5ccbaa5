//! Parser and renderer for the tagged trajectory language and the restricted
//! call-expression grammar used inside execute blocks.
//!
//! The tag set is `<thought>`, `<execute>`, `<final_answer>`, `<given_up>`.
//! Execute bodies hold statements of the form `print(name(kw=literal, ...))`
//! (the `print` wrapper is optional); kwargs are literals only — no positional
//! arguments, no nested calls, no arithmetic. `print("...")` statements are
//! accepted as output markers and produce no call.

use std::collections::BTreeMap;

use crate::model::{ApiCall, Literal, ModelError, Observation, Step, Terminal, Trace};

/// Errors raised by tokenizing, parsing, or assembling trajectory documents.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DslError {
    #[error("unclosed <{0}> tag at byte {1}")]
    UnclosedTag(BlockKind, usize),
    #[error("nested <{0}> tag at byte {1}")]
    NestedTag(BlockKind, usize),
    #[error("parse error at byte {offset}: expected {expected}")]
    ParseError { offset: usize, expected: String },
    #[error("too many calls in one block: {count} (maximum {max})")]
    TooManyCalls { count: usize, max: usize },
    #[error("execute block at byte {0} is not preceded by a thought")]
    OrphanExecute(usize),
    #[error("thought at byte {0} is followed by another thought instead of an action")]
    UnpairedThought(usize),
    #[error("blocks found after the terminal at byte {0}")]
    TrailingBlocks(usize),
    #[error("observation lists do not match execute blocks: expected {expected}, got {got}")]
    DanglingObservations { expected: usize, got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// The four recognized block kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Thought,
    Execute,
    FinalAnswer,
    GivenUp,
}

impl BlockKind {
    fn tag(&self) -> &'static str {
        match self {
            BlockKind::Thought => "thought",
            BlockKind::Execute => "execute",
            BlockKind::FinalAnswer => "final_answer",
            BlockKind::GivenUp => "given_up",
        }
    }
}

impl std::fmt::Display for BlockKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// One tagged region of a trajectory document.
#[derive(Debug, Clone, PartialEq)]
pub struct RawBlock {
    pub kind: BlockKind,
    pub body: String,
    /// Byte offsets of the full tagged region, open tag through close tag.
    pub span: (usize, usize),
}

const KINDS: [BlockKind; 4] = [
    BlockKind::Thought,
    BlockKind::Execute,
    BlockKind::FinalAnswer,
    BlockKind::GivenUp,
];

/// Split a document into its tagged blocks, in order.
///
/// Unknown tags and prose between tags are ignored. Nested same-kind tags and
/// unterminated tags are rejected. Total over arbitrary UTF-8 input.
pub fn tokenize_blocks(text: &str) -> Result<Vec<RawBlock>, DslError> {
    let mut blocks = Vec::new();
    let mut pos = 0;
    while pos < text.len() {
        let mut next: Option<(usize, BlockKind)> = None;
        for kind in KINDS {
            let open = format!("<{}>", kind.tag());
            if let Some(found) = text[pos..].find(&open) {
                let at = pos + found;
                if next.is_none_or(|(best, _)| at < best) {
                    next = Some((at, kind));
                }
            }
        }
        let Some((open_at, kind)) = next else { break };
        let open_tag = format!("<{}>", kind.tag());
        let close_tag = format!("</{}>", kind.tag());
        let body_start = open_at + open_tag.len();
        let close_rel = text[body_start..]
            .find(&close_tag)
            .ok_or(DslError::UnclosedTag(kind, open_at))?;
        let body = &text[body_start..body_start + close_rel];
        if let Some(nested_rel) = body.find(&open_tag) {
            return Err(DslError::NestedTag(kind, body_start + nested_rel));
        }
        let end = body_start + close_rel + close_tag.len();
        blocks.push(RawBlock {
            kind,
            body: body.trim().to_string(),
            span: (open_at, end),
        });
        pos = end;
    }
    Ok(blocks)
}

// ---------------------------------------------------------------------------
// Call-expression grammar
// ---------------------------------------------------------------------------

/// Maximum calls allowed in one execute block.
pub const MAX_CALLS_PER_BLOCK: usize = 2;

/// Parse the statements of an execute block into calls, enforcing the
/// two-calls-per-block ceiling.
pub fn parse_call_expr(code: &str) -> Result<Vec<ApiCall>, DslError> {
    parse_call_expr_with_limit(code, MAX_CALLS_PER_BLOCK)
}

/// Parse call statements with an explicit call ceiling. Probe sampling uses a
/// ceiling of three, matching the example-generation contract.
pub fn parse_call_expr_with_limit(code: &str, max_calls: usize) -> Result<Vec<ApiCall>, DslError> {
    let calls = CallParser::new(code).parse_all()?;
    if calls.len() > max_calls {
        return Err(DslError::TooManyCalls {
            count: calls.len(),
            max: max_calls,
        });
    }
    Ok(calls)
}

struct CallParser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> CallParser<'a> {
    fn new(code: &'a str) -> Self {
        CallParser {
            src: code.as_bytes(),
            pos: 0,
        }
    }

    fn err<T>(&self, expected: impl Into<String>) -> Result<T, DslError> {
        Err(DslError::ParseError {
            offset: self.pos,
            expected: expected.into(),
        })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() {
            match self.src[self.pos] {
                b' ' | b'\t' | b'\r' | b'\n' | b';' => self.pos += 1,
                b'#' => {
                    while self.pos < self.src.len() && self.src[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, byte: u8, expected: &str) -> Result<(), DslError> {
        if self.peek() == Some(byte) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(expected)
        }
    }

    fn parse_all(&mut self) -> Result<Vec<ApiCall>, DslError> {
        let mut calls = Vec::new();
        loop {
            self.skip_ws();
            if self.pos >= self.src.len() {
                break;
            }
            if let Some(call) = self.parse_statement()? {
                calls.push(call);
            }
        }
        Ok(calls)
    }

    // statement := "print" "(" (call | STRING) ")" | call
    fn parse_statement(&mut self) -> Result<Option<ApiCall>, DslError> {
        let name = self.parse_ident()?;
        self.skip_ws();
        if name == "print" {
            self.eat(b'(', "`(` after print")?;
            self.skip_ws();
            match self.peek() {
                Some(b'"') | Some(b'\'') => {
                    // A printed string is an output marker, not a call.
                    self.parse_string()?;
                    self.skip_ws();
                    self.eat(b')', "`)` closing print")?;
                    Ok(None)
                }
                _ => {
                    let inner = self.parse_ident()?;
                    self.skip_ws();
                    let call = self.parse_call_tail(inner)?;
                    self.skip_ws();
                    self.eat(b')', "`)` closing print")?;
                    Ok(Some(call))
                }
            }
        } else {
            let call = self.parse_call_tail(name)?;
            Ok(Some(call))
        }
    }

    // call tail := "(" [kw "=" literal {"," kw "=" literal} [","]] ")"
    fn parse_call_tail(&mut self, name: String) -> Result<ApiCall, DslError> {
        self.eat(b'(', "`(` starting argument list")?;
        let mut kwargs: BTreeMap<String, Literal> = BTreeMap::new();
        self.skip_ws();
        if self.peek() == Some(b')') {
            self.pos += 1;
            return Ok(ApiCall::new(name, kwargs)?);
        }
        loop {
            self.skip_ws();
            let kw_offset = self.pos;
            if !matches!(self.peek(), Some(c) if c.is_ascii_alphabetic() || c == b'_') {
                return self.err("keyword argument name");
            }
            let kw = self.parse_ident()?;
            self.skip_ws();
            if self.peek() != Some(b'=') {
                // A bare identifier or literal here is a positional argument.
                return Err(DslError::ParseError {
                    offset: kw_offset,
                    expected: "keyword argument (`name=literal`), not a positional argument".into(),
                });
            }
            self.pos += 1;
            self.skip_ws();
            let value = self.parse_literal(0)?;
            if kwargs.contains_key(&kw) {
                return Err(DslError::ParseError {
                    offset: kw_offset,
                    expected: format!("unique keyword (duplicate `{kw}`)"),
                });
            }
            kwargs.insert(kw, value);
            self.skip_ws();
            match self.peek() {
                Some(b',') => {
                    self.pos += 1;
                    self.skip_ws();
                    if self.peek() == Some(b')') {
                        self.pos += 1;
                        break;
                    }
                }
                Some(b')') => {
                    self.pos += 1;
                    break;
                }
                _ => return self.err("`,` or `)` after argument"),
            }
        }
        Ok(ApiCall::new(name, kwargs)?)
    }

    fn parse_ident(&mut self) -> Result<String, DslError> {
        let start = self.pos;
        if !matches!(self.peek(), Some(c) if c.is_ascii_alphabetic() || c == b'_') {
            return self.err("identifier");
        }
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == b'_') {
            self.pos += 1;
        }
        Ok(std::str::from_utf8(&self.src[start..self.pos])
            .expect("identifier bytes are ASCII")
            .to_string())
    }

    fn parse_literal(&mut self, depth: usize) -> Result<Literal, DslError> {
        self.skip_ws();
        let lit = match self.peek() {
            Some(b'"') | Some(b'\'') => Literal::Str(self.parse_string()?),
            Some(c) if c == b'-' || c.is_ascii_digit() => self.parse_number()?,
            Some(b'[') => {
                if depth >= 1 {
                    return self.err("scalar literal (lists cannot nest)");
                }
                self.parse_list()?
            }
            Some(b'{') => {
                if depth >= 1 {
                    return self.err("scalar literal (maps cannot nest)");
                }
                self.parse_map()?
            }
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let word_offset = self.pos;
                let word = self.parse_ident()?;
                match word.as_str() {
                    "True" => Literal::Bool(true),
                    "False" => Literal::Bool(false),
                    "None" => Literal::Null,
                    _ => {
                        self.skip_ws();
                        let expected = if self.peek() == Some(b'(') {
                            "literal, not a nested call"
                        } else {
                            "literal"
                        };
                        return Err(DslError::ParseError {
                            offset: word_offset,
                            expected: expected.into(),
                        });
                    }
                }
            }
            _ => return self.err("literal"),
        };
        // Reject arithmetic and other operator continuations immediately.
        let save = self.pos;
        self.skip_ws();
        if matches!(self.peek(), Some(b'+') | Some(b'*') | Some(b'/') | Some(b'%')) {
            return self.err("`,` or `)` (expressions are not allowed)");
        }
        if self.peek() == Some(b'-') {
            return self.err("`,` or `)` (expressions are not allowed)");
        }
        self.pos = save;
        Ok(lit)
    }

    fn parse_string(&mut self) -> Result<String, DslError> {
        let quote = self.peek().ok_or(DslError::ParseError {
            offset: self.pos,
            expected: "string".into(),
        })?;
        self.pos += 1;
        let mut out = Vec::new();
        loop {
            match self.src.get(self.pos) {
                None => return self.err("closing quote"),
                Some(&b'\\') => {
                    self.pos += 1;
                    match self.src.get(self.pos) {
                        None => return self.err("escape character"),
                        Some(&b'n') => out.push(b'\n'),
                        Some(&b't') => out.push(b'\t'),
                        Some(&b'r') => out.push(b'\r'),
                        Some(&c) => out.push(c),
                    }
                    self.pos += 1;
                }
                Some(&c) if c == quote => {
                    self.pos += 1;
                    break;
                }
                Some(&c) => {
                    out.push(c);
                    self.pos += 1;
                }
            }
        }
        String::from_utf8(out).map_err(|_| DslError::ParseError {
            offset: self.pos,
            expected: "valid UTF-8 string".into(),
        })
    }

    fn parse_number(&mut self) -> Result<Literal, DslError> {
        let start = self.pos;
        if self.peek() == Some(b'-') {
            self.pos += 1;
        }
        let digits_start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos == digits_start {
            return self.err("digits");
        }
        let mut is_float = false;
        if self.peek() == Some(b'.') {
            is_float = true;
            self.pos += 1;
            let frac_start = self.pos;
            while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                self.pos += 1;
            }
            if self.pos == frac_start {
                return self.err("fractional digits");
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ASCII digits");
        if is_float {
            text.parse::<f64>()
                .map(Literal::Float)
                .or_else(|_| self.err("decimal number"))
        } else {
            text.parse::<i64>()
                .map(Literal::Int)
                .or_else(|_| self.err("integer in range"))
        }
    }

    fn parse_list(&mut self) -> Result<Literal, DslError> {
        let open_offset = self.pos;
        self.eat(b'[', "`[`")?;
        let mut items = Vec::new();
        self.skip_ws();
        if self.peek() == Some(b']') {
            self.pos += 1;
            return Ok(Literal::List(items));
        }
        loop {
            items.push(self.parse_literal(1)?);
            self.skip_ws();
            match self.peek() {
                Some(b',') => {
                    self.pos += 1;
                    self.skip_ws();
                    if self.peek() == Some(b']') {
                        self.pos += 1;
                        break;
                    }
                }
                Some(b']') => {
                    self.pos += 1;
                    break;
                }
                _ => return self.err("`,` or `]`"),
            }
        }
        let lit = Literal::List(items);
        lit.validate().map_err(|e| DslError::ParseError {
            offset: open_offset,
            expected: e.to_string(),
        })?;
        Ok(lit)
    }

    fn parse_map(&mut self) -> Result<Literal, DslError> {
        self.eat(b'{', "`{`")?;
        let mut entries = BTreeMap::new();
        self.skip_ws();
        if self.peek() == Some(b'}') {
            self.pos += 1;
            return Ok(Literal::Map(entries));
        }
        loop {
            self.skip_ws();
            if !matches!(self.peek(), Some(b'"') | Some(b'\'')) {
                return self.err("string key");
            }
            let key = self.parse_string()?;
            self.skip_ws();
            self.eat(b':', "`:` after map key")?;
            let value = self.parse_literal(1)?;
            entries.insert(key, value);
            self.skip_ws();
            match self.peek() {
                Some(b',') => {
                    self.pos += 1;
                    self.skip_ws();
                    if self.peek() == Some(b'}') {
                        self.pos += 1;
                        break;
                    }
                }
                Some(b'}') => {
                    self.pos += 1;
                    break;
                }
                _ => return self.err("`,` or `}`"),
            }
        }
        Ok(Literal::Map(entries))
    }
}

// ---------------------------------------------------------------------------
// Assembly and rendering
// ---------------------------------------------------------------------------

/// Pair tagged blocks with per-execute observation lists into a [`Trace`].
pub fn assemble_trace(
    blocks: &[RawBlock],
    observations: &[Vec<Observation>],
) -> Result<Trace, DslError> {
    let execute_count = blocks
        .iter()
        .filter(|b| b.kind == BlockKind::Execute)
        .count();
    if execute_count != observations.len() {
        return Err(DslError::DanglingObservations {
            expected: execute_count,
            got: observations.len(),
        });
    }

    let mut steps = Vec::new();
    let mut pending_thought: Option<String> = None;
    let mut obs_iter = observations.iter();
    let mut terminal: Option<Terminal> = None;

    for block in blocks {
        if terminal.is_some() {
            return Err(DslError::TrailingBlocks(block.span.0));
        }
        match block.kind {
            BlockKind::Thought => {
                if pending_thought.is_some() {
                    return Err(DslError::UnpairedThought(block.span.0));
                }
                pending_thought = Some(block.body.clone());
            }
            BlockKind::Execute => {
                let thought = pending_thought
                    .take()
                    .ok_or(DslError::OrphanExecute(block.span.0))?;
                let calls = parse_call_expr(&block.body)?;
                let obs = obs_iter.next().expect("counted above").clone();
                if obs.len() != calls.len() {
                    return Err(DslError::DanglingObservations {
                        expected: calls.len(),
                        got: obs.len(),
                    });
                }
                steps.push(Step::new(thought, calls, obs)?);
            }
            BlockKind::FinalAnswer => {
                if let Some(thought) = pending_thought.take() {
                    steps.push(Step::new(thought, vec![], vec![])?);
                }
                terminal = Some(Terminal::FinalAnswer(block.body.clone()));
            }
            BlockKind::GivenUp => {
                if let Some(thought) = pending_thought.take() {
                    steps.push(Step::new(thought, vec![], vec![])?);
                }
                terminal = Some(Terminal::GivenUp);
            }
        }
    }

    if let Some(thought) = pending_thought {
        steps.push(Step::new(thought, vec![], vec![])?);
    }
    Ok(Trace::new(steps, terminal.unwrap_or(Terminal::Truncated))?)
}

/// Render one step's assistant turn: the thought plus its execute block.
pub fn render_step_assistant(step: &Step) -> String {
    let mut out = format!("<thought>{}</thought>", step.thought());
    if !step.calls().is_empty() {
        out.push_str("\n<execute>\n");
        for call in step.calls() {
            out.push_str(&format!("print({call})\n"));
        }
        out.push_str("</execute>");
    }
    out
}

/// Render one step's observation feedback as fenced JSON envelopes.
pub fn render_step_observations(step: &Step) -> String {
    let mut out = String::new();
    for obs in step.observations() {
        out.push_str("```json\n");
        out.push_str(&crate::model::canonical_json(obs));
        out.push_str("\n```\n");
    }
    out
}

/// Render a whole trace as a tagged document.
///
/// Observations appear as fenced JSON after each execute block; the fences are
/// prose to the tokenizer, so `tokenize` + `assemble` over this output
/// reconstructs the trace exactly.
pub fn render_trace(trace: &Trace) -> String {
    let mut out = String::new();
    for step in trace.steps() {
        out.push_str(&render_step_assistant(step));
        out.push('\n');
        if !step.calls().is_empty() {
            out.push_str(&render_step_observations(step));
        }
    }
    match trace.terminal() {
        Terminal::FinalAnswer(text) => {
            out.push_str(&format!("<final_answer>{text}</final_answer>\n"));
        }
        Terminal::GivenUp => out.push_str("<given_up></given_up>\n"),
        Terminal::Truncated => {}
    }
    out
}

/// Extract the per-execute observation lists from a trace, in step order.
pub fn trace_observations(trace: &Trace) -> Vec<Vec<Observation>> {
    trace
        .steps()
        .iter()
        .filter(|s| !s.calls().is_empty())
        .map(|s| s.observations().to_vec())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn tokenizes_minimal_document() {
        let blocks =
            tokenize_blocks("<thought>plan</thought><execute>print(f())</execute>").unwrap();
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0].kind, BlockKind::Thought);
        assert_eq!(blocks[0].body, "plan");
        assert_eq!(blocks[1].kind, BlockKind::Execute);
        assert_eq!(blocks[1].body, "print(f())");
    }

    #[test]
    fn tokenizes_final_answer() {
        let blocks =
            tokenize_blocks("<thought>x</thought><final_answer>done</final_answer>").unwrap();
        assert_eq!(blocks[1].kind, BlockKind::FinalAnswer);
        assert_eq!(blocks[1].body, "done");
    }

    #[test]
    fn unclosed_tag_is_reported() {
        let err = tokenize_blocks("<execute>print(f()").unwrap_err();
        assert!(matches!(err, DslError::UnclosedTag(BlockKind::Execute, 0)));
    }

    #[test]
    fn nested_same_kind_tag_is_rejected() {
        let err = tokenize_blocks("<thought>a<thought>b</thought></thought>").unwrap_err();
        assert!(matches!(err, DslError::NestedTag(BlockKind::Thought, _)));
    }

    #[test]
    fn spans_are_ordered_and_disjoint() {
        let text = "pre <thought>a</thought> mid <execute>f()</execute> post                     <final_answer>done</final_answer>";
        let blocks = tokenize_blocks(text).unwrap();
        assert_eq!(blocks.len(), 3);
        for window in blocks.windows(2) {
            assert!(window[0].span.1 <= window[1].span.0);
        }
        for block in &blocks {
            assert!(block.span.0 < block.span.1);
        }
    }

    #[test]
    fn prose_and_unknown_tags_are_ignored() {
        let blocks = tokenize_blocks(
            "intro <observation>skip</observation> <thought>t</thought> trailing",
        )
        .unwrap();
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].kind, BlockKind::Thought);
    }

    #[test]
    fn parses_reference_call_strings() {
        let calls = parse_call_expr(
            r#"print(ticket_info_query(destination="Beijing", travel_mode="Train"))"#,
        )
        .unwrap();
        assert_eq!(calls.len(), 1);
        assert_eq!(calls[0].tool_name, "ticket_info_query");
        assert_eq!(
            calls[0].kwargs.get("destination"),
            Some(&Literal::Str("Beijing".into()))
        );
        assert_eq!(
            calls[0].kwargs.get("travel_mode"),
            Some(&Literal::Str("Train".into()))
        );

        let calls = parse_call_expr("print(single_airplane_for_airplanesdb(is_id=1))").unwrap();
        assert_eq!(calls[0].tool_name, "single_airplane_for_airplanesdb");
        assert_eq!(calls[0].kwargs.get("is_id"), Some(&Literal::Int(1)));

        let calls = parse_call_expr("get_list_of_languages_for_businessmate()").unwrap();
        assert_eq!(calls[0].kwargs.len(), 0);
    }

    #[test]
    fn truncated_input_reports_offset() {
        let err = parse_call_expr("foo(bar=").unwrap_err();
        match err {
            DslError::ParseError { offset, expected } => {
                assert_eq!(offset, 8);
                assert!(expected.contains("literal"));
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn rejects_positional_nested_and_arithmetic() {
        assert!(parse_call_expr("f(1)").is_err());
        assert!(parse_call_expr(r#"f("x")"#).is_err());
        assert!(parse_call_expr("f(a=g())").is_err());
        assert!(parse_call_expr("f(a=1+1)").is_err());
        assert!(parse_call_expr("f(a=1, a=2)").is_err());
        assert!(parse_call_expr("f(a=[1, [2]])").is_err());
    }

    #[test]
    fn print_marker_statements_yield_no_calls() {
        let code = "print(\"Example 1:\")\nprint(f(a=1))\nprint(\"Example 2:\")\nprint(f(a=2))";
        let calls = parse_call_expr(code).unwrap();
        assert_eq!(calls.len(), 2);
    }

    #[test]
    fn comments_are_skipped() {
        let calls = parse_call_expr("# correct api call\nprint(f(a=1))").unwrap();
        assert_eq!(calls.len(), 1);
    }

    #[test]
    fn three_calls_hit_the_block_ceiling() {
        let code = "f(a=1)\nf(a=2)\nf(a=3)";
        assert!(matches!(
            parse_call_expr(code),
            Err(DslError::TooManyCalls { count: 3, max: 2 })
        ));
        assert_eq!(parse_call_expr_with_limit(code, 3).unwrap().len(), 3);
    }

    #[test]
    fn literals_cover_the_grammar() {
        let calls = parse_call_expr(
            r#"f(a=1, b=2.5, c=True, d=None, e=[1, 2], g={'k': "v"}, h=-3)"#,
        )
        .unwrap();
        let kw = &calls[0].kwargs;
        assert_eq!(kw.get("a"), Some(&Literal::Int(1)));
        assert_eq!(kw.get("b"), Some(&Literal::Float(2.5)));
        assert_eq!(kw.get("c"), Some(&Literal::Bool(true)));
        assert_eq!(kw.get("d"), Some(&Literal::Null));
        assert_eq!(
            kw.get("e"),
            Some(&Literal::List(vec![Literal::Int(1), Literal::Int(2)]))
        );
        assert_eq!(kw.get("h"), Some(&Literal::Int(-3)));
    }

    fn obs(v: serde_json::Value) -> Observation {
        Observation::success(v)
    }

    #[test]
    fn assembles_one_step_truncated() {
        let blocks =
            tokenize_blocks("<thought>t</thought><execute>print(f(a=1))</execute>").unwrap();
        let trace = assemble_trace(&blocks, &[vec![obs(json!("ok"))]]).unwrap();
        assert_eq!(trace.steps().len(), 1);
        assert_eq!(trace.terminal(), &Terminal::Truncated);
    }

    #[test]
    fn assembles_final_answer_terminal() {
        let text = "<thought>a</thought><execute>f(x=1)</execute>\
                    <thought>b</thought><final_answer>done</final_answer>";
        let blocks = tokenize_blocks(text).unwrap();
        let trace = assemble_trace(&blocks, &[vec![obs(json!(1))]]).unwrap();
        assert_eq!(trace.steps().len(), 2);
        assert_eq!(trace.steps()[1].calls().len(), 0);
        assert_eq!(trace.terminal(), &Terminal::FinalAnswer("done".into()));
    }

    #[test]
    fn orphan_execute_is_rejected() {
        let blocks = tokenize_blocks("<execute>f()</execute>").unwrap();
        let err = assemble_trace(&blocks, &[vec![]]).unwrap_err();
        assert!(matches!(err, DslError::OrphanExecute(_)));
    }

    #[test]
    fn observation_count_mismatch_is_rejected() {
        let blocks =
            tokenize_blocks("<thought>t</thought><execute>f(a=1)</execute>").unwrap();
        assert!(matches!(
            assemble_trace(&blocks, &[]),
            Err(DslError::DanglingObservations { .. })
        ));
        assert!(matches!(
            assemble_trace(&blocks, &[vec![obs(json!(1)), obs(json!(2))]]),
            Err(DslError::DanglingObservations { .. })
        ));
    }

    #[test]
    fn render_emits_single_thought_and_execute() {
        let trace = Trace::new(
            vec![Step::new(
                "t",
                vec![ApiCall::new("f", BTreeMap::new()).unwrap()],
                vec![obs(json!("ok"))],
            )
            .unwrap()],
            Terminal::Truncated,
        )
        .unwrap();
        let text = render_trace(&trace);
        assert_eq!(text.matches("<thought>").count(), 1);
        assert_eq!(text.matches("<execute>").count(), 1);
    }

    #[test]
    fn render_given_up_ends_with_tag() {
        let trace = Trace::new(
            vec![Step::new(
                "t",
                vec![ApiCall::new("f", BTreeMap::new()).unwrap()],
                vec![obs(json!(null))],
            )
            .unwrap()],
            Terminal::GivenUp,
        )
        .unwrap();
        let text = render_trace(&trace);
        assert!(text.trim_end().ends_with("<given_up></given_up>"));
    }

    #[test]
    fn round_trip_reconstructs_trace() {
        let mut kwargs = BTreeMap::new();
        kwargs.insert("city".to_string(), Literal::Str("London".into()));
        kwargs.insert("date".to_string(), Literal::Str("2024-12-25".into()));
        let trace = Trace::new(
            vec![
                Step::new(
                    "check the weather",
                    vec![ApiCall::new("get_weather_forecast", kwargs).unwrap()],
                    vec![obs(json!({"temp_c": 3}))],
                )
                .unwrap(),
                Step::new("summarize", vec![], vec![]).unwrap(),
            ],
            Terminal::FinalAnswer("The weather will be cold.".into()),
        )
        .unwrap();
        let text = render_trace(&trace);
        let blocks = tokenize_blocks(&text).unwrap();
        let rebuilt = assemble_trace(&blocks, &trace_observations(&trace)).unwrap();
        assert_eq!(rebuilt, trace);
    }
}
