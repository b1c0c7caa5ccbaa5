//! Lenient extraction of JSON objects from model output.
//!
//! Judge prompts demand JSON but models wrap it in prose and code fences.
//! Fenced blocks are tried first, then balanced-brace candidates in document
//! order. Trailing commas are tolerated.

use super::GatewayError;

/// Return the first syntactically valid JSON object found in `text`.
pub fn extract_json(text: &str) -> Result<serde_json::Value, GatewayError> {
    for fence in fenced_blocks(text) {
        if let Some(v) = try_parse_object(fence.trim()) {
            return Ok(v);
        }
        // A fence may hold prose around the object; fall through to scanning it.
        if let Some(v) = scan_balanced(fence) {
            return Ok(v);
        }
    }
    scan_balanced(text).ok_or(GatewayError::NoJsonFound)
}

fn fenced_blocks(text: &str) -> Vec<&str> {
    let mut blocks = Vec::new();
    let mut rest = text;
    let mut base = 0;
    while let Some(open) = rest.find("```") {
        let after_open = base + open + 3;
        let content_start = match text[after_open..].find('\n') {
            // Skip the info string (e.g. `json`) on the opening line.
            Some(nl) => after_open + nl + 1,
            None => break,
        };
        match text[content_start..].find("```") {
            Some(close) => {
                blocks.push(&text[content_start..content_start + close]);
                base = content_start + close + 3;
                rest = &text[base..];
            }
            None => break,
        }
    }
    blocks
}

fn try_parse_object(candidate: &str) -> Option<serde_json::Value> {
    let parsed: Option<serde_json::Value> = serde_json::from_str(candidate).ok();
    match parsed {
        Some(v) if v.is_object() => Some(v),
        _ => {
            let fixed = strip_trailing_commas(candidate);
            let v: serde_json::Value = serde_json::from_str(&fixed).ok()?;
            v.is_object().then_some(v)
        }
    }
}

/// Scan for `{...}` candidates with string-aware brace balancing.
fn scan_balanced(text: &str) -> Option<serde_json::Value> {
    let bytes = text.as_bytes();
    let mut start = 0;
    while let Some(open_rel) = text[start..].find('{') {
        let open = start + open_rel;
        let mut depth = 0usize;
        let mut in_string = false;
        let mut escaped = false;
        let mut end = None;
        for (i, &b) in bytes[open..].iter().enumerate() {
            if in_string {
                if escaped {
                    escaped = false;
                } else if b == b'\\' {
                    escaped = true;
                } else if b == b'"' {
                    in_string = false;
                }
                continue;
            }
            match b {
                b'"' => in_string = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        end = Some(open + i + 1);
                        break;
                    }
                }
                _ => {}
            }
        }
        if let Some(end) = end {
            if let Some(v) = try_parse_object(&text[open..end]) {
                return Some(v);
            }
        }
        start = open + 1;
    }
    None
}

/// Remove commas that directly precede a closing brace or bracket, outside
/// strings.
fn strip_trailing_commas(text: &str) -> String {
    let bytes = text.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut in_string = false;
    let mut escaped = false;
    for &b in bytes {
        if in_string {
            out.push(b);
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => {
                in_string = true;
                out.push(b);
            }
            b'}' | b']' => {
                let mut k = out.len();
                while k > 0 && (out[k - 1] as char).is_ascii_whitespace() {
                    k -= 1;
                }
                if k > 0 && out[k - 1] == b',' {
                    out.remove(k - 1);
                }
                out.push(b);
            }
            _ => out.push(b),
        }
    }
    String::from_utf8_lossy(&out).into_owned()
}
