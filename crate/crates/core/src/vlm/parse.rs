//! Answer parsers. Each returns a value or [`VlmError::Unparseable`]; none of
//! them substitutes a default.

use regex::Regex;

use super::VlmError;
use crate::types::Primitive;

fn unparseable(kind: &'static str, text: &str) -> VlmError {
    VlmError::Unparseable { kind, text: text.to_string() }
}

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_lowercase)
}

/// Reads a yes/no answer: the leading word decides, otherwise the first
/// standalone "yes" or "no" anywhere in the reply.
pub fn parse_yes_no(text: &str) -> Result<bool, VlmError> {
    let mut ws = words(text).peekable();
    match ws.peek().map(String::as_str) {
        Some("yes") => return Ok(true),
        Some("no") => return Ok(false),
        _ => {}
    }
    for w in ws {
        match w.as_str() {
            "yes" => return Ok(true),
            "no" => return Ok(false),
            _ => {}
        }
    }
    Err(unparseable("yes/no", text))
}

fn normalize(s: &str) -> String {
    words(s).collect::<Vec<_>>().join(" ")
}

/// Loose stem of a class label used for the free-text fallback: the first word
/// with a trailing "ing", "es" or "s" removed ("Combing" -> "comb").
fn stem(label: &str) -> String {
    let first = words(label).next().unwrap_or_default();
    for suffix in ["ing", "es", "s"] {
        if let Some(s) = first.strip_suffix(suffix) {
            if s.len() >= 3 {
                return s.to_string();
            }
        }
    }
    first
}

fn match_label(answer: &str, classes: &[&str]) -> Option<usize> {
    let a = normalize(answer);
    if a.is_empty() {
        return None;
    }
    let norm: Vec<String> = classes.iter().map(|c| normalize(c)).collect();
    if let Some(i) = norm.iter().position(|c| *c == a) {
        return Some(i);
    }
    let padded = format!(" {a} ");
    norm.iter()
        .position(|c| padded.contains(&format!(" {c} ")))
        .or_else(|| norm.iter().position(|c| format!(" {c} ").contains(&padded)))
}

/// Earliest class mentioned anywhere in `text`, by full label or stem.
fn scan_for_label(text: &str, classes: &[&str]) -> Option<usize> {
    let t = format!(" {} ", normalize(text));
    let mut best: Option<(usize, usize)> = None;
    for (i, c) in classes.iter().enumerate() {
        let full = t.find(&format!(" {} ", normalize(c)));
        let stemmed = t.find(&format!(" {}", stem(c)));
        if let Some(pos) = full.into_iter().chain(stemmed).min() {
            if best.is_none_or(|(p, _)| pos < p) {
                best = Some((pos, i));
            }
        }
    }
    best.map(|(_, i)| i)
}

/// Index into `classes` of the answer on the last `FINAL_ANSWER:` line, matched
/// case- and punctuation-insensitively. Falls back to the earliest class
/// mentioned anywhere in the reply.
pub fn parse_final_answer(text: &str, classes: &[&str]) -> Result<usize, VlmError> {
    if classes.is_empty() {
        return Err(VlmError::Precondition("class list is empty".into()));
    }
    let marker = Regex::new(r"(?i)final[_ ]answer\s*:\s*(.*)").expect("static regex");
    let answer = text.lines().rev().find_map(|l| marker.captures(l)).map(|c| c[1].to_string());
    if let Some(a) = answer {
        if let Some(i) = match_label(&a, classes) {
            return Ok(i);
        }
    }
    scan_for_label(text, classes).ok_or_else(|| unparseable("class label", text))
}

/// The primitive whose name occurs first in the reply.
pub fn parse_primitive(text: &str) -> Result<Primitive, VlmError> {
    let lower = text.to_lowercase();
    Primitive::ALL
        .into_iter()
        .filter_map(|p| lower.find(p.as_str()).map(|pos| (pos, p)))
        .min_by_key(|&(pos, _)| pos)
        .map(|(_, p)| p)
        .ok_or_else(|| unparseable("primitive", text))
}

/// First standalone 0, 1 or 2 in the reply. Digits inside longer numbers or
/// decimals do not count.
pub fn parse_rating(text: &str) -> Result<u8, VlmError> {
    let b = text.as_bytes();
    let mut i = 0;
    while i < b.len() {
        if b[i].is_ascii_digit() {
            let start = i;
            while i < b.len() && b[i].is_ascii_digit() {
                i += 1;
            }
            let decimal_before = start >= 2 && b[start - 1] == b'.' && b[start - 2].is_ascii_digit();
            let decimal_after = i + 1 < b.len() && b[i] == b'.' && b[i + 1].is_ascii_digit();
            if i - start == 1 && b[start] <= b'2' && !decimal_before && !decimal_after {
                return Ok(b[start] - b'0');
            }
        } else {
            i += 1;
        }
    }
    Err(unparseable("rating", text))
}

/// Rating at the end of a reasoning reply: whatever follows the last "score"
/// mention, else the last line that holds a rating.
pub fn parse_rating_tail(text: &str) -> Result<u8, VlmError> {
    let lower = text.to_lowercase();
    if let Some(pos) = lower.rfind("score") {
        if let Ok(r) = parse_rating(&text[pos..]) {
            return Ok(r);
        }
    }
    text.lines()
        .rev()
        .find_map(|l| parse_rating(l).ok())
        .ok_or_else(|| unparseable("rating", text))
}

/// Nose and knee touch counts from a reply shaped like `nose: 2, knee: 1`.
pub fn parse_touch_counts(text: &str) -> Result<(u32, u32), VlmError> {
    let grab = |what: &str| -> Option<u32> {
        let re = Regex::new(&format!(r"(?i){what}\D*?(\d+)")).expect("static regex");
        re.captures(text).and_then(|c| c[1].parse().ok())
    };
    match (grab("nose"), grab("knee")) {
        (Some(n), Some(k)) => Ok((n, k)),
        _ => Err(unparseable("touch counts", text)),
    }
}
