use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::Label;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseMode {
    #[default]
    Strict,
    Salvage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParsedLabel {
    pub label: Label,
    pub salvaged: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed response: {excerpt:?}")]
pub struct MalformedResponse {
    pub excerpt: String,
}

fn malformed(raw: &str) -> MalformedResponse {
    const MAX: usize = 120;
    let excerpt = match raw.char_indices().nth(MAX) {
        Some((i, _)) => format!("{}...", &raw[..i]),
        None => raw.to_string(),
    };
    MalformedResponse { excerpt }
}

fn token_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[A-Za-z0-9_]+").unwrap())
}

fn not_cross_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\bnot[\s\-_]+cross\b").unwrap())
}

fn label_of(token: &str) -> Option<Label> {
    match token {
        "cross" => Some(Label::Cross),
        "not_cross" => Some(Label::NotCross),
        _ => None,
    }
}

/// Label tokens in `text`, in order; a token is a maximal `[A-Za-z0-9_]` run.
fn label_tokens(text: &str) -> Vec<Label> {
    token_re().find_iter(text).filter_map(|m| label_of(m.as_str())).collect()
}

/// Removes one surrounding ``` fence (optionally tagged `json`).
fn unfence(s: &str) -> Option<&str> {
    let Some(rest) = s.strip_prefix("```") else {
        return Some(s);
    };
    let (tag, body) = rest.split_once('\n')?;
    let tag = tag.trim();
    if !(tag.is_empty() || tag.eq_ignore_ascii_case("json")) {
        return None;
    }
    let inner = body.trim_end().strip_suffix("```")?;
    if inner.contains("```") {
        return None;
    }
    Some(inner.trim())
}

fn parse_strict(raw: &str) -> Option<Label> {
    let body = unfence(raw.trim())?;
    let value: Value = serde_json::from_str(body).ok()?;
    let obj = value.as_object()?;
    if obj.len() != 1 {
        return None;
    }
    let label = label_of(obj.get("intention")?.as_str()?)?;
    // rejects \u-escaped spellings of the label
    (label_tokens(raw) == [label]).then_some(label)
}

fn parse_salvage(raw: &str) -> Option<Label> {
    let lower = raw.to_lowercase();
    let normalized = not_cross_re().replace_all(&lower, "not_cross");
    let found = label_tokens(&normalized);
    match (found.contains(&Label::Cross), found.contains(&Label::NotCross)) {
        (true, false) => Some(Label::Cross),
        (false, true) => Some(Label::NotCross),
        _ => None,
    }
}

/// Strict: a single JSON object `{"intention": "cross" | "not_cross"}`, with
/// surrounding whitespace and one fenced block tolerated. Salvage: on strict
/// failure, exactly one distinct label literal as a whole token, any case;
/// "not cross" / "not-cross" count as `not_cross`.
pub fn parse_response(raw: &str, mode: ParseMode) -> Result<ParsedLabel, MalformedResponse> {
    if let Some(label) = parse_strict(raw) {
        return Ok(ParsedLabel { label, salvaged: false });
    }
    if mode == ParseMode::Salvage {
        if let Some(label) = parse_salvage(raw) {
            return Ok(ParsedLabel { label, salvaged: true });
        }
    }
    Err(malformed(raw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn strict(s: &str) -> Option<Label> {
        parse_response(s, ParseMode::Strict).ok().map(|p| p.label)
    }

    fn salvage(s: &str) -> Option<ParsedLabel> {
        parse_response(s, ParseMode::Salvage).ok()
    }

    #[test]
    fn canonical_outputs() {
        assert_eq!(strict(r#"{"intention": "cross"}"#), Some(Label::Cross));
        assert_eq!(strict(r#"{"intention": "not_cross"}"#), Some(Label::NotCross));
        assert_eq!(strict("```json\n{\"intention\": \"not_cross\"}\n```"), Some(Label::NotCross));
        assert_eq!(strict("```\n{\"intention\":\"cross\"}\n```\n"), Some(Label::Cross));
        assert_eq!(strict("  \n{\"intention\":\"cross\"}\t\n"), Some(Label::Cross));
    }

    #[test]
    fn strict_rejections() {
        for s in [
            "",
            "   ",
            "The pedestrian seems hesitant.",
            "cross",
            r#"{"intention": "Cross"}"#,
            r#"{"intention": "cross", "confidence": 0.9}"#,
            r#"{"intention": "cross"} {"intention": "not_cross"}"#,
            r#"[{"intention": "cross"}]"#,
            r#"{"intention": "cro\u0073s"}"#,
            "```python\n{\"intention\": \"cross\"}\n```",
            "```json\n{\"intention\": \"cross\"}\n```\n```json\n{\"intention\": \"cross\"}\n```",
            "Answer: {\"intention\": \"cross\"}",
        ] {
            assert_eq!(strict(s), None, "{s:?}");
        }
    }

    #[test]
    fn salvage_rules() {
        let p = salvage("Answer: cross.").unwrap();
        assert_eq!((p.label, p.salvaged), (Label::Cross, true));
        assert_eq!(salvage("NOT_CROSS").unwrap().label, Label::NotCross);
        assert_eq!(salvage("The pedestrian will not cross.").unwrap().label, Label::NotCross);
        assert_eq!(salvage("cross ... I repeat: cross").unwrap().label, Label::Cross);
        assert!(salvage("either cross or not_cross").is_none());
        assert!(salvage("crossing the road").is_none());
        assert!(salvage("The pedestrian seems hesitant.").is_none());
        // strict success is not flagged
        assert!(!salvage(r#"{"intention": "cross"}"#).unwrap().salvaged);
    }

    #[test]
    fn excerpt_is_bounded() {
        let long = "x".repeat(1000);
        let e = parse_response(&long, ParseMode::Strict).unwrap_err();
        assert_eq!(e.excerpt.chars().count(), 123);
    }

    proptest! {
        #[test]
        fn both_literals_never_parse_strictly(prefix in ".{0,20}", mid in ".{0,20}", suffix in ".{0,20}") {
            let s = format!("{prefix}{{\"intention\": \"cross\"}}{mid}{{\"intention\": \"not_cross\"}}{suffix}");
            prop_assert_eq!(strict(&s), None);
        }
    }
}
