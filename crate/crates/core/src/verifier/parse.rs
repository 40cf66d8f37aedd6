//! Diagnostic report parsing. A strict JSON object is tried first, then a keyword scan over
//! free text. The parser is total: unusable output becomes a Normal report marked Failed.

use std::sync::LazyLock;

use regex::Regex;
use serde_json::Value;

use super::{DiagnosticReport, ParseMode};
use crate::trajectory::Verdict;

static VERDICT_WORD: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(?:(no\s+anomal(?:y|ies))|(anomal(?:y|ous|ies))|(normal))\b")
        .expect("valid regex")
});
static STEP_REF: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bstep\s*\[?\s*0*(\d+)").expect("valid regex"));

/// The strict wire form of a report.
pub fn strict_render(report: &DiagnosticReport) -> String {
    serde_json::json!({
        "verdict": report.verdict.as_str(),
        "error_step": report.error_step,
        "error_content": report.error_content,
    })
    .to_string()
}

pub fn parse_report(raw: &str) -> DiagnosticReport {
    if let Some(report) = parse_strict(raw) {
        return report;
    }
    parse_lenient(raw).unwrap_or_else(|| DiagnosticReport::failed(raw))
}

fn first_verdict_object(raw: &str) -> Option<serde_json::Map<String, Value>> {
    raw.match_indices('{').find_map(|(i, _)| {
        let mut stream = serde_json::Deserializer::from_str(&raw[i..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(map))) if map.contains_key("verdict") => Some(map),
            _ => None,
        }
    })
}

fn parse_strict(raw: &str) -> Option<DiagnosticReport> {
    let map = first_verdict_object(raw)?;
    let verdict = match map.get("verdict")?.as_str()? {
        "normal" => Verdict::Normal,
        "anomaly" => Verdict::Anomaly,
        _ => return None,
    };
    let step = match map.get("error_step") {
        None | Some(Value::Null) => None,
        Some(v) => Some(usize::try_from(v.as_u64()?).ok()?).filter(|s| *s >= 1),
    };
    let content = match map.get("error_content") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return None,
    };
    let report = match verdict {
        Verdict::Normal => DiagnosticReport::normal(raw),
        Verdict::Anomaly => DiagnosticReport {
            verdict,
            error_step: Some(step?),
            error_content: content,
            raw_output: raw.to_string(),
            parse_mode: ParseMode::Strict,
        },
    };
    Some(report)
}

/// Byte ranges of sentences: runs ending at `.`, `!` or `?` followed by whitespace or the
/// end of input.
fn sentence_bounds(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut it = text.char_indices().peekable();
    while let Some((i, c)) = it.next() {
        if matches!(c, '.' | '!' | '?') {
            let next = it.peek().map(|p| p.1);
            if next.is_none_or(char::is_whitespace) {
                out.push((start, i + c.len_utf8()));
                start = i + c.len_utf8();
            }
        }
    }
    if start < text.len() {
        out.push((start, text.len()));
    }
    out
}

fn clean(fragment: &str) -> Option<String> {
    let trimmed = fragment
        .trim_start_matches(|c: char| c.is_whitespace() || ":,;-.)]".contains(c))
        .trim_end();
    let has_words = trimmed.chars().any(char::is_alphanumeric);
    has_words.then(|| trimmed.to_string())
}

fn parse_lenient(raw: &str) -> Option<DiagnosticReport> {
    let caps = VERDICT_WORD.captures(raw)?;
    let verdict = if caps.get(2).is_some() {
        Verdict::Anomaly
    } else {
        Verdict::Normal
    };
    if verdict == Verdict::Normal {
        return Some(DiagnosticReport {
            parse_mode: ParseMode::Lenient,
            ..DiagnosticReport::normal(raw)
        });
    }
    let step_match = STEP_REF.captures(raw)?;
    let step: usize = step_match[1].parse().ok().filter(|s| *s >= 1)?;
    let end = step_match.get(0).expect("whole match").end();
    let sentences = sentence_bounds(raw);
    let position = sentences.iter().position(|&(s, e)| s < end && end <= e);
    let content = position.and_then(|p| {
        clean(&raw[end..sentences[p].1])
            .or_else(|| sentences.get(p + 1).and_then(|&(s, e)| clean(&raw[s..e])))
    });
    Some(DiagnosticReport {
        verdict,
        error_step: Some(step),
        error_content: content,
        raw_output: raw.to_string(),
        parse_mode: ParseMode::Lenient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn strict_object() {
        let raw = r#"{"verdict": "anomaly", "error_step": 8, "error_content": "redundant toggle"}"#;
        let r = parse_report(raw);
        assert_eq!(r.verdict, Verdict::Anomaly);
        assert_eq!(r.error_step, Some(8));
        assert_eq!(r.error_content.as_deref(), Some("redundant toggle"));
        assert_eq!(r.parse_mode, ParseMode::Strict);
        assert_eq!(r.raw_output, raw);
    }

    #[test]
    fn strict_object_embedded_in_prose() {
        let raw = "Here is my answer: {\"verdict\": \"normal\", \"error_step\": null, \"error_content\": null} done";
        let r = parse_report(raw);
        assert_eq!((r.verdict, r.parse_mode), (Verdict::Normal, ParseMode::Strict));
        assert_eq!(r.error_step, None);
    }

    #[test]
    fn narrative_prose() {
        let raw = "Anomaly at Step 8. The plate state is already 'Cleaned' after Step 7...";
        let r = parse_report(raw);
        assert_eq!(r.verdict, Verdict::Anomaly);
        assert_eq!(r.error_step, Some(8));
        assert_eq!(r.parse_mode, ParseMode::Lenient);
        assert_eq!(
            r.error_content.as_deref(),
            Some("The plate state is already 'Cleaned' after Step 7...")
        );
    }

    #[test]
    fn lenient_remainder_of_sentence() {
        let r = parse_report("I think this is anomalous: at step 3, the agent clicks Buy twice. Bye.");
        assert_eq!(r.error_step, Some(3));
        assert_eq!(r.error_content.as_deref(), Some("the agent clicks Buy twice."));
    }

    #[test]
    fn lenient_normal_and_negation() {
        let r = parse_report("No anomaly found; the run looks fine.");
        assert_eq!((r.verdict, r.parse_mode), (Verdict::Normal, ParseMode::Lenient));
        let r = parse_report("The trajectory is NORMAL.");
        assert_eq!((r.verdict, r.parse_mode), (Verdict::Normal, ParseMode::Lenient));
        // "abnormal" is not a verdict keyword.
        assert_eq!(parse_report("abnormal vibes").parse_mode, ParseMode::Failed);
    }

    #[test]
    fn gibberish_fails_to_normal() {
        let r = parse_report("qwerty zxcv 12345");
        assert_eq!((r.verdict, r.parse_mode), (Verdict::Normal, ParseMode::Failed));
        assert_eq!(r.error_step, None);
    }

    #[test]
    fn anomaly_without_step_fails() {
        let r = parse_report("There is an anomaly somewhere.");
        assert_eq!((r.verdict, r.parse_mode), (Verdict::Normal, ParseMode::Failed));
    }

    fn report_strategy() -> impl Strategy<Value = DiagnosticReport> {
        prop_oneof![
            Just(DiagnosticReport::normal("")),
            (1usize..500, proptest::option::of("\\PC{0,40}")).prop_map(|(step, content)| {
                DiagnosticReport {
                    verdict: Verdict::Anomaly,
                    error_step: Some(step),
                    error_content: content,
                    raw_output: String::new(),
                    parse_mode: ParseMode::Strict,
                }
            }),
        ]
    }

    proptest! {
        #[test]
        fn strict_round_trip(report in report_strategy()) {
            let wire = strict_render(&report);
            let parsed = parse_report(&wire);
            prop_assert_eq!(parsed, DiagnosticReport { raw_output: wire, ..report });
        }

        #[test]
        fn parser_is_total(raw in "\\PC{0,200}") {
            let r = parse_report(&raw);
            if r.verdict == Verdict::Normal {
                prop_assert!(r.error_step.is_none() && r.error_content.is_none());
            } else {
                prop_assert!(r.error_step.is_some());
                prop_assert_ne!(r.parse_mode, ParseMode::Failed);
            }
        }
    }
}
