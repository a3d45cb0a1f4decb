//! Lenient decoding of backend text into assistant responses.

use std::sync::LazyLock;

use regex::Regex;
use serde::Deserialize;
use serde_json::Value;

use super::{AssistantResponse, DebuggerStep, InfoNeedKind, Payload, ResponderError};
use crate::conversation::DialogueAct;
use crate::debug_context::{DebugContext, SourceLocation};
use crate::followup::Followup;
use crate::ident::backticked;

static FILE_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"([A-Za-z_][\w./\\-]*\.[A-Za-z]+):(\d+)").expect("valid file:line regex"));
static LINE_OF_FILE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)line (\d+) (?:of|in) ([A-Za-z_][\w./\\-]*\.[A-Za-z]+)").expect("valid line-of-file regex")
});

/// Fenced code blocks, without their info strings.
pub fn fenced_blocks(text: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut parts = text.split("```");
    parts.next();
    while let Some(block) = parts.next() {
        let (info, code) = block.split_once('\n').unwrap_or(("", block));
        out.push((info.trim().to_string(), code.trim_end().to_string()));
        // Skip the prose between this block and the next.
        parts.next();
    }
    out
}

/// First JSON object in a fenced block, or the whole text if it is one.
pub fn extract_json(text: &str) -> Option<serde_json::Map<String, Value>> {
    let from_blocks = fenced_blocks(text)
        .into_iter()
        .find_map(|(_, code)| match serde_json::from_str(&code) {
            Ok(Value::Object(o)) => Some(o),
            _ => None,
        });
    from_blocks.or_else(|| match serde_json::from_str(text.trim()) {
        Ok(Value::Object(o)) => Some(o),
        _ => None,
    })
}

/// Text outside any fenced block.
fn prose(text: &str) -> String {
    text.split("```")
        .step_by(2)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn contains_any(haystack: &str, needles: &[&str]) -> bool {
    needles.iter().any(|n| haystack.contains(n))
}

const INTERROGATIVES: &[&str] = &[
    "how", "what", "why", "where", "when", "which", "who", "can", "could", "should", "would", "is", "are", "do",
    "does", "did", "will",
];

/// Whether a developer message reads as a question.
pub fn is_question(text: &str) -> bool {
    let t = text.trim();
    if t.ends_with('?') {
        return true;
    }
    let first = t
        .split_whitespace()
        .next()
        .unwrap_or_default()
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    INTERROGATIVES.contains(&first.as_str())
}

/// Rule-based dialogue act for free-form assistant text.
pub fn infer_act(text: &str) -> Result<DialogueAct, ResponderError> {
    let t = text.trim();
    if t.is_empty() {
        return Err(ResponderError::EmptyText);
    }
    let lower = t.to_lowercase();
    let addresses_user = contains_any(
        &lower,
        &["you", "your", "share", "provide", "tell me", "send me", "paste"],
    );
    if t.ends_with('?') && addresses_user {
        return Ok(DialogueAct::InfoRequest);
    }
    let has_code = t.contains("```")
        || t.lines().any(|l| {
            let l = l.trim_start();
            (l.starts_with("+ ") || l.starts_with("- ") || l.starts_with("+\t"))
                && !l.starts_with("---")
                && !l.starts_with("+++")
        });
    let causal = contains_any(
        &lower,
        &["because", "since", "caused", "the cause", "fix", "so that", "change"],
    );
    if has_code && causal {
        return Ok(DialogueAct::FixProposal);
    }
    let hedged = contains_any(
        &lower,
        &[
            "might be because",
            "may be because",
            "could be because",
            "might be happening because",
            "may be happening because",
            "probably because",
            "possibly because",
            "likely because",
            "might be caused",
            "may be caused",
            "i suspect",
        ],
    );
    if hedged {
        return Ok(DialogueAct::HypothesisProposal);
    }
    let debugger = contains_any(
        &lower,
        &[
            "breakpoint",
            "step through",
            "step into",
            "step over",
            "inspect",
            "run to",
            "watch window",
            "debugger",
        ],
    );
    const IMPERATIVES: &[&str] = &[
        "set", "add", "put", "place", "step", "inspect", "run", "start", "hover", "open", "check", "continue", "then",
    ];
    let imperative = lower
        .split(['.', '\n', '!', ';'])
        .filter_map(|s| s.split_whitespace().next())
        .any(|w| IMPERATIVES.contains(&w.trim_matches(|c: char| !c.is_alphanumeric())));
    if debugger && imperative {
        return Ok(DialogueAct::InstructionStep);
    }
    Ok(DialogueAct::Answer)
}

fn find_location(text: &str, ctx: Option<&DebugContext>) -> Option<SourceLocation> {
    let loc = FILE_LINE
        .captures(text)
        .and_then(|c| Some(SourceLocation::new(&c[1], c[2].parse().ok()?)))
        .or_else(|| {
            LINE_OF_FILE
                .captures(text)
                .and_then(|c| Some(SourceLocation::new(&c[2], c[1].parse().ok()?)))
        })?;
    match ctx.and_then(|c| c.function_at(&loc)) {
        Some(f) => Some(loc.in_function(f)),
        None => Some(loc),
    }
}

/// Backticked identifiers, preferring those the context knows.
fn mentioned(text: &str, ctx: Option<&DebugContext>) -> Vec<String> {
    let mut ids = backticked(text);
    if let Some(ctx) = ctx {
        let known = ctx.identifiers();
        ids.sort_by_key(|id| !known.contains(id));
    }
    ids
}

/// Derive a payload for `act` from prose. `None` when the text does not
/// carry enough structure for the act.
pub fn derive_payload(act: DialogueAct, text: &str, ctx: Option<&DebugContext>) -> Option<Payload> {
    let ids = mentioned(text, ctx);
    let lower = text.to_lowercase();
    match act {
        DialogueAct::InfoRequest => {
            let target = ids.first()?.clone();
            let kind = if contains_any(&lower, &["method", "code for", "source of", "implementation"]) {
                InfoNeedKind::MethodSource
            } else {
                InfoNeedKind::VariableValue
            };
            Some(Payload::InfoNeed { kind, target })
        }
        DialogueAct::InstructionStep => {
            let loc = find_location(text, ctx);
            let var = ids.first().cloned();
            let mut steps = Vec::new();
            if let Some(loc) = &loc {
                steps.push(DebuggerStep::set_breakpoint(loc.clone()));
                steps.push(DebuggerStep::run_to(loc.clone()));
            }
            if let Some(v) = var {
                steps.push(DebuggerStep::inspect(v, loc));
            }
            (!steps.is_empty()).then_some(Payload::Instruction { steps })
        }
        DialogueAct::HypothesisProposal => {
            let var = ids.first()?.clone();
            Some(Payload::Hypothesis {
                cause: prose(text),
                check: DebuggerStep::inspect(var, find_location(text, ctx)),
            })
        }
        DialogueAct::FixProposal => {
            let diff_text = fenced_blocks(text)
                .into_iter()
                .map(|(_, code)| code)
                .next()
                .unwrap_or_default();
            Some(Payload::Fix {
                fix_id: None,
                diff_text,
                explanation: prose(text),
            })
        }
        _ => Some(Payload::None),
    }
}

fn lenient_followups(v: Option<&Value>) -> Vec<Followup> {
    let Some(Value::Array(items)) = v else {
        return Vec::new();
    };
    items.iter().filter_map(|i| Followup::deserialize(i).ok()).collect()
}

/// Turn backend text into a consistent response. Structured output is
/// taken from the first fenced JSON block; otherwise the act is inferred
/// and a payload derived from the prose, falling back to a plain answer.
pub fn parse_response(text: &str, ctx: Option<&DebugContext>) -> AssistantResponse {
    if let Some(obj) = extract_json(text) {
        if obj.contains_key("act") || obj.contains_key("body") {
            let body = obj
                .get("body")
                .and_then(Value::as_str)
                .map(str::to_string)
                .unwrap_or_else(|| prose(text));
            let act = obj.get("act").and_then(|a| DialogueAct::deserialize(a).ok());
            let payload = obj
                .get("payload")
                .and_then(|p| Payload::deserialize(p).ok())
                .filter(|p| *p != Payload::None);
            let followups = lenient_followups(obj.get("followups"));
            let payload = match (payload, act) {
                (Some(p), _) => Some(p),
                (None, Some(a)) => derive_payload(a, &body, ctx),
                (None, None) => infer_act(&body).ok().and_then(|a| derive_payload(a, &body, ctx)),
            };
            let mut resp = AssistantResponse::new(body, payload.unwrap_or(Payload::None));
            resp.followups = followups;
            return resp;
        }
    }
    let body = text.trim().to_string();
    let payload = infer_act(&body)
        .ok()
        .and_then(|act| derive_payload(act, &body, ctx))
        .unwrap_or(Payload::None);
    AssistantResponse::new(body, payload)
}

#[cfg(test)]
mod tests {
    use super::*;
    use DialogueAct::*;

    #[test]
    fn infers_acts() {
        assert_eq!(
            infer_act("Can you share the code for the ToJson method?").unwrap(),
            InfoRequest
        );
        assert_eq!(
            infer_act("This might be happening because the string is empty...").unwrap(),
            HypothesisProposal
        );
        assert_eq!(
            infer_act("Set a breakpoint on line 186 and inspect result when it is hit.").unwrap(),
            InstructionStep
        );
        assert_eq!(
            infer_act("Change the loop bound to fix it:\n```\n- i <= n\n+ i < n\n```").unwrap(),
            FixProposal
        );
        assert_eq!(infer_act("The exception comes from the serializer.").unwrap(), Answer);
        assert!(matches!(infer_act("  "), Err(ResponderError::EmptyText)));
    }

    #[test]
    fn questions() {
        assert!(is_question("How to check the value of serialized during execution?"));
        assert!(is_question("where is ToJson defined"));
        assert!(!is_question("serialized is an empty string"));
    }

    #[test]
    fn structured_block_wins() {
        let text = "Sure.\n```json\n{\"act\":\"InfoRequest\",\"body\":\"Value of `serialized`?\",\"payload\":{\"type\":\"InfoNeed\",\"kind\":\"VariableValue\",\"target\":\"serialized\"},\"followups\":[{\"text\":\"x\",\"kind\":\"Bogus\",\"anchor_entities\":[]}]}\n```";
        let r = parse_response(text, None);
        assert_eq!(r.act, InfoRequest);
        assert_eq!(
            r.payload,
            Payload::InfoNeed {
                kind: InfoNeedKind::VariableValue,
                target: "serialized".into()
            }
        );
        assert!(r.followups.is_empty());
    }

    #[test]
    fn prose_is_derived_or_demoted() {
        let r = parse_response("Can you tell me the value of `json` in FromJson?", None);
        assert_eq!(r.act, InfoRequest);
        let r = parse_response("Could you describe what happens next?", None);
        assert_eq!(r.act, Answer);
        assert_eq!(r.payload, Payload::None);
        let r = parse_response(
            "Set a breakpoint at ScalarNodeDeserializer.cs:186 and inspect `result`.",
            None,
        );
        assert_eq!(r.act, InstructionStep);
        let Payload::Instruction { steps } = &r.payload else {
            panic!()
        };
        assert_eq!(steps.len(), 3);
        assert_eq!(steps[0].location.as_ref().unwrap().line, 186);
    }

    #[test]
    fn payload_overrides_mismatched_act() {
        let text = r#"{"act":"Answer","body":"b","payload":{"type":"Fix","diff_text":"d","explanation":"e"}}"#;
        let r = parse_response(text, None);
        assert_eq!(r.act, FixProposal);
        assert!(r.is_consistent());
    }
}
