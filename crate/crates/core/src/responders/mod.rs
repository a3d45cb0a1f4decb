//! The decision agents: hardness classifier, eager responder and
//! collaborative responder.

mod parse;
mod types;

use serde::Deserialize;
use thiserror::Error;

use crate::conversation::{ConversationState, DebugPhase, DialogueAct, PatternMode};
use crate::debug_context::{summarize_context, DebugContext, SourceLocation};
use crate::llm::{AgentRole, Channel, Gateway, GatewayError, LlmSession};

pub use parse::{derive_payload, extract_json, fenced_blocks, infer_act, is_question, parse_response};
pub use types::*;

/// Verdicts below this confidence never select the one-shot pattern.
pub const ONE_SHOT_THRESHOLD: f64 = 0.7;
/// Exception types, minus the `Exception` suffix, that the fallback
/// heuristic treats as fixable in one turn.
pub const SIMPLE_EXCEPTIONS: &[&str] = &["IndexOutOfRange", "NullReference", "DivideByZero"];
/// Character budget for the context summary placed in responder prompts.
pub const CONTEXT_SUMMARY_BUDGET: usize = 4000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ResponderError {
    #[error("responder precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("a fix cannot be proposed in phase {phase:?} with {open_inserts} open insert(s)")]
    IllegalForPhase { phase: DebugPhase, open_inserts: usize },
    #[error("payload is not grounded in the debug context: {0}")]
    Ungrounded(String),
    #[error("an answer is only allowed in reply to a developer question")]
    IllegalAnswer,
    #[error("response act and payload disagree")]
    Malformed,
    #[error("cannot infer an act from empty text")]
    EmptyText,
}

fn summary(ctx: Option<&DebugContext>) -> String {
    ctx.and_then(|c| summarize_context(c, CONTEXT_SUMMARY_BUDGET).ok())
        .unwrap_or_default()
}

#[derive(Deserialize)]
struct RawVerdict {
    mode: HardnessMode,
    confidence: f64,
    #[serde(default)]
    rationale: String,
}

/// Deterministic fallback: one-shot only for a simple exception type thrown
/// in the developer's own top frame.
pub fn heuristic_verdict(ctx: &DebugContext) -> HardnessVerdict {
    let short = ctx.exception.short_type_name();
    let short = short.strip_suffix("Exception").unwrap_or(short);
    let at_top = ctx
        .top_frame()
        .is_some_and(|f| !f.external && f.location.same_place(&ctx.exception.thrown_at));
    if at_top && SIMPLE_EXCEPTIONS.contains(&short) {
        HardnessVerdict {
            mode: HardnessMode::OneShot,
            rationale: format!("{short} thrown in the top frame of user code"),
            confidence: 0.8,
        }
    } else {
        HardnessVerdict {
            mode: HardnessMode::Collaborative,
            rationale: "the failure is not a simple exception at the top frame of user code".into(),
            confidence: 0.8,
        }
    }
}

pub fn classify_hardness(
    state: &ConversationState,
    ctx: Option<&DebugContext>,
    gateway: &Gateway,
    llm: &mut LlmSession,
) -> HardnessVerdict {
    let Some(ctx) = ctx else {
        return HardnessVerdict {
            mode: HardnessMode::Collaborative,
            rationale: "no debugger context is available".into(),
            confidence: 1.0,
        };
    };
    let raw = gateway
        .call(
            llm,
            AgentRole::HardnessClassifier,
            Channel::Main,
            state,
            &summary(Some(ctx)),
        )
        .ok()
        .and_then(|out| extract_json(&out.text))
        .and_then(|obj| RawVerdict::deserialize(serde_json::Value::Object(obj)).ok())
        .filter(|v| (0.0..=1.0).contains(&v.confidence));
    let Some(v) = raw else {
        return heuristic_verdict(ctx);
    };
    if v.mode == HardnessMode::OneShot && v.confidence < ONE_SHOT_THRESHOLD {
        return HardnessVerdict {
            mode: HardnessMode::Collaborative,
            rationale: format!("{} (confidence too low for a one-shot answer)", v.rationale),
            confidence: v.confidence,
        };
    }
    HardnessVerdict {
        mode: v.mode,
        rationale: v.rationale,
        confidence: v.confidence,
    }
}

/// Single-turn fix proposal.
pub fn eager_respond(
    state: &ConversationState,
    ctx: Option<&DebugContext>,
    gateway: &Gateway,
    llm: &mut LlmSession,
) -> Result<AssistantResponse, ResponderError> {
    if state.pattern_mode != PatternMode::EagerQA {
        return Err(ResponderError::Precondition(format!(
            "eager responder called in {:?} mode",
            state.pattern_mode
        )));
    }
    if state.is_done() || state.depth() != 1 {
        return Err(ResponderError::Precondition(
            "eager responder needs exactly the base pair open".into(),
        ));
    }
    let out = gateway.call(llm, AgentRole::EagerResponder, Channel::Main, state, &summary(ctx))?;
    let mut resp = parse_response(&out.text, ctx);
    if resp.act != DialogueAct::FixProposal {
        let diff_text = fenced_blocks(&out.text)
            .into_iter()
            .map(|(_, code)| code)
            .next()
            .unwrap_or_default();
        let followups = std::mem::take(&mut resp.followups);
        resp = AssistantResponse::new(
            resp.body.clone(),
            Payload::Fix {
                fix_id: None,
                diff_text,
                explanation: resp.body,
            },
        );
        resp.followups = followups;
    }
    Ok(resp)
}

/// Locations and identifiers in the payload must come from the context.
/// Without a context there is nothing to check against.
pub fn check_grounding(resp: &AssistantResponse, ctx: Option<&DebugContext>) -> Result<(), ResponderError> {
    let Some(ctx) = ctx else {
        return Ok(());
    };
    let known = ctx.identifiers();
    let ident = |name: &str| {
        if known.contains(name) {
            Ok(())
        } else {
            Err(ResponderError::Ungrounded(format!("unknown identifier {name:?}")))
        }
    };
    let place = |loc: &SourceLocation| {
        if ctx.knows_location(loc) {
            Ok(())
        } else {
            Err(ResponderError::Ungrounded(format!("unknown location {loc}")))
        }
    };
    let step = |s: &DebuggerStep| -> Result<(), ResponderError> {
        if let Some(l) = &s.location {
            place(l)?;
        }
        if let Some(v) = &s.variable {
            ident(v)?;
        }
        Ok(())
    };
    match &resp.payload {
        Payload::InfoNeed { kind, target } => match (kind, SourceLocation::parse_key(target)) {
            (InfoNeedKind::Observation, Some(loc)) => place(&loc),
            _ => ident(target),
        },
        Payload::Instruction { steps } => steps.iter().try_for_each(step),
        Payload::Hypothesis { check, .. } => step(check),
        Payload::Fix { .. } | Payload::None => Ok(()),
    }
}

/// Enforce the collaborative repertoire on a parsed response. Replies to
/// developer meta-questions are always treated as answers.
pub fn vet_collaborative(
    state: &ConversationState,
    ctx: Option<&DebugContext>,
    mut resp: AssistantResponse,
) -> Result<AssistantResponse, ResponderError> {
    let meta_on_top = state.top().is_some_and(|f| f.is_meta_insert());
    if meta_on_top {
        if resp.act != DialogueAct::Answer {
            resp.act = DialogueAct::Answer;
            resp.payload = Payload::None;
        }
        return Ok(resp);
    }
    if !resp.is_consistent() {
        return Err(ResponderError::Malformed);
    }
    match resp.act {
        DialogueAct::Answer => return Err(ResponderError::IllegalAnswer),
        DialogueAct::FixProposal if state.phase < DebugPhase::Fixing || state.open_inserts() > 0 => {
            return Err(ResponderError::IllegalForPhase {
                phase: state.phase,
                open_inserts: state.open_inserts(),
            })
        }
        _ => {}
    }
    check_grounding(&resp, ctx)?;
    Ok(resp)
}

/// A request for a fact the context can vouch for, used in place of output
/// that breaks the collaborative rules.
pub fn clarifying_request(ctx: Option<&DebugContext>) -> AssistantResponse {
    let local = ctx.and_then(|c| {
        c.frames
            .iter()
            .filter(|f| !f.external)
            .find_map(|f| f.locals.first().map(|b| (f, b)))
    });
    if let Some((frame, binding)) = local {
        return AssistantResponse::new(
            format!(
                "Before changing any code I need one more fact. What is the value of `{}` in `{}` when the exception is thrown?",
                binding.name,
                frame.short_function_name()
            ),
            Payload::InfoNeed {
                kind: InfoNeedKind::VariableValue,
                target: binding.name.clone(),
            },
        );
    }
    let target = ctx
        .map(|c| c.exception.thrown_at.key())
        .unwrap_or_else(|| "exception".into());
    AssistantResponse::new(
        format!(
            "Before changing any code I need one more fact. What do you see at {target} when the exception is thrown?"
        ),
        Payload::InfoNeed {
            kind: InfoNeedKind::Observation,
            target,
        },
    )
}

/// One collaborative turn: ask, instruct, hypothesize, answer a meta
/// question, or propose a fix once the cause is confirmed.
pub fn collaborative_respond(
    state: &ConversationState,
    ctx: Option<&DebugContext>,
    gateway: &Gateway,
    llm: &mut LlmSession,
) -> Result<AssistantResponse, ResponderError> {
    if state.pattern_mode != PatternMode::CollaborativeIE {
        return Err(ResponderError::Precondition(format!(
            "collaborative responder called in {:?} mode",
            state.pattern_mode
        )));
    }
    if state.is_done() {
        return Err(ResponderError::Precondition("the base pair is closed".into()));
    }
    let channel = if state.top().is_some_and(|f| f.is_meta_insert()) {
        Channel::Meta
    } else {
        Channel::Main
    };
    let out = gateway.call(llm, AgentRole::CollaborativeResponder, channel, state, &summary(ctx))?;
    let parsed = parse_response(&out.text, ctx);
    match vet_collaborative(state, ctx, parsed) {
        Ok(r) => Ok(r),
        Err(
            e @ (ResponderError::IllegalForPhase { .. }
            | ResponderError::Ungrounded(_)
            | ResponderError::IllegalAnswer
            | ResponderError::Malformed),
        ) => {
            tracing::warn!(error = %e, "substituting a clarifying request");
            Ok(clarifying_request(ctx))
        }
        Err(e) => Err(e),
    }
}

/// Whether the developer's reply to a fix proposal accepts it.
pub fn classify_fix_reply(text: &str) -> bool {
    let lower = text.to_lowercase();
    let words: Vec<&str> = lower
        .split(|c: char| !c.is_alphanumeric() && c != '\'')
        .filter(|w| !w.is_empty())
        .collect();
    const REJECT: &[&str] = &[
        "no", "not", "nope", "don't", "doesn't", "didn't", "isn't", "won't", "wrong", "still", "fails", "failed",
        "reject",
    ];
    if words.iter().any(|w| REJECT.contains(w)) {
        return false;
    }
    !words.is_empty()
}

/// Whether a developer acknowledgement confirms what was proposed.
pub fn is_affirmative(text: &str) -> bool {
    let lower = text.to_lowercase();
    let words: Vec<&str> = lower
        .split(|c: char| !c.is_alphanumeric() && c != '\'')
        .filter(|w| !w.is_empty())
        .collect();
    const YES: &[&str] = &[
        "yes",
        "yeah",
        "yep",
        "right",
        "correct",
        "confirmed",
        "indeed",
        "true",
        "exactly",
        "agreed",
    ];
    classify_fix_reply(text)
        && (words.iter().any(|w| YES.contains(w)) || lower.contains("that's it") || lower.contains("makes sense"))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::conversation::{PhaseEvidence, Utterance};
    use crate::debug_context::{capture_context, DebugAdapter};
    use crate::llm::ScriptedBackend;
    use crate::scenario::ScenarioSet;

    struct Fixture {
        gateway: Gateway,
        ctx: DebugContext,
        llm: LlmSession,
        state: ConversationState,
    }

    fn fixture(id: &str, mode: PatternMode) -> Fixture {
        let set = Arc::new(ScenarioSet::bundled());
        let scenario = set.get(id).unwrap().clone();
        let ctx = capture_context(&mut DebugAdapter::simulated(&scenario).unwrap()).unwrap();
        let state = ConversationState::open_session(Utterance::user(
            0,
            DialogueAct::PrimaryRequest,
            scenario.scripted_user.opening.clone(),
        ))
        .unwrap();
        let state = if mode == PatternMode::Unset {
            state
        } else {
            state.set_pattern_mode(mode).unwrap()
        };
        Fixture {
            gateway: Gateway::new(Arc::new(ScriptedBackend::new(set))),
            ctx,
            llm: LlmSession::new(Some(scenario.id)),
            state,
        }
    }

    #[test]
    fn routing() {
        for (id, want) in [
            ("warmup", HardnessMode::OneShot),
            ("task1", HardnessMode::Collaborative),
            ("task2", HardnessMode::Collaborative),
        ] {
            let mut f = fixture(id, PatternMode::Unset);
            let v = classify_hardness(&f.state, Some(&f.ctx), &f.gateway, &mut f.llm);
            assert_eq!(v.mode, want, "{id}");
            assert_eq!(heuristic_verdict(&f.ctx).mode, want, "{id} heuristic");
        }
        let mut f = fixture("task1", PatternMode::Unset);
        let v = classify_hardness(&f.state, None, &f.gateway, &mut f.llm);
        assert_eq!(v.mode, HardnessMode::Collaborative);
    }

    #[test]
    fn eager_preconditions_and_symptom_patch() {
        let mut f = fixture("task1", PatternMode::CollaborativeIE);
        assert!(matches!(
            eager_respond(&f.state, Some(&f.ctx), &f.gateway, &mut f.llm),
            Err(ResponderError::Precondition(_))
        ));
        let mut f = fixture("task1", PatternMode::EagerQA);
        let r = eager_respond(&f.state, Some(&f.ctx), &f.gateway, &mut f.llm).unwrap();
        assert_eq!(r.act, DialogueAct::FixProposal);
        assert_eq!(r.payload.fix_id(), Some("guard-empty-json"));
    }

    #[test]
    fn collaborative_first_turn_asks_for_serialized() {
        let mut f = fixture("task1", PatternMode::CollaborativeIE);
        let r = collaborative_respond(&f.state, Some(&f.ctx), &f.gateway, &mut f.llm).unwrap();
        assert_eq!(
            r.payload,
            Payload::InfoNeed {
                kind: InfoNeedKind::VariableValue,
                target: "serialized".into()
            }
        );
    }

    #[test]
    fn premature_fix_is_rejected() {
        let f = fixture("task1", PatternMode::CollaborativeIE);
        let fix = AssistantResponse::new(
            "Reset the stream.",
            Payload::Fix {
                fix_id: Some("reset-stream-position".into()),
                diff_text: String::new(),
                explanation: String::new(),
            },
        );
        assert!(matches!(
            vet_collaborative(&f.state, Some(&f.ctx), fix.clone()),
            Err(ResponderError::IllegalForPhase {
                phase: DebugPhase::Identification,
                ..
            })
        ));
        let fixing = f
            .state
            .advance_phase(&PhaseEvidence::ExceptionUnderstood)
            .unwrap()
            .advance_phase(&PhaseEvidence::RootFrameNamed {
                function_name: "ToJson".into(),
            })
            .unwrap()
            .advance_phase(&PhaseEvidence::CauseExplained)
            .unwrap();
        assert!(vet_collaborative(&fixing, Some(&f.ctx), fix).is_ok());
    }

    #[test]
    fn ungrounded_requests_are_rejected() {
        let f = fixture("task2", PatternMode::CollaborativeIE);
        let bad = AssistantResponse::new(
            "Inspect `counter` at Nowhere.cs:3.",
            Payload::Instruction {
                steps: vec![DebuggerStep::set_breakpoint(SourceLocation::new("Nowhere.cs", 3))],
            },
        );
        assert!(matches!(
            vet_collaborative(&f.state, Some(&f.ctx), bad),
            Err(ResponderError::Ungrounded(_))
        ));
        let c = clarifying_request(Some(&f.ctx));
        assert_eq!(c.act, DialogueAct::InfoRequest);
        assert!(check_grounding(&c, Some(&f.ctx)).is_ok());
    }

    #[test]
    fn fix_replies() {
        assert!(classify_fix_reply("Thanks, that fixed it."));
        assert!(!classify_fix_reply(
            "That only hides the error; it is not the real fix."
        ));
        assert!(is_affirmative("Yes, stream is {Position = 36, Length = 36}."));
        assert!(!is_affirmative("No, isNegative is false."));
    }
}
