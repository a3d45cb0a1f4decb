//! Suggested next developer messages and the lexical check that keeps them
//! on the conversation's current thread.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conversation::{ConversationState, DialogueAct, Speaker};
use crate::debug_context::{location_identifiers, short_function, DebugContext, SourceLocation};
use crate::ident::{backticked, identifiers, tokens};
use crate::llm::{AgentRole, Channel, Gateway, LlmSession};
use crate::responders::{extract_json, AssistantResponse, InfoNeedKind, Payload, StepAction};

pub const FOLLOWUP_MAX: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FollowupKind {
    AnswerCandidate,
    MetaQuestion,
    NewTopic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Followup {
    pub text: String,
    pub kind: FollowupKind,
    pub anchor_entities: Vec<String>,
}

impl Followup {
    pub fn new(text: impl Into<String>, kind: FollowupKind, anchors: &[&str]) -> Self {
        Self {
            text: text.into(),
            kind,
            anchor_entities: anchors.iter().map(|a| a.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Misalignment {
    EmptyAnchors,
    /// An anchor does not occur in the follow-up's own text.
    AnchorNotInText,
    /// Answer candidates and meta-questions need an open request; new
    /// topics must wait until none is open.
    KindMismatch,
    EntityMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlignmentVerdict {
    Aligned,
    Misaligned(Misalignment),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FollowupError {
    #[error("follow-up precondition failed: {0}")]
    Precondition(String),
    #[error("no follow-up survived the alignment check")]
    NoneGenerated,
}

/// What the innermost open assistant request is waiting for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpenNeed {
    /// Target identifiers, most specific first.
    pub ids: Vec<String>,
    pub kind: Option<InfoNeedKind>,
    pub location: Option<SourceLocation>,
}

fn push_unique(ids: &mut Vec<String>, id: String) {
    if !ids.contains(&id) {
        ids.push(id);
    }
}

fn need_from_payload(payload: &Payload) -> Option<OpenNeed> {
    match payload {
        Payload::InfoNeed { kind, target } => {
            let (ids, location) = match (kind, SourceLocation::parse_key(target)) {
                (InfoNeedKind::Observation, Some(loc)) => (location_identifiers(&loc).into_iter().collect(), Some(loc)),
                _ => (vec![target.clone()], None),
            };
            Some(OpenNeed {
                ids,
                kind: Some(*kind),
                location,
            })
        }
        Payload::Instruction { steps } => {
            let mut ids = Vec::new();
            for s in steps.iter().filter(|s| s.action == StepAction::InspectVariable) {
                if let Some(v) = &s.variable {
                    push_unique(&mut ids, v.clone());
                }
            }
            let location = steps.iter().find_map(|s| s.location.clone());
            for s in steps {
                if let Some(loc) = &s.location {
                    if let Some(f) = &loc.function {
                        push_unique(&mut ids, short_function(f).to_string());
                    }
                    for id in location_identifiers(loc) {
                        push_unique(&mut ids, id);
                    }
                }
            }
            Some(OpenNeed {
                ids,
                kind: None,
                location,
            })
        }
        _ => None,
    }
}

/// The open assistant request, if any. Its payload is known when
/// `last_response` opened it; otherwise the identifiers quoted in the
/// opening turn stand in for the target.
pub fn open_need(state: &ConversationState, last_response: &AssistantResponse) -> Option<OpenNeed> {
    let frame = state.open_frames().filter(|f| f.is_assistant_insert()).last()?;
    let opener = state.transcript.get(frame.opener_turn as usize)?;
    if opener.speaker == Speaker::Assistant && opener.text == last_response.body {
        if let Some(need) = need_from_payload(&last_response.payload) {
            return Some(need);
        }
    }
    let mut ids = backticked(&opener.text);
    if ids.is_empty() {
        ids = identifiers(&opener.text).into_iter().collect();
    }
    Some(OpenNeed {
        ids,
        kind: None,
        location: None,
    })
}

fn response_identifiers(r: &AssistantResponse) -> BTreeSet<String> {
    let mut out = identifiers(&r.body);
    match &r.payload {
        Payload::Fix {
            diff_text, explanation, ..
        } => {
            out.extend(identifiers(diff_text));
            out.extend(identifiers(explanation));
        }
        Payload::Hypothesis { cause, .. } => out.extend(identifiers(cause)),
        _ => {}
    }
    out
}

pub fn check_alignment(
    f: &Followup,
    state: &ConversationState,
    last_response: &AssistantResponse,
    ctx: Option<&DebugContext>,
) -> AlignmentVerdict {
    use AlignmentVerdict::*;
    if f.anchor_entities.is_empty() {
        return Misaligned(Misalignment::EmptyAnchors);
    }
    let in_text = tokens(&f.text);
    if !f.anchor_entities.iter().all(|a| in_text.contains(a)) {
        return Misaligned(Misalignment::AnchorNotInText);
    }
    let allowed: BTreeSet<String> = match open_need(state, last_response) {
        Some(need) => {
            if f.kind == FollowupKind::NewTopic {
                return Misaligned(Misalignment::KindMismatch);
            }
            need.ids.into_iter().collect()
        }
        None => {
            if f.kind != FollowupKind::NewTopic {
                return Misaligned(Misalignment::KindMismatch);
            }
            let mut ids = response_identifiers(last_response);
            if let Some(ctx) = ctx {
                ids.extend(ctx.top_frame_identifiers());
            }
            ids
        }
    };
    if f.anchor_entities.iter().any(|a| allowed.contains(a)) {
        Aligned
    } else {
        Misaligned(Misalignment::EntityMismatch)
    }
}

/// Deterministic suggestions derived from the open request or the reply.
pub fn template_followups(
    state: &ConversationState,
    last_response: &AssistantResponse,
    ctx: Option<&DebugContext>,
) -> Vec<Followup> {
    let mut out = Vec::new();
    if let Some(need) = open_need(state, last_response) {
        let Some(target) = need.ids.first() else {
            return out;
        };
        let t = target.as_str();
        let answer = match (need.kind, ctx.and_then(|c| c.find_local(t))) {
            (Some(InfoNeedKind::MethodSource), _) => format!("Here is the code for the {t} method"),
            (_, Some(b)) if b.rendered_value.is_empty() => format!("{t} is an empty string"),
            (_, Some(b)) => format!("{t} is {}", b.rendered_value),
            _ => format!("I checked {t} and can tell you what it is"),
        };
        out.push(Followup::new(answer, FollowupKind::AnswerCandidate, &[t]));
        let function = need
            .location
            .as_ref()
            .and_then(|l| l.function.as_deref())
            .map(short_function);
        let meta = match (need.kind, function) {
            (Some(InfoNeedKind::MethodSource), _) => Followup::new(
                format!("Where is the {t} method defined?"),
                FollowupKind::MetaQuestion,
                &[t],
            ),
            (None, Some(f)) if need.ids.iter().any(|i| i == f) => Followup::new(
                format!("How do I set a breakpoint in {f}?"),
                FollowupKind::MetaQuestion,
                &[f],
            ),
            _ => Followup::new(
                format!("How to check the value of {t} during execution?"),
                FollowupKind::MetaQuestion,
                &[t],
            ),
        };
        out.push(meta);
        return out;
    }
    let topic = backticked(&last_response.body).into_iter().next().or_else(|| {
        ctx.and_then(|c| c.top_frame())
            .map(|f| f.short_function_name().to_string())
    });
    if let Some(t) = topic {
        out.push(Followup::new(
            format!("Can you explain more about {t}?"),
            FollowupKind::NewTopic,
            &[&t],
        ));
    }
    out
}

fn candidates_from_gateway(state: &ConversationState, gateway: &Gateway, llm: &mut LlmSession) -> Vec<Followup> {
    let Ok(out) = gateway.call(llm, AgentRole::FollowupGenerator, Channel::Main, state, "") else {
        return Vec::new();
    };
    extract_json(&out.text)
        .and_then(|obj| obj.get("followups").cloned())
        .and_then(|v| v.as_array().cloned())
        .unwrap_or_default()
        .into_iter()
        .filter_map(|v| serde_json::from_value(v).ok())
        .collect()
}

/// Dedupe, order answer candidates before meta-questions before new
/// topics, and cap the list while keeping one of each request kind.
fn finalize(pool: Vec<Followup>) -> Vec<Followup> {
    let mut seen = BTreeSet::new();
    let mut unique: Vec<Followup> = pool
        .into_iter()
        .filter(|f| seen.insert(f.text.trim().to_lowercase()))
        .collect();
    unique.sort_by_key(|f| f.kind);
    let mut out: Vec<Followup> = Vec::new();
    for kind in [FollowupKind::AnswerCandidate, FollowupKind::MetaQuestion] {
        if let Some(pos) = unique.iter().position(|f| f.kind == kind) {
            out.push(unique.remove(pos));
        }
    }
    let room = FOLLOWUP_MAX.saturating_sub(out.len());
    out.extend(unique.into_iter().take(room));
    out.sort_by_key(|f| f.kind);
    out.truncate(FOLLOWUP_MAX);
    out
}

/// One to three aligned follow-ups for the turn `last_response` just took.
/// The responder's own suggestions come first; the generator role is asked
/// once if they fall short, then templates fill the gap.
pub fn generate_followups(
    state: &ConversationState,
    last_response: &AssistantResponse,
    ctx: Option<&DebugContext>,
    gateway: &Gateway,
    llm: &mut LlmSession,
) -> Result<Vec<Followup>, FollowupError> {
    let last = state
        .last_utterance()
        .ok_or_else(|| FollowupError::Precondition("empty transcript".into()))?;
    if last.speaker != Speaker::Assistant || last.text != last_response.body {
        return Err(FollowupError::Precondition(
            "the response was not the latest turn".into(),
        ));
    }
    if state.is_done() {
        return Err(FollowupError::NoneGenerated);
    }
    let needs_pair = open_need(state, last_response).is_some();
    let satisfied = |pool: &[Followup]| {
        if needs_pair {
            pool.iter().any(|f| f.kind == FollowupKind::AnswerCandidate)
                && pool.iter().any(|f| f.kind == FollowupKind::MetaQuestion)
        } else {
            !pool.is_empty()
        }
    };
    let aligned = |f: &Followup| check_alignment(f, state, last_response, ctx) == AlignmentVerdict::Aligned;

    let mut pool: Vec<Followup> = last_response.followups.iter().filter(|f| aligned(f)).cloned().collect();
    if !satisfied(&pool) {
        pool.extend(
            candidates_from_gateway(state, gateway, llm)
                .into_iter()
                .filter(|f| aligned(f)),
        );
    }
    if !satisfied(&pool) {
        let have: BTreeSet<FollowupKind> = pool.iter().map(|f| f.kind).collect();
        pool.extend(
            template_followups(state, last_response, ctx)
                .into_iter()
                .filter(|f| aligned(f) && !(needs_pair && have.contains(&f.kind))),
        );
    }
    let out = finalize(pool);
    if out.is_empty() {
        return Err(FollowupError::NoneGenerated);
    }
    Ok(out)
}

/// Act a clicked follow-up declares, when its kind fixes one.
pub fn declared_act(kind: FollowupKind) -> Option<DialogueAct> {
    match kind {
        FollowupKind::AnswerCandidate => Some(DialogueAct::InfoProvision),
        FollowupKind::MetaQuestion => Some(DialogueAct::MetaQuestion),
        FollowupKind::NewTopic => None,
    }
}
