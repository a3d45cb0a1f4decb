//! Turn-taking state machine for debugging conversations.
//!
//! A session starts with a base adjacency pair opened by the developer's
//! primary request. The assistant may defer its final answer by opening
//! insert expansions (asking for information or giving debugger
//! instructions); the developer may in turn open a nested meta-question
//! insert to ask how to obtain the requested information. Frames close in
//! LIFO order and the base pair always closes last.
//!
//! Every operation takes `&self` and returns a fresh [`ConversationState`].

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_MAX_EXPANSION_DEPTH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Speaker {
    User,
    Assistant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DialogueAct {
    PrimaryRequest,
    Answer,
    InfoRequest,
    InstructionStep,
    HypothesisProposal,
    FixProposal,
    InfoProvision,
    MetaQuestion,
    Acknowledgement,
}

impl DialogueAct {
    pub const ALL: [DialogueAct; 9] = [
        DialogueAct::PrimaryRequest,
        DialogueAct::Answer,
        DialogueAct::InfoRequest,
        DialogueAct::InstructionStep,
        DialogueAct::HypothesisProposal,
        DialogueAct::FixProposal,
        DialogueAct::InfoProvision,
        DialogueAct::MetaQuestion,
        DialogueAct::Acknowledgement,
    ];

    /// Whether `speaker` may perform this act at all.
    pub fn allowed_for(self, speaker: Speaker) -> bool {
        use DialogueAct::*;
        match self {
            PrimaryRequest | InfoProvision | MetaQuestion => speaker == Speaker::User,
            InfoRequest | InstructionStep | HypothesisProposal | FixProposal => speaker == Speaker::Assistant,
            Answer | Acknowledgement => true,
        }
    }

    /// Acts that open an insert expansion when accepted.
    pub fn opens_insert(self) -> bool {
        matches!(
            self,
            DialogueAct::InfoRequest | DialogueAct::InstructionStep | DialogueAct::MetaQuestion
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Origin {
    #[default]
    Typed,
    FollowupClick,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
    pub act: DialogueAct,
    pub turn_index: u32,
    #[serde(default)]
    pub origin: Origin,
}

impl Utterance {
    pub fn user(turn_index: u32, act: DialogueAct, text: impl Into<String>) -> Self {
        Self {
            speaker: Speaker::User,
            text: text.into(),
            act,
            turn_index,
            origin: Origin::Typed,
        }
    }

    pub fn assistant(turn_index: u32, act: DialogueAct, text: impl Into<String>) -> Self {
        Self {
            speaker: Speaker::Assistant,
            text: text.into(),
            act,
            turn_index,
            origin: Origin::Typed,
        }
    }

    pub fn clicked(mut self) -> Self {
        self.origin = Origin::FollowupClick;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrameKind {
    BasePair,
    InsertExpansion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrameStatus {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceFrame {
    pub kind: FrameKind,
    pub opener_turn: u32,
    pub opener_act: DialogueAct,
    pub status: FrameStatus,
    pub closer_turn: Option<u32>,
}

impl SequenceFrame {
    fn open(kind: FrameKind, opener_turn: u32, opener_act: DialogueAct) -> Self {
        Self {
            kind,
            opener_turn,
            opener_act,
            status: FrameStatus::Open,
            closer_turn: None,
        }
    }

    pub fn is_open(&self) -> bool {
        self.status == FrameStatus::Open
    }

    /// Insert opened by the assistant (information request or instruction).
    pub fn is_assistant_insert(&self) -> bool {
        self.kind == FrameKind::InsertExpansion
            && matches!(self.opener_act, DialogueAct::InfoRequest | DialogueAct::InstructionStep)
    }

    /// Insert opened by the user asking how to obtain requested information.
    pub fn is_meta_insert(&self) -> bool {
        self.kind == FrameKind::InsertExpansion && self.opener_act == DialogueAct::MetaQuestion
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DebugPhase {
    Identification,
    Localization,
    Comprehension,
    Fixing,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum PatternMode {
    #[default]
    Unset,
    EagerQA,
    CollaborativeIE,
}

/// What the orchestrator observed that justifies a phase change.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum PhaseEvidence {
    ExceptionUnderstood,
    RootFrameNamed { function_name: String },
    CauseExplained,
}

impl PhaseEvidence {
    fn target(&self) -> DebugPhase {
        match self {
            PhaseEvidence::ExceptionUnderstood => DebugPhase::Localization,
            PhaseEvidence::RootFrameNamed { .. } => DebugPhase::Comprehension,
            PhaseEvidence::CauseExplained => DebugPhase::Fixing,
        }
    }
}

/// Identifies which clause of the transition relation rejected a move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rule {
    TurnOrder,
    SpeakerAct,
    SessionDone,
    BaseUnique,
    /// (b) info provision needs an assistant-opened insert on top.
    InfoProvision,
    /// (c) meta-question needs an assistant-opened insert on top.
    MetaQuestion,
    /// (d)/(e) answers close a meta insert or the base pair only.
    Answer,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let id = match self {
            Rule::TurnOrder => "turn-order",
            Rule::SpeakerAct => "speaker-act",
            Rule::SessionDone => "session-done",
            Rule::BaseUnique => "base-unique",
            Rule::InfoProvision => "b",
            Rule::MetaQuestion => "c",
            Rule::Answer => "d/e",
        };
        f.write_str(id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConversationError {
    #[error("rejected {act:?} from {speaker:?}: {reason}")]
    RejectedAct {
        speaker: Speaker,
        act: DialogueAct,
        reason: String,
    },
    #[error("illegal transition (rule {rule}): {detail}")]
    IllegalTransition { rule: Rule, detail: String },
    #[error("opening another insert would exceed the maximum depth of {max}")]
    DepthExceeded { max: usize },
    #[error("{open} insert expansion(s) are still open")]
    OpenInsertsRemain { open: usize },
    #[error("cannot move from {from:?} to {to:?} in a single step")]
    IllegalPhaseJump { from: DebugPhase, to: DebugPhase },
    #[error("the conversation is already done")]
    AlreadyDone,
    #[error("pattern mode is already {0:?}")]
    PatternModeAlreadySet(PatternMode),
}

fn illegal(rule: Rule, detail: impl Into<String>) -> ConversationError {
    ConversationError::IllegalTransition {
        rule,
        detail: detail.into(),
    }
}

/// A state change applied outside of an utterance, recorded so that
/// persisted sessions can be replayed exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum StateEffect {
    SetPatternMode { mode: PatternMode },
    AdvancePhase { evidence: PhaseEvidence },
    CloseBase { fix_accepted: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StackChange {
    Push,
    CloseTop,
    CloseBase,
    Nothing,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationState {
    #[serde(rename = "turns")]
    pub transcript: Vec<Utterance>,
    /// Every frame ever opened, in opening order. The open ones form the
    /// current expansion stack.
    pub frames: Vec<SequenceFrame>,
    pub phase: DebugPhase,
    pub pattern_mode: PatternMode,
    #[serde(skip, default = "default_max_depth")]
    max_expansion_depth: usize,
}

fn default_max_depth() -> usize {
    DEFAULT_MAX_EXPANSION_DEPTH
}

impl ConversationState {
    pub fn open_session(initial_request: Utterance) -> Result<Self, ConversationError> {
        Self::open_session_with_depth(initial_request, DEFAULT_MAX_EXPANSION_DEPTH)
    }

    pub fn open_session_with_depth(
        initial_request: Utterance,
        max_expansion_depth: usize,
    ) -> Result<Self, ConversationError> {
        let reject = |reason: &str| ConversationError::RejectedAct {
            speaker: initial_request.speaker,
            act: initial_request.act,
            reason: reason.to_string(),
        };
        if initial_request.speaker != Speaker::User {
            return Err(reject("only the developer can open a session"));
        }
        if initial_request.act != DialogueAct::PrimaryRequest {
            return Err(reject("a session must open with a primary request"));
        }
        if initial_request.turn_index != 0 {
            return Err(reject("the opening request must have turn index 0"));
        }
        if initial_request.origin == Origin::FollowupClick {
            return Err(reject("there are no follow-ups before the first turn"));
        }
        Ok(Self {
            frames: vec![SequenceFrame::open(FrameKind::BasePair, 0, DialogueAct::PrimaryRequest)],
            transcript: vec![initial_request],
            phase: DebugPhase::Identification,
            pattern_mode: PatternMode::Unset,
            max_expansion_depth,
        })
    }

    pub fn max_expansion_depth(&self) -> usize {
        self.max_expansion_depth
    }

    /// Number of open frames, base pair included.
    pub fn depth(&self) -> usize {
        self.frames.iter().filter(|f| f.is_open()).count()
    }

    pub fn open_frames(&self) -> impl Iterator<Item = &SequenceFrame> {
        self.frames.iter().filter(|f| f.is_open())
    }

    pub fn top(&self) -> Option<&SequenceFrame> {
        self.frames.iter().rev().find(|f| f.is_open())
    }

    pub fn is_done(&self) -> bool {
        self.phase == DebugPhase::Done
    }

    pub fn next_turn_index(&self) -> u32 {
        self.transcript.len() as u32
    }

    pub fn last_utterance(&self) -> Option<&Utterance> {
        self.transcript.last()
    }

    pub fn open_inserts(&self) -> usize {
        self.open_frames()
            .filter(|f| f.kind == FrameKind::InsertExpansion)
            .count()
    }

    fn classify(&self, speaker: Speaker, act: DialogueAct) -> Result<StackChange, ConversationError> {
        if self.is_done() {
            return Err(illegal(Rule::SessionDone, "the base pair is closed"));
        }
        let Some(top) = self.top() else {
            return Err(illegal(Rule::SessionDone, "no open frame"));
        };
        if !act.allowed_for(speaker) {
            return Err(illegal(Rule::SpeakerAct, format!("{speaker:?} cannot perform {act:?}")));
        }
        let push = || {
            if self.depth() + 1 > self.max_expansion_depth {
                Err(ConversationError::DepthExceeded {
                    max: self.max_expansion_depth,
                })
            } else {
                Ok(StackChange::Push)
            }
        };
        use DialogueAct::*;
        match (speaker, act) {
            (Speaker::User, PrimaryRequest) => {
                Err(illegal(Rule::BaseUnique, "a session has exactly one primary request"))
            }
            (Speaker::Assistant, InfoRequest | InstructionStep) => push(),
            (Speaker::User, InfoProvision) if top.is_assistant_insert() => Ok(StackChange::CloseTop),
            (Speaker::User, InfoProvision) => Err(illegal(Rule::InfoProvision, "nothing was asked of the developer")),
            (Speaker::User, MetaQuestion) if top.is_assistant_insert() => push(),
            (Speaker::User, MetaQuestion) => Err(illegal(
                Rule::MetaQuestion,
                "a meta-question must follow an assistant request",
            )),
            (Speaker::Assistant, Answer) if top.is_meta_insert() => Ok(StackChange::CloseTop),
            (Speaker::Assistant, Answer) if top.kind == FrameKind::BasePair => Ok(StackChange::CloseBase),
            (Speaker::Assistant, Answer) => Err(illegal(
                Rule::Answer,
                "the assistant's own request is still awaiting the developer",
            )),
            (Speaker::Assistant, HypothesisProposal | FixProposal) | (Speaker::User, Acknowledgement) => {
                Ok(StackChange::Nothing)
            }
            _ => Err(illegal(Rule::SpeakerAct, format!("{speaker:?} cannot perform {act:?}"))),
        }
    }

    pub fn apply_utterance(&self, u: Utterance) -> Result<Self, ConversationError> {
        let expected = self.next_turn_index();
        if u.turn_index != expected {
            return Err(illegal(
                Rule::TurnOrder,
                format!("expected turn {expected}, got {}", u.turn_index),
            ));
        }
        if u.origin == Origin::FollowupClick && u.speaker != Speaker::User {
            return Err(ConversationError::RejectedAct {
                speaker: u.speaker,
                act: u.act,
                reason: "only the developer can click a follow-up".into(),
            });
        }
        let change = self.classify(u.speaker, u.act)?;
        let mut next = self.clone();
        let turn = u.turn_index;
        match change {
            StackChange::Push => next
                .frames
                .push(SequenceFrame::open(FrameKind::InsertExpansion, turn, u.act)),
            StackChange::CloseTop => next.close_top(turn),
            StackChange::CloseBase => {
                next.close_top(turn);
                next.phase = DebugPhase::Done;
            }
            StackChange::Nothing => {}
        }
        next.transcript.push(u);
        Ok(next)
    }

    fn close_top(&mut self, turn: u32) {
        if let Some(frame) = self.frames.iter_mut().rev().find(|f| f.is_open()) {
            frame.status = FrameStatus::Closed;
            frame.closer_turn = Some(turn);
        }
    }

    /// Close the base pair once every insert has been resolved.
    ///
    /// The closer turn is the latest recorded turn, which is strictly after
    /// the opening request whenever anything has been said in reply.
    pub fn close_base(&self, _fix_accepted: bool) -> Result<Self, ConversationError> {
        if self.is_done() {
            return Err(ConversationError::AlreadyDone);
        }
        let open = self.open_inserts();
        if open > 0 {
            return Err(ConversationError::OpenInsertsRemain { open });
        }
        let mut next = self.clone();
        let closer = self.next_turn_index().saturating_sub(1).max(1);
        next.close_top(closer);
        next.phase = DebugPhase::Done;
        Ok(next)
    }

    /// Every (speaker, act) pair that [`apply_utterance`](Self::apply_utterance)
    /// would accept as the next turn.
    pub fn legal_next_acts(&self) -> BTreeSet<(Speaker, DialogueAct)> {
        [Speaker::User, Speaker::Assistant]
            .into_iter()
            .flat_map(|s| DialogueAct::ALL.into_iter().map(move |a| (s, a)))
            .filter(|&(s, a)| self.classify(s, a).is_ok())
            .collect()
    }

    pub fn advance_phase(&self, evidence: &PhaseEvidence) -> Result<Self, ConversationError> {
        use DebugPhase::*;
        let from = self.phase;
        let to = evidence.target();
        let allowed = match (from, to) {
            (Done, _) => return Err(ConversationError::AlreadyDone),
            _ if from == to => true,
            (Identification, Localization)
            | (Localization, Comprehension)
            | (Comprehension, Localization)
            | (Comprehension, Fixing) => true,
            _ => false,
        };
        if !allowed {
            return Err(ConversationError::IllegalPhaseJump { from, to });
        }
        let mut next = self.clone();
        next.phase = to;
        Ok(next)
    }

    /// Pattern mode is chosen once per session.
    pub fn set_pattern_mode(&self, mode: PatternMode) -> Result<Self, ConversationError> {
        if self.pattern_mode != PatternMode::Unset {
            return Err(ConversationError::PatternModeAlreadySet(self.pattern_mode));
        }
        let mut next = self.clone();
        next.pattern_mode = mode;
        Ok(next)
    }

    pub fn apply_effect(&self, effect: &StateEffect) -> Result<Self, ConversationError> {
        match effect {
            StateEffect::SetPatternMode { mode } => self.set_pattern_mode(*mode),
            StateEffect::AdvancePhase { evidence } => self.advance_phase(evidence),
            StateEffect::CloseBase { fix_accepted } => self.close_base(*fix_accepted),
        }
    }

    /// Canonical JSON snapshot: `{turns, frames, phase, pattern_mode}`.
    pub fn snapshot_json(&self) -> String {
        serde_json::to_string(self).expect("conversation state always serializes")
    }

    /// Hex SHA-256 of [`snapshot_json`](Self::snapshot_json).
    pub fn snapshot_hash(&self) -> String {
        hex::encode(Sha256::digest(self.snapshot_json().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use DialogueAct::*;

    fn opened() -> ConversationState {
        ConversationState::open_session(Utterance::user(
            0,
            PrimaryRequest,
            "Why did I get this SerializationException?",
        ))
        .unwrap()
    }

    fn say(state: &ConversationState, speaker: Speaker, act: DialogueAct, text: &str) -> ConversationState {
        let u = Utterance {
            speaker,
            act,
            text: text.into(),
            turn_index: state.next_turn_index(),
            origin: Origin::Typed,
        };
        state.apply_utterance(u).unwrap()
    }

    #[test]
    fn open_session_creates_single_open_base() {
        let s = opened();
        assert_eq!(s.depth(), 1);
        assert_eq!(s.frames[0].kind, FrameKind::BasePair);
        assert_eq!(s.phase, DebugPhase::Identification);
        assert_eq!(s.pattern_mode, PatternMode::Unset);
        assert_eq!(s.transcript.len(), 1);
    }

    #[test]
    fn open_session_rejects_assistant_and_non_requests() {
        let err = ConversationState::open_session(Utterance::assistant(0, PrimaryRequest, "hi"));
        assert!(matches!(err, Err(ConversationError::RejectedAct { .. })));
        let err = ConversationState::open_session(Utterance::user(0, Acknowledgement, "ok"));
        assert!(matches!(err, Err(ConversationError::RejectedAct { .. })));
    }

    #[test]
    fn overflow_request_opens_in_identification() {
        let s = ConversationState::open_session(Utterance::user(
            0,
            PrimaryRequest,
            "How do I fix DeserializeIntegerHelper overflow?",
        ))
        .unwrap();
        assert_eq!(s.depth(), 1);
        assert_eq!(s.phase, DebugPhase::Identification);
    }

    #[test]
    fn insert_expansion_and_meta_question_nest() {
        let s = opened();
        let s = say(&s, Speaker::Assistant, InfoRequest, "What is the value of serialized?");
        assert_eq!(s.depth(), 2);
        let meta = say(
            &s,
            Speaker::User,
            MetaQuestion,
            "How to check the value of serialized during execution?",
        );
        assert_eq!(meta.depth(), 3);
        let answered = say(&s, Speaker::User, InfoProvision, "serialized is an empty string");
        assert_eq!(answered.depth(), 1);
    }

    #[test]
    fn meta_insert_closes_on_assistant_answer() {
        let s = opened();
        let s = say(&s, Speaker::Assistant, InfoRequest, "value of serialized?");
        let s = say(&s, Speaker::User, MetaQuestion, "how do I check it?");
        let s = say(&s, Speaker::Assistant, Answer, "Set a breakpoint and hover.");
        assert_eq!(s.depth(), 2);
        assert!(s.top().unwrap().is_assistant_insert());
    }

    #[test]
    fn answer_on_bare_base_finishes_session() {
        let s = say(&opened(), Speaker::Assistant, Answer, "Here you go.");
        assert!(s.is_done());
        assert!(s.legal_next_acts().is_empty());
    }

    #[test]
    fn answer_while_own_request_pending_is_illegal() {
        let s = say(&opened(), Speaker::Assistant, InfoRequest, "value?");
        let err = s
            .apply_utterance(Utterance::assistant(2, Answer, "never mind"))
            .unwrap_err();
        assert!(matches!(
            err,
            ConversationError::IllegalTransition { rule: Rule::Answer, .. }
        ));
    }

    #[test]
    fn depth_is_bounded() {
        let mut s = opened();
        for _ in 0..3 {
            s = say(&s, Speaker::Assistant, InfoRequest, "more?");
        }
        assert_eq!(s.depth(), 4);
        let err = s
            .apply_utterance(Utterance::assistant(s.next_turn_index(), InstructionStep, "step"))
            .unwrap_err();
        assert_eq!(err, ConversationError::DepthExceeded { max: 4 });
    }

    #[test]
    fn turn_order_is_enforced() {
        let err = opened()
            .apply_utterance(Utterance::assistant(5, InfoRequest, "value?"))
            .unwrap_err();
        assert!(matches!(
            err,
            ConversationError::IllegalTransition {
                rule: Rule::TurnOrder,
                ..
            }
        ));
    }

    #[test]
    fn assistant_cannot_click_followups() {
        let err = opened()
            .apply_utterance(Utterance::assistant(1, InfoRequest, "value?").clicked())
            .unwrap_err();
        assert!(matches!(err, ConversationError::RejectedAct { .. }));
    }

    #[test]
    fn close_base_requires_closed_inserts() {
        let done = opened().close_base(true).unwrap();
        assert!(done.is_done());
        let s = say(&opened(), Speaker::Assistant, InfoRequest, "value?");
        assert_eq!(
            s.close_base(true).unwrap_err(),
            ConversationError::OpenInsertsRemain { open: 1 }
        );
    }

    #[test]
    fn legal_acts_on_fresh_session() {
        let legal = opened().legal_next_acts();
        assert!(legal.contains(&(Speaker::Assistant, InfoRequest)));
        assert!(legal.contains(&(Speaker::Assistant, Answer)));
        assert!(legal.contains(&(Speaker::Assistant, FixProposal)));
        assert!(!legal.contains(&(Speaker::User, InfoProvision)));
    }

    #[test]
    fn legal_acts_with_assistant_insert_on_top() {
        let s = say(&opened(), Speaker::Assistant, InfoRequest, "value?");
        let legal = s.legal_next_acts();
        assert!(legal.contains(&(Speaker::User, InfoProvision)));
        assert!(legal.contains(&(Speaker::User, MetaQuestion)));
        assert!(!legal.contains(&(Speaker::Assistant, Answer)));
    }

    #[test]
    fn phase_table() {
        let s = opened();
        let l = s.advance_phase(&PhaseEvidence::ExceptionUnderstood).unwrap();
        assert_eq!(l.phase, DebugPhase::Localization);
        assert_eq!(
            l.advance_phase(&PhaseEvidence::CauseExplained).unwrap_err(),
            ConversationError::IllegalPhaseJump {
                from: DebugPhase::Localization,
                to: DebugPhase::Fixing
            }
        );
        let c = l
            .advance_phase(&PhaseEvidence::RootFrameNamed {
                function_name: "ToJson".into(),
            })
            .unwrap();
        assert_eq!(c.phase, DebugPhase::Comprehension);
        // Comprehension may fall back to localization.
        let back = c.advance_phase(&PhaseEvidence::ExceptionUnderstood).unwrap();
        assert_eq!(back.phase, DebugPhase::Localization);
        let f = c.advance_phase(&PhaseEvidence::CauseExplained).unwrap();
        assert_eq!(f.phase, DebugPhase::Fixing);
        assert!(matches!(
            f.advance_phase(&PhaseEvidence::ExceptionUnderstood),
            Err(ConversationError::IllegalPhaseJump { .. })
        ));
        assert_eq!(
            f.close_base(true)
                .unwrap()
                .advance_phase(&PhaseEvidence::CauseExplained)
                .unwrap_err(),
            ConversationError::AlreadyDone
        );
    }

    #[test]
    fn identification_cannot_skip_to_comprehension() {
        let err = opened()
            .advance_phase(&PhaseEvidence::RootFrameNamed {
                function_name: "x".into(),
            })
            .unwrap_err();
        assert!(matches!(err, ConversationError::IllegalPhaseJump { .. }));
    }

    #[test]
    fn pattern_mode_is_write_once() {
        let s = opened().set_pattern_mode(PatternMode::EagerQA).unwrap();
        assert_eq!(
            s.set_pattern_mode(PatternMode::CollaborativeIE).unwrap_err(),
            ConversationError::PatternModeAlreadySet(PatternMode::EagerQA)
        );
    }

    #[test]
    fn acknowledgement_changes_only_transcript() {
        let s = say(&opened(), Speaker::Assistant, InfoRequest, "value?");
        let acked = say(&s, Speaker::User, Acknowledgement, "Okay.");
        assert_eq!(acked.frames, s.frames);
        assert_eq!(acked.transcript.len(), s.transcript.len() + 1);
    }

    #[test]
    fn snapshot_uses_external_field_names() {
        let v: serde_json::Value = serde_json::from_str(&opened().snapshot_json()).unwrap();
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, ["frames", "pattern_mode", "phase", "turns"]);
        let back: ConversationState = serde_json::from_value(v).unwrap();
        assert_eq!(back, opened());
    }
}
