//! Oracles and generators shared by the integration suites.
#![allow(dead_code)]

use dbgchat_core::conversation::{ConversationState, DialogueAct, FrameKind, Speaker, StateEffect, Utterance};
use dbgchat_core::debug_context::wire::{encode_message, Decoder, MessageKind, WireMessage};
use proptest::prelude::*;
use serde_json::{json, Map, Value};

pub const SPEAKERS: [Speaker; 2] = [Speaker::User, Speaker::Assistant];

pub fn all_moves() -> Vec<(Speaker, DialogueAct)> {
    SPEAKERS
        .iter()
        .flat_map(|&s| DialogueAct::ALL.iter().map(move |&a| (s, a)))
        .collect()
}

pub fn opened(max_depth: usize) -> ConversationState {
    ConversationState::open_session_with_depth(Utterance::user(0, DialogueAct::PrimaryRequest, "why?"), max_depth)
        .unwrap()
}

pub fn utter(state: &ConversationState, speaker: Speaker, act: DialogueAct) -> Utterance {
    let i = state.next_turn_index();
    match speaker {
        Speaker::User => Utterance::user(i, act, "u"),
        Speaker::Assistant => Utterance::assistant(i, act, "a"),
    }
}

/// Reference model: the open stack as a string of frame tags.
/// `B` base pair, `A` assistant insert, `M` developer meta-question.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Oracle {
    pub stack: Vec<char>,
    pub done: bool,
    pub max: usize,
}

impl Oracle {
    pub fn new(max: usize) -> Self {
        Self {
            stack: vec!['B'],
            done: false,
            max,
        }
    }

    pub fn step(&self, speaker: Speaker, act: DialogueAct) -> Option<Oracle> {
        use DialogueAct::*;
        if self.done {
            return None;
        }
        let top = *self.stack.last()?;
        let mut next = self.clone();
        let room = self.stack.len() < self.max;
        match (speaker, act) {
            (Speaker::Assistant, InfoRequest | InstructionStep) if room => next.stack.push('A'),
            (Speaker::User, MetaQuestion) if top == 'A' && room => next.stack.push('M'),
            (Speaker::User, InfoProvision) if top == 'A' => {
                next.stack.pop();
            }
            (Speaker::Assistant, Answer) if top == 'M' => {
                next.stack.pop();
            }
            (Speaker::Assistant, Answer) if top == 'B' => {
                next.stack.pop();
                next.done = true;
            }
            (Speaker::Assistant, HypothesisProposal | FixProposal) => {}
            (Speaker::User, Acknowledgement) => {}
            _ => return None,
        }
        Some(next)
    }

    pub fn close_base(&self) -> Option<Oracle> {
        (!self.done && self.stack == ['B']).then(|| Oracle {
            stack: Vec::new(),
            done: true,
            max: self.max,
        })
    }
}

pub fn shape(state: &ConversationState) -> Vec<char> {
    state
        .open_frames()
        .map(|f| match (f.kind, f.opener_act) {
            (FrameKind::BasePair, _) => 'B',
            (_, DialogueAct::MetaQuestion) => 'M',
            _ => 'A',
        })
        .collect()
}

pub fn agrees(state: &ConversationState, oracle: &Oracle) -> Result<(), String> {
    if shape(state) == oracle.stack && state.is_done() == oracle.done {
        Ok(())
    } else {
        Err(format!(
            "machine {:?} (done {}) vs oracle {:?}",
            shape(state),
            state.is_done(),
            oracle
        ))
    }
}

/// Frames close innermost first, and the base pair closes after every insert.
pub fn check_structure(state: &ConversationState) -> Result<(), String> {
    let frames = &state.frames;
    for (i, f) in frames.iter().enumerate() {
        let Some(fc) = f.closer_turn else { continue };
        for g in &frames[i + 1..] {
            // g was opened inside f, so it must be closed no later than f.
            if g.opener_turn < fc && !matches!(g.closer_turn, Some(gc) if gc <= fc) {
                return Err(format!(
                    "frame opened at {} closed at {fc} while inner frame opened at {} is {:?}",
                    f.opener_turn, g.opener_turn, g.closer_turn
                ));
            }
        }
    }
    let bases: Vec<_> = frames.iter().filter(|f| f.kind == FrameKind::BasePair).collect();
    if bases.len() != 1 {
        return Err(format!("{} base pairs", bases.len()));
    }
    if let Some(bc) = bases[0].closer_turn {
        for f in frames.iter().filter(|f| f.kind == FrameKind::InsertExpansion) {
            if !matches!(f.closer_turn, Some(c) if c <= bc) {
                return Err(format!("insert opened at {} outlived the base pair", f.opener_turn));
            }
        }
    }
    if state.depth() > state.max_expansion_depth() {
        return Err(format!("depth {} over the limit", state.depth()));
    }
    Ok(())
}

/// `legal_next_acts` is exactly the set of moves `apply_utterance` accepts.
pub fn check_totality(state: &ConversationState) -> Result<(), String> {
    let legal = state.legal_next_acts();
    for (s, a) in all_moves() {
        let accepted = state.apply_utterance(utter(state, s, a)).is_ok();
        if accepted != legal.contains(&(s, a)) {
            return Err(format!(
                "{s:?} {a:?}: accepted={accepted}, listed={}",
                legal.contains(&(s, a))
            ));
        }
    }
    Ok(())
}

/// Drive a random legal sequence, checking every invariant after each move.
pub fn run_legal_sequence(max_depth: usize, picks: &[u16], close_at: Option<usize>) -> Result<(), String> {
    let mut state = opened(max_depth);
    let mut oracle = Oracle::new(max_depth);
    for (i, pick) in picks.iter().enumerate() {
        if close_at == Some(i) {
            let closed = state.apply_effect(&StateEffect::CloseBase { fix_accepted: true });
            match (closed, oracle.close_base()) {
                (Ok(s), Some(o)) => {
                    state = s;
                    oracle = o;
                }
                (Err(_), None) => {}
                (got, want) => return Err(format!("close_base: machine {:?}, oracle {:?}", got.is_ok(), want)),
            }
        }
        let legal: Vec<_> = state.legal_next_acts().into_iter().collect();
        if legal.is_empty() {
            if !state.is_done() {
                return Err("no legal move in an open session".into());
            }
            break;
        }
        let (s, a) = legal[*pick as usize % legal.len()];
        state = state.apply_utterance(utter(&state, s, a)).map_err(|e| e.to_string())?;
        oracle = oracle
            .step(s, a)
            .ok_or_else(|| format!("oracle rejects listed {s:?} {a:?}"))?;
        agrees(&state, &oracle)?;
        check_structure(&state)?;
        check_totality(&state)?;
    }
    Ok(())
}

pub fn legal_sequence_strategy() -> impl Strategy<Value = (usize, Vec<u16>, Option<usize>)> {
    (
        1usize..=6,
        prop::collection::vec(any::<u16>(), 1..40),
        prop::option::of(0usize..40),
    )
}

/// Walk every sequence of at most `remaining` further moves (utterances and
/// base closure), comparing with the oracle at each node. Returns the
/// number of states visited.
pub fn explore(state: &ConversationState, oracle: &Oracle, remaining: usize) -> Result<usize, String> {
    agrees(state, oracle)?;
    check_structure(state)?;
    let mut visited = 1;
    let legal = state.legal_next_acts();
    for (s, a) in all_moves() {
        let expected = oracle.step(s, a);
        if legal.contains(&(s, a)) != expected.is_some() {
            return Err(format!("{s:?} {a:?} listed={} at {oracle:?}", legal.contains(&(s, a))));
        }
        let got = state.apply_utterance(utter(state, s, a));
        match (got, expected) {
            (Ok(next), Some(o)) if remaining > 0 => visited += explore(&next, &o, remaining - 1)?,
            (Ok(_), Some(_)) | (Err(_), None) => {}
            (got, _) => return Err(format!("{s:?} {a:?}: machine {:?} at {oracle:?}", got.is_ok())),
        }
    }
    match (state.close_base(true), oracle.close_base()) {
        (Ok(next), Some(o)) if remaining > 0 => visited += explore(&next, &o, remaining - 1)?,
        (Ok(_), Some(_)) | (Err(_), None) => {}
        (got, _) => return Err(format!("close_base: machine {:?} at {oracle:?}", got.is_ok())),
    }
    Ok(visited)
}

pub fn exhaustive_equivalence(max_len: usize) -> Result<usize, String> {
    let mut total = 0;
    for max_depth in [1, 2, 3, 4] {
        total += explore(&opened(max_depth), &Oracle::new(max_depth), max_len)?;
    }
    Ok(total)
}

// ------------------------------------------------------------------ wire

pub fn corpus() -> Vec<WireMessage> {
    vec![
        WireMessage::request(1, "stackTrace", json!({"threadId": 1, "startFrame": 0, "levels": 32})).unwrap(),
        WireMessage::response(
            2,
            1,
            "stackTrace",
            json!({"stackFrames": [{"id": 1000, "name": "Demo.PersonStore.FromJson", "line": 37,
                   "source": {"path": "PersonStore.cs"}}], "totalFrames": 4}),
        )
        .unwrap(),
        WireMessage::event(
            3,
            "stopped",
            json!({"reason": "exception", "threadId": 1, "text": "ünïcødé ✓"}),
        )
        .unwrap(),
    ]
}

pub fn encode_all(msgs: &[WireMessage]) -> Vec<u8> {
    msgs.iter().flat_map(|m| encode_message(m).unwrap()).collect()
}

/// Feed `bytes` in pieces cut at `cuts` (sorted) and collect the messages.
pub fn decode_in_pieces(bytes: &[u8], cuts: &[usize]) -> Result<Vec<WireMessage>, String> {
    let mut d = Decoder::default();
    let mut got = Vec::new();
    let mut start = 0;
    for &p in cuts.iter().chain([&bytes.len()]) {
        got.extend(d.feed(&bytes[start..p]).map_err(|e| e.to_string())?);
        start = p;
    }
    if !d.remainder().is_empty() {
        return Err(format!("{} bytes left over", d.remainder().len()));
    }
    Ok(got)
}

/// Every single split point of the corpus decodes to the same messages and
/// re-encodes to the same bytes.
pub fn check_all_split_points() -> Result<usize, String> {
    let msgs = corpus();
    let bytes = encode_all(&msgs);
    for cut in 0..=bytes.len() {
        let got = decode_in_pieces(&bytes, &[cut])?;
        if got != msgs {
            return Err(format!("split at {cut} decodes differently"));
        }
        if encode_all(&got) != bytes {
            return Err(format!("split at {cut} re-encodes differently"));
        }
    }
    Ok(bytes.len() + 1)
}

fn json_leaf() -> impl Strategy<Value = Value> {
    prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::Bool),
        any::<i64>().prop_map(|n| json!(n)),
        "[ -~\\PC]{0,24}".prop_map(Value::String),
    ]
}

fn json_value() -> impl Strategy<Value = Value> {
    json_leaf().prop_recursive(3, 24, 4, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..4).prop_map(Value::Array),
            prop::collection::btree_map("[a-zA-Z_]{1,8}", inner, 0..4)
                .prop_map(|m| Value::Object(m.into_iter().collect::<Map<_, _>>())),
        ]
    })
}

fn body() -> impl Strategy<Value = Value> {
    prop_oneof![
        Just(Value::Null),
        prop::collection::btree_map("[a-zA-Z_]{1,8}", json_value(), 0..5)
            .prop_map(|m| Value::Object(m.into_iter().collect::<Map<_, _>>())),
    ]
}

pub fn message() -> impl Strategy<Value = WireMessage> {
    let kind = prop_oneof![
        Just(MessageKind::Request),
        Just(MessageKind::Event),
        (1u64..10_000, any::<bool>(), prop::option::of("[ -~]{0,20}")).prop_map(|(request_seq, success, message)| {
            MessageKind::Response {
                request_seq,
                success,
                message,
            }
        }),
    ];
    (1u64..u64::MAX / 2, kind, "[a-zA-Z]{1,16}", body()).prop_map(|(seq, kind, name, body)| WireMessage {
        seq,
        kind,
        command_or_event: name,
        body,
    })
}

pub fn check_round_trip(msgs: &[WireMessage]) -> Result<(), String> {
    let bytes = encode_all(msgs);
    let got = decode_in_pieces(&bytes, &[])?;
    if got != msgs {
        return Err("decoded messages differ".into());
    }
    if encode_all(&got) != bytes {
        return Err("re-encoded bytes differ".into());
    }
    Ok(())
}
