//! Append-only session log: one JSON header line, then one line per turn.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::SessionConfig;
use crate::conversation::{ConversationError, ConversationState, StateEffect, Utterance};
use crate::responders::{AssistantResponse, HardnessVerdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MetricKind {
    PromptSent,
    FollowupClicked,
    LocalizationDeclared,
    FixProposed,
    FixAccepted,
    SessionClosed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEvent {
    pub kind: MetricKind,
    pub turn_index: u32,
    pub data: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    /// The developer's message.
    pub utterance: Utterance,
    /// State changes applied after the message and before the reply.
    #[serde(default)]
    pub effects: Vec<StateEffect>,
    #[serde(default)]
    pub response: Option<AssistantResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<HardnessVerdict>,
    pub state_snapshot_hash: String,
    #[serde(default)]
    pub events: Vec<MetricEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub scenario_id: Option<String>,
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub config: SessionConfig,
    pub turns: Vec<TurnRecord>,
    pub metrics_events: Vec<MetricEvent>,
}

impl SessionRecord {
    pub fn events_of(&self, kind: MetricKind) -> impl Iterator<Item = &MetricEvent> {
        self.metrics_events.iter().filter(move |e| e.kind == kind)
    }

    pub fn responses(&self) -> impl Iterator<Item = &AssistantResponse> {
        self.turns.iter().filter_map(|t| t.response.as_ref())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    session_id: String,
    scenario_id: Option<String>,
    created_at: DateTime<Utc>,
    #[serde(default)]
    config: SessionConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line {
    Header(Header),
    Turn(Box<TurnRecord>),
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("session log I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("session log line {line}: {message}")]
    Format { line: usize, message: String },
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("turn {turn} does not replay: {source}")]
    Rejected { turn: usize, source: ConversationError },
    #[error("turn {turn} replays to {actual}, recorded {expected}")]
    HashMismatch {
        turn: usize,
        expected: String,
        actual: String,
    },
    #[error("the session has no turns")]
    Empty,
}

/// Directory of `<session_id>.jsonl` files.
#[derive(Debug, Clone)]
pub struct SessionStore {
    dir: PathBuf,
}

impl SessionStore {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self, RecordError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn path_for(&self, session_id: &str) -> PathBuf {
        self.dir.join(format!("{session_id}.jsonl"))
    }

    fn append(&self, session_id: &str, line: &Line) -> Result<(), RecordError> {
        let mut text = serde_json::to_string(line).map_err(|e| RecordError::Format {
            line: 0,
            message: e.to_string(),
        })?;
        text.push('\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.path_for(session_id))?;
        f.write_all(text.as_bytes())?;
        f.sync_data()?;
        Ok(())
    }

    pub fn write_header(&self, record: &SessionRecord) -> Result<(), RecordError> {
        self.append(
            &record.session_id,
            &Line::Header(Header {
                session_id: record.session_id.clone(),
                scenario_id: record.scenario_id.clone(),
                created_at: record.created_at,
                config: record.config.clone(),
            }),
        )
    }

    pub fn append_turn(&self, session_id: &str, turn: &TurnRecord) -> Result<(), RecordError> {
        self.append(session_id, &Line::Turn(Box::new(turn.clone())))
    }
}

pub fn load_record(path: &Path) -> Result<SessionRecord, RecordError> {
    let reader = BufReader::new(File::open(path)?);
    let mut header: Option<Header> = None;
    let mut turns = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line).map_err(|e| RecordError::Format {
            line: i + 1,
            message: e.to_string(),
        })?;
        match parsed {
            Line::Header(h) if header.is_none() && turns.is_empty() => header = Some(h),
            Line::Header(_) => {
                return Err(RecordError::Format {
                    line: i + 1,
                    message: "unexpected second header".into(),
                })
            }
            Line::Turn(t) => turns.push(*t),
        }
    }
    let h = header.ok_or(RecordError::Format {
        line: 1,
        message: "missing header".into(),
    })?;
    let metrics_events = turns.iter().flat_map(|t: &TurnRecord| t.events.clone()).collect();
    Ok(SessionRecord {
        session_id: h.session_id,
        scenario_id: h.scenario_id,
        created_at: h.created_at,
        config: h.config,
        turns,
        metrics_events,
    })
}

/// Apply one recorded turn to the state before it.
pub fn replay_turn(
    state: Option<ConversationState>,
    turn: &TurnRecord,
) -> Result<ConversationState, ConversationError> {
    let mut s = match state {
        None => ConversationState::open_session(turn.utterance.clone())?,
        Some(s) => s.apply_utterance(turn.utterance.clone())?,
    };
    for e in &turn.effects {
        s = s.apply_effect(e)?;
    }
    if let Some(r) = &turn.response {
        s = s.apply_utterance(Utterance::assistant(s.next_turn_index(), r.act, r.body.clone()))?;
    }
    Ok(s)
}

/// Rebuild the conversation from its utterances and effects, checking the
/// recorded snapshot hash after every turn.
pub fn replay(record: &SessionRecord) -> Result<ConversationState, ReplayError> {
    let mut state = None;
    for (i, turn) in record.turns.iter().enumerate() {
        let s = replay_turn(state, turn).map_err(|source| ReplayError::Rejected { turn: i, source })?;
        let actual = s.snapshot_hash();
        if actual != turn.state_snapshot_hash {
            return Err(ReplayError::HashMismatch {
                turn: i,
                expected: turn.state_snapshot_hash.clone(),
                actual,
            });
        }
        state = Some(s);
    }
    state.ok_or(ReplayError::Empty)
}
