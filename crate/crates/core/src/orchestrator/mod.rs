//! Session engine: routes each developer message through the state
//! machine, the responders and the follow-up generator, and logs every turn.

pub mod http;
mod record;

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex as StdMutex};

use chrono::Utc;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tokio::sync::Mutex;

use crate::conversation::{
    ConversationError, ConversationState, DebugPhase, DialogueAct, FrameKind, Origin, PatternMode, PhaseEvidence,
    Speaker, StateEffect, Utterance,
};
use crate::debug_context::{capture_context, AdapterError, DebugAdapter, DebugContext, SourceLocation};
use crate::followup::{declared_act, generate_followups, Followup};
use crate::llm::{Gateway, GatewayError, LiveBackend, LiveConfig, LlmBackend, LlmSession, ScriptedBackend};
use crate::responders::{
    classify_fix_reply, classify_hardness, collaborative_respond, eager_respond, is_affirmative, is_question,
    AssistantResponse, HardnessMode, HardnessVerdict, InfoNeedKind, Payload, ResponderError,
};
use crate::scenario::{Scenario, ScenarioError, ScenarioSet};

pub use record::{
    load_record, replay, replay_turn, MetricEvent, MetricKind, RecordError, ReplayError, SessionRecord, SessionStore,
    TurnRecord,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModeOverride {
    ForceEager,
    ForceCollaborative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Scripted,
    Live,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub scenario_id: Option<String>,
    pub mode_override: Option<ModeOverride>,
    pub backend: BackendKind,
    /// Debug adapter to launch instead of simulating the scenario's program.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adapter_command: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActView {
    pub speaker: Speaker,
    pub act: DialogueAct,
}

fn act_views(state: Option<&ConversationState>) -> Vec<ActView> {
    match state {
        None => vec![ActView {
            speaker: Speaker::User,
            act: DialogueAct::PrimaryRequest,
        }],
        Some(s) => s
            .legal_next_acts()
            .into_iter()
            .map(|(speaker, act)| ActView { speaker, act })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameView {
    pub kind: FrameKind,
    pub opener_turn: u32,
    pub opener_act: DialogueAct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateView {
    pub session_id: String,
    pub scenario_id: Option<String>,
    pub phase: DebugPhase,
    pub pattern_mode: PatternMode,
    pub depth: usize,
    /// Open frames, base first.
    pub stack: Vec<FrameView>,
    pub turns: Vec<Utterance>,
    pub done: bool,
    pub followups: Vec<Followup>,
    pub context: Option<DebugContext>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageOutcome {
    pub response: Option<AssistantResponse>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<HardnessVerdict>,
    pub state_view: StateView,
    pub legal_next_acts: Vec<ActView>,
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("no session {0}")]
    SessionNotFound(String),
    #[error("the session is closed")]
    SessionClosed,
    #[error("unknown scenario {0}")]
    UnknownScenario(String),
    #[error("message text is empty")]
    EmptyMessage,
    #[error("illegal transition: {source}")]
    IllegalTransition {
        source: ConversationError,
        legal_next_acts: Vec<ActView>,
    },
    #[error(transparent)]
    Responder(#[from] ResponderError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Persistence(#[from] RecordError),
}

impl From<ScenarioError> for OrchestratorError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::UnknownScenario(id) => OrchestratorError::UnknownScenario(id),
            other => OrchestratorError::UnknownScenario(other.to_string()),
        }
    }
}

/// A developer message as submitted by a client.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserMessage {
    pub text: String,
    #[serde(default)]
    pub origin: Origin,
    /// Explicit act; inferred from the conversation when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub act: Option<DialogueAct>,
}

impl UserMessage {
    pub fn typed(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            origin: Origin::Typed,
            act: None,
        }
    }

    pub fn clicked(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            origin: Origin::FollowupClick,
            act: None,
        }
    }
}

/// Act for a message that is not a click on an offered follow-up.
pub fn typed_act(state: &ConversationState, text: &str) -> DialogueAct {
    if state.top().is_some_and(|f| f.is_assistant_insert()) {
        if is_question(text) {
            DialogueAct::MetaQuestion
        } else {
            DialogueAct::InfoProvision
        }
    } else {
        DialogueAct::Acknowledgement
    }
}

pub struct Session {
    record: SessionRecord,
    state: Option<ConversationState>,
    ctx: Option<DebugContext>,
    scenario: Option<Arc<Scenario>>,
    gateway: Gateway,
    llm: LlmSession,
    mode_override: Option<ModeOverride>,
    responses: BTreeMap<u32, AssistantResponse>,
    followups: Vec<Followup>,
    localized: Vec<String>,
    store: Option<SessionStore>,
}

/// Everything one message produces, computed before anything is committed.
struct Pending {
    state: ConversationState,
    llm: LlmSession,
    turn: TurnRecord,
    response_turn: Option<u32>,
    localized: Vec<String>,
}

impl Session {
    pub fn id(&self) -> &str {
        &self.record.session_id
    }

    pub fn record(&self) -> &SessionRecord {
        &self.record
    }

    pub fn state(&self) -> Option<&ConversationState> {
        self.state.as_ref()
    }

    pub fn context(&self) -> Option<&DebugContext> {
        self.ctx.as_ref()
    }

    pub fn followups(&self) -> &[Followup] {
        &self.followups
    }

    pub fn is_done(&self) -> bool {
        self.state.as_ref().is_some_and(|s| s.is_done())
    }

    pub fn view(&self) -> StateView {
        let st = self.state.as_ref();
        StateView {
            session_id: self.record.session_id.clone(),
            scenario_id: self.record.scenario_id.clone(),
            phase: st.map_or(DebugPhase::Identification, |s| s.phase),
            pattern_mode: st.map_or(PatternMode::Unset, |s| s.pattern_mode),
            depth: st.map_or(0, |s| s.depth()),
            stack: st
                .map(|s| {
                    s.open_frames()
                        .map(|f| FrameView {
                            kind: f.kind,
                            opener_turn: f.opener_turn,
                            opener_act: f.opener_act,
                        })
                        .collect()
                })
                .unwrap_or_default(),
            turns: st.map(|s| s.transcript.clone()).unwrap_or_default(),
            done: st.is_some_and(|s| s.is_done()),
            followups: self.followups.clone(),
            context: self.ctx.clone(),
        }
    }

    pub fn legal_next_acts(&self) -> Vec<ActView> {
        act_views(self.state.as_ref())
    }

    fn latest_response(&self) -> Option<(u32, &AssistantResponse)> {
        self.responses.iter().next_back().map(|(t, r)| (*t, r))
    }

    fn illegal(&self, source: ConversationError) -> OrchestratorError {
        OrchestratorError::IllegalTransition {
            source,
            legal_next_acts: self.legal_next_acts(),
        }
    }

    /// Where the context places `function`.
    fn location_of(&self, function: &str) -> Option<SourceLocation> {
        let ctx = self.ctx.as_ref()?;
        ctx.known_locations()
            .find(|l| {
                l.function
                    .as_deref()
                    .is_some_and(|f| crate::debug_context::same_function(f, function))
            })
            .cloned()
            .or_else(|| {
                ctx.frames
                    .iter()
                    .find(|f| crate::debug_context::same_function(&f.function_name, function))
                    .map(|f| f.location.clone())
            })
    }

    fn declare(
        &self,
        localized: &mut Vec<String>,
        events: &mut Vec<MetricEvent>,
        turn: u32,
        function: &str,
        location: Option<SourceLocation>,
    ) {
        if localized
            .iter()
            .any(|f| crate::debug_context::same_function(f, function))
        {
            return;
        }
        localized.push(function.to_string());
        events.push(MetricEvent {
            kind: MetricKind::LocalizationDeclared,
            turn_index: turn,
            data: json!({ "function_name": function, "location": location }),
        });
    }

    /// Resolve the act of the incoming message and note follow-up clicks.
    fn resolve_act(&self, msg: &UserMessage, turn: u32, events: &mut Vec<MetricEvent>) -> (DialogueAct, Origin) {
        let Some(state) = &self.state else {
            return (msg.act.unwrap_or(DialogueAct::PrimaryRequest), Origin::Typed);
        };
        let offered = (msg.origin == Origin::FollowupClick)
            .then(|| self.followups.iter().find(|f| f.text.trim() == msg.text.trim()))
            .flatten();
        if let Some(f) = offered {
            events.push(MetricEvent {
                kind: MetricKind::FollowupClicked,
                turn_index: turn,
                data: json!({ "text": f.text, "kind": f.kind }),
            });
            let act = msg
                .act
                .or_else(|| declared_act(f.kind))
                .unwrap_or_else(|| typed_act(state, &msg.text));
            return (act, Origin::FollowupClick);
        }
        (msg.act.unwrap_or_else(|| typed_act(state, &msg.text)), Origin::Typed)
    }

    fn verdict_mode(&mut self, state: &ConversationState, llm: &mut LlmSession) -> (PatternMode, HardnessVerdict) {
        let verdict = match self.mode_override {
            Some(ModeOverride::ForceEager) => HardnessVerdict {
                mode: HardnessMode::OneShot,
                rationale: "forced by session configuration".into(),
                confidence: 1.0,
            },
            Some(ModeOverride::ForceCollaborative) => HardnessVerdict {
                mode: HardnessMode::Collaborative,
                rationale: "forced by session configuration".into(),
                confidence: 1.0,
            },
            None => classify_hardness(state, self.ctx.as_ref(), &self.gateway, llm),
        };
        let mode = match verdict.mode {
            HardnessMode::OneShot => PatternMode::EagerQA,
            HardnessMode::Collaborative => PatternMode::CollaborativeIE,
        };
        (mode, verdict)
    }

    /// Effects implied by a developer reply that is not the opening request.
    fn reply_effects(
        &self,
        state: &ConversationState,
        u: &Utterance,
        localized: &mut Vec<String>,
        events: &mut Vec<MetricEvent>,
    ) -> Vec<StateEffect> {
        let turn = u.turn_index;
        let Some((_, prev)) = self.latest_response() else {
            return Vec::new();
        };
        if prev.act == DialogueAct::FixProposal && u.act == DialogueAct::Acknowledgement {
            let accepted = classify_fix_reply(&u.text);
            if accepted {
                let fix_id = prev.payload.fix_id().map(str::to_string);
                events.push(MetricEvent {
                    kind: MetricKind::FixAccepted,
                    turn_index: turn,
                    data: json!({ "fix_id": fix_id }),
                });
                let fix_loc = fix_id
                    .as_deref()
                    .and_then(|id| self.scenario.as_ref()?.fix(id))
                    .and_then(|f| f.location.clone());
                if let Some(loc) = fix_loc {
                    let function = loc
                        .function
                        .clone()
                        .or_else(|| self.ctx.as_ref().and_then(|c| c.function_at(&loc)));
                    if let Some(function) = function {
                        self.declare(localized, events, turn, &function, Some(loc));
                    }
                }
            }
            if accepted || state.pattern_mode == PatternMode::EagerQA {
                events.push(MetricEvent {
                    kind: MetricKind::SessionClosed,
                    turn_index: turn,
                    data: json!({ "fix_accepted": accepted }),
                });
                return vec![StateEffect::CloseBase { fix_accepted: accepted }];
            }
            return Vec::new();
        }
        match (u.act, state.phase) {
            (DialogueAct::InfoProvision, phase) => {
                let opener = state
                    .frames
                    .iter()
                    .find(|f| f.closer_turn == Some(turn))
                    .and_then(|f| self.responses.get(&f.opener_turn));
                match (phase, opener) {
                    (DebugPhase::Identification, _) => vec![StateEffect::AdvancePhase {
                        evidence: PhaseEvidence::ExceptionUnderstood,
                    }],
                    (DebugPhase::Localization, Some(r)) => match resolved_function(&r.payload) {
                        Some((function, loc)) => {
                            let loc = loc.or_else(|| self.location_of(&function));
                            self.declare(localized, events, turn, &function, loc);
                            vec![StateEffect::AdvancePhase {
                                evidence: PhaseEvidence::RootFrameNamed {
                                    function_name: function,
                                },
                            }]
                        }
                        None => Vec::new(),
                    },
                    _ => Vec::new(),
                }
            }
            (DialogueAct::Acknowledgement, DebugPhase::Comprehension)
                if prev.act == DialogueAct::HypothesisProposal && is_affirmative(&u.text) =>
            {
                vec![StateEffect::AdvancePhase {
                    evidence: PhaseEvidence::CauseExplained,
                }]
            }
            _ => Vec::new(),
        }
    }

    fn compute(&mut self, msg: &UserMessage) -> Result<Pending, OrchestratorError> {
        let turn = self.state.as_ref().map_or(0, |s| s.next_turn_index());
        let mut events = vec![MetricEvent {
            kind: MetricKind::PromptSent,
            turn_index: turn,
            data: json!({ "origin": msg.origin, "chars": msg.text.chars().count() }),
        }];
        let (act, origin) = self.resolve_act(msg, turn, &mut events);
        let u = Utterance {
            speaker: Speaker::User,
            text: msg.text.clone(),
            act,
            turn_index: turn,
            origin,
        };
        let mut state = match &self.state {
            None => ConversationState::open_session(u.clone()),
            Some(s) => s.apply_utterance(u.clone()),
        }
        .map_err(|e| self.illegal(e))?;

        let mut llm = self.llm.clone();
        let mut localized = self.localized.clone();
        let mut verdict = None;
        let effects = if self.state.is_none() {
            let (mode, v) = self.verdict_mode(&state, &mut llm);
            verdict = Some(v);
            vec![StateEffect::SetPatternMode { mode }]
        } else {
            self.reply_effects(&state, &u, &mut localized, &mut events)
        };
        let mut applied = Vec::new();
        for e in effects {
            match state.apply_effect(&e) {
                Ok(s) => {
                    state = s;
                    applied.push(e);
                }
                Err(err) => tracing::debug!(error = %err, ?e, "effect not applicable"),
            }
        }

        let mut response = None;
        let mut response_turn = None;
        if !state.is_done() {
            let ctx = self.ctx.as_ref();
            let mut resp = match state.pattern_mode {
                PatternMode::EagerQA => eager_respond(&state, ctx, &self.gateway, &mut llm)?,
                _ => collaborative_respond(&state, ctx, &self.gateway, &mut llm)?,
            };
            let at = state.next_turn_index();
            state = state
                .apply_utterance(Utterance::assistant(at, resp.act, resp.body.clone()))
                .map_err(|e| self.illegal(e))?;
            if resp.act == DialogueAct::FixProposal {
                let fix_id = resp.payload.fix_id().map(str::to_string);
                let kind = fix_id
                    .as_deref()
                    .and_then(|id| self.scenario.as_ref()?.fix(id))
                    .map(|f| f.kind);
                events.push(MetricEvent {
                    kind: MetricKind::FixProposed,
                    turn_index: at,
                    data: json!({ "fix_id": fix_id, "fix_kind": kind }),
                });
            }
            resp.followups = generate_followups(&state, &resp, ctx, &self.gateway, &mut llm).unwrap_or_default();
            response = Some(resp);
            response_turn = Some(at);
        }

        Ok(Pending {
            turn: TurnRecord {
                utterance: u,
                effects: applied,
                response,
                verdict,
                state_snapshot_hash: state.snapshot_hash(),
                events,
            },
            state,
            llm,
            response_turn,
            localized,
        })
    }

    /// Process one developer message. On error nothing is committed.
    pub fn handle(&mut self, msg: &UserMessage) -> Result<MessageOutcome, OrchestratorError> {
        if msg.text.trim().is_empty() {
            return Err(OrchestratorError::EmptyMessage);
        }
        if self.is_done() {
            return Err(OrchestratorError::SessionClosed);
        }
        let p = self.compute(msg)?;
        if let Some(store) = &self.store {
            store.append_turn(&self.record.session_id, &p.turn)?;
        }
        let response = p.turn.response.clone();
        let verdict = p.turn.verdict.clone();
        self.state = Some(p.state);
        self.llm = p.llm;
        self.localized = p.localized;
        self.followups = response.as_ref().map(|r| r.followups.clone()).unwrap_or_default();
        if let (Some(t), Some(r)) = (p.response_turn, &response) {
            self.responses.insert(t, r.clone());
        }
        self.record.metrics_events.extend(p.turn.events.iter().cloned());
        self.record.turns.push(p.turn);
        Ok(MessageOutcome {
            response,
            verdict,
            state_view: self.view(),
            legal_next_acts: self.legal_next_acts(),
        })
    }
}

/// Function a request or instruction points at, with its location when
/// the payload carries one.
fn resolved_function(payload: &Payload) -> Option<(String, Option<SourceLocation>)> {
    match payload {
        Payload::InfoNeed {
            kind: InfoNeedKind::MethodSource,
            target,
        } => Some((target.clone(), None)),
        Payload::Instruction { steps } => steps.iter().find_map(|s| {
            let loc = s.location.as_ref()?;
            Some((loc.function.clone()?, Some(loc.clone())))
        }),
        _ => None,
    }
}

/// Owns scenarios, backends and live sessions.
pub struct Engine {
    scenarios: Arc<ScenarioSet>,
    scripted: Gateway,
    live: Option<Gateway>,
    store: Option<SessionStore>,
    sessions: StdMutex<HashMap<String, Arc<Mutex<Session>>>>,
}

impl Engine {
    pub fn new(scenarios: Arc<ScenarioSet>) -> Self {
        let scripted = Gateway::new(Arc::new(ScriptedBackend::new(scenarios.clone())));
        Self {
            scenarios,
            scripted,
            live: None,
            store: None,
            sessions: StdMutex::new(HashMap::new()),
        }
    }

    pub fn bundled() -> Self {
        Self::new(Arc::new(ScenarioSet::bundled()))
    }

    /// Persist sessions as JSONL files under `dir`.
    pub fn with_store(mut self, dir: impl Into<PathBuf>) -> Result<Self, RecordError> {
        self.store = Some(SessionStore::new(dir)?);
        Ok(self)
    }

    pub fn with_live_backend(mut self, backend: Arc<dyn LlmBackend>) -> Self {
        self.live = Some(Gateway::new(backend));
        self
    }

    pub fn scenarios(&self) -> &Arc<ScenarioSet> {
        &self.scenarios
    }

    pub fn store(&self) -> Option<&SessionStore> {
        self.store.as_ref()
    }

    fn gateway_for(&self, kind: BackendKind) -> Result<Gateway, OrchestratorError> {
        match kind {
            BackendKind::Scripted => Ok(self.scripted.clone()),
            BackendKind::Live => match &self.live {
                Some(g) => Ok(g.clone()),
                None => Ok(Gateway::new(Arc::new(LiveBackend::new(LiveConfig::from_env()?)))),
            },
        }
    }

    /// Build a session without registering it.
    pub fn build_session(&self, config: SessionConfig) -> Result<Session, OrchestratorError> {
        let scenario = match &config.scenario_id {
            Some(id) => Some(Arc::new(self.scenarios.get(id)?.clone())),
            None => None,
        };
        let gateway = self.gateway_for(config.backend)?;
        let ctx = match (&config.adapter_command, &scenario) {
            (Some(cmd), _) if !cmd.is_empty() => {
                let mut adapter = DebugAdapter::spawn(&cmd[0], &cmd[1..])?;
                Some(capture_context(&mut adapter)?)
            }
            (_, Some(s)) => Some(capture_context(&mut DebugAdapter::simulated(s)?)?),
            _ => None,
        };
        let record = SessionRecord {
            session_id: uuid::Uuid::new_v4().simple().to_string(),
            scenario_id: scenario.as_ref().map(|s| s.id.clone()),
            created_at: Utc::now(),
            config: config.clone(),
            turns: Vec::new(),
            metrics_events: Vec::new(),
        };
        if let Some(store) = &self.store {
            store.write_header(&record)?;
        }
        Ok(Session {
            llm: LlmSession::new(record.scenario_id.clone()),
            record,
            state: None,
            ctx,
            scenario,
            gateway,
            mode_override: config.mode_override,
            responses: BTreeMap::new(),
            followups: Vec::new(),
            localized: Vec::new(),
            store: self.store.clone(),
        })
    }

    pub fn create_session(&self, config: SessionConfig) -> Result<String, OrchestratorError> {
        let session = self.build_session(config)?;
        let id = session.id().to_string();
        self.sessions
            .lock()
            .expect("session map lock")
            .insert(id.clone(), Arc::new(Mutex::new(session)));
        Ok(id)
    }

    pub fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, OrchestratorError> {
        self.sessions
            .lock()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| OrchestratorError::SessionNotFound(id.to_string()))
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .sessions
            .lock()
            .expect("session map lock")
            .keys()
            .cloned()
            .collect();
        ids.sort();
        ids
    }

    /// Blocking entry point; do not call from inside an async runtime.
    pub fn handle_user_message(&self, id: &str, msg: &UserMessage) -> Result<MessageOutcome, OrchestratorError> {
        let session = self.session(id)?;
        let mut guard = session.blocking_lock();
        guard.handle(msg)
    }

    pub fn view(&self, id: &str) -> Result<StateView, OrchestratorError> {
        Ok(self.session(id)?.blocking_lock().view())
    }

    pub fn record(&self, id: &str) -> Result<SessionRecord, OrchestratorError> {
        Ok(self.session(id)?.blocking_lock().record().clone())
    }
}
