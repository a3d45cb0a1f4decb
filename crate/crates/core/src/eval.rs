//! Scripted evaluation: a simulated developer drives sessions against the
//! bundled scenarios and each episode is scored and audited.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conversation::{ConversationState, DebugPhase, DialogueAct, PatternMode, Utterance};
use crate::debug_context::{capture_context, observe_at_breakpoint, same_function, DebugAdapter, SourceLocation};
use crate::followup::{check_alignment, AlignmentVerdict, Followup, FollowupKind, FOLLOWUP_MAX};
use crate::orchestrator::{
    replay, Engine, MetricKind, ModeOverride, OrchestratorError, SessionConfig, SessionRecord, UserMessage,
};
use crate::responders::{AssistantResponse, InfoNeedKind, Payload};
use crate::scenario::{FixKind, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// The classifier picks the pattern.
    Full,
    /// Every session is forced into the one-shot pattern.
    Eager,
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::Full => "full",
            EvalMode::Eager => "eager",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" => Some(EvalMode::Full),
            "eager" | "eager_only" | "eager-only" => Some(EvalMode::Eager),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Persona {
    /// Answers truthfully and accepts only fixes that address the cause.
    Cooperative,
    /// Like `Cooperative`, but first asks how to find each requested fact.
    Novice,
    /// Types every reply and accepts any fix that makes the error go away.
    Hasty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulatedUserPolicy {
    pub persona: Persona,
    /// Chance of clicking a matching follow-up instead of typing.
    pub followup_click_prob: f64,
    /// Developer messages per episode, opening request included.
    pub max_turns: usize,
}

impl Default for SimulatedUserPolicy {
    fn default() -> Self {
        Self {
            persona: Persona::Cooperative,
            followup_click_prob: 1.0,
            max_turns: 12,
        }
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error("unknown evaluation mode {0:?}")]
    UnknownMode(String),
    #[error("writing report: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Serialize)]
pub struct EpisodeResult {
    pub scenario_id: String,
    pub mode: EvalMode,
    pub seed: u64,
    pub pattern_mode: PatternMode,
    pub localized: bool,
    pub fixed: bool,
    pub prompts: usize,
    pub followups_used: usize,
    pub assistant_turns: usize,
    pub accepted_fix: Option<String>,
    /// Why the episode stopped early, if it did.
    pub failure: Option<String>,
    pub record: SessionRecord,
}

/// One aggregated report row. `localized` and `fixed` count episodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteRow {
    pub scenario: String,
    pub mode: String,
    pub localized: usize,
    pub fixed: usize,
    #[serde(serialize_with = "two_places")]
    pub prompts: f64,
    #[serde(serialize_with = "two_places")]
    pub followups_used: f64,
    #[serde(serialize_with = "two_places")]
    pub assistant_turns: f64,
}

fn two_places<S: serde::Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(&format_args!("{x:.2}"))
}

struct SimulatedUser<'a> {
    scenario: &'a Scenario,
    policy: SimulatedUserPolicy,
    rng: ChaCha8Rng,
    /// The assistant turn whose request is still open.
    pending: Option<AssistantResponse>,
    asked_meta: bool,
}

fn describe(name: &str, value: &str) -> String {
    if value.is_empty() {
        format!("{name} is an empty string")
    } else {
        format!("{name} is {value}")
    }
}

fn truthful(f: &Followup, name: &str, value: &str) -> bool {
    f.kind == FollowupKind::AnswerCandidate
        && f.text.contains(name)
        && if value.is_empty() {
            f.text.contains("empty")
        } else {
            f.text.contains(value)
        }
}

impl<'a> SimulatedUser<'a> {
    fn new(scenario: &'a Scenario, policy: SimulatedUserPolicy, seed: u64) -> Self {
        Self {
            scenario,
            policy,
            rng: ChaCha8Rng::seed_from_u64(seed),
            pending: None,
            asked_meta: false,
        }
    }

    fn clicks(&mut self) -> bool {
        self.policy.persona != Persona::Hasty && self.rng.gen_bool(self.policy.followup_click_prob.clamp(0.0, 1.0))
    }

    /// Run the program to `loc` in a fresh debug session and read `name`.
    fn observe(&self, name: &str, loc: Option<&SourceLocation>) -> Option<String> {
        if let Some(loc) = loc {
            let mut adapter = DebugAdapter::simulated(self.scenario).ok()?;
            if let Ok(values) = observe_at_breakpoint(&mut adapter, loc, &[name.to_string()]) {
                return values.into_iter().next().map(|b| b.rendered_value);
            }
        }
        self.scenario.lookup_value(name).map(|b| b.rendered_value.clone())
    }

    fn report_value(&mut self, name: &str, value: Option<String>, offered: &[Followup]) -> UserMessage {
        let Some(value) = value else {
            return UserMessage::typed(format!("I could not find {name} anywhere."));
        };
        if let Some(f) = offered.iter().find(|f| truthful(f, name, &value)) {
            if self.clicks() {
                return UserMessage::clicked(f.text.clone());
            }
        }
        UserMessage::typed(describe(name, &value))
    }

    fn answer_need(&mut self, need: &AssistantResponse, offered: &[Followup]) -> UserMessage {
        if self.policy.persona == Persona::Novice && !self.asked_meta {
            if let Some(f) = offered.iter().find(|f| f.kind == FollowupKind::MetaQuestion) {
                self.asked_meta = true;
                return UserMessage::clicked(f.text.clone());
            }
        }
        match &need.payload {
            Payload::InfoNeed {
                kind: InfoNeedKind::VariableValue,
                target,
            } => {
                let value = self.scenario.lookup_value(target).map(|b| b.rendered_value.clone());
                self.report_value(target, value, offered)
            }
            Payload::InfoNeed { target, .. } => match self.scenario.scripted_user.answers.get(target) {
                Some(answer) => UserMessage::typed(answer.clone()),
                None => UserMessage::typed(format!("I am not sure what to look for in {target}.")),
            },
            Payload::Instruction { .. } => match need.payload.watched_variable() {
                Some((name, loc)) => {
                    let value = self.observe(&name, loc.as_ref());
                    self.report_value(&name, value, offered)
                }
                None => UserMessage::typed("Done, the debugger stopped there."),
            },
            _ => UserMessage::typed("Ok."),
        }
    }

    fn accepts(&self, fix_id: Option<&str>) -> bool {
        let Some(fix) = fix_id.and_then(|id| self.scenario.fix(id)) else {
            return false;
        };
        match self.policy.persona {
            Persona::Hasty => true,
            Persona::Cooperative | Persona::Novice => fix.kind == FixKind::RootCauseFix,
        }
    }

    fn reply(&mut self, resp: &AssistantResponse) -> UserMessage {
        match &resp.payload {
            Payload::InfoNeed { .. } | Payload::Instruction { .. } => {
                self.pending = Some(resp.clone());
                self.asked_meta = false;
                self.answer_need(resp, &resp.followups)
            }
            Payload::Hypothesis { check, .. } => {
                let value = check
                    .variable
                    .as_deref()
                    .and_then(|v| Some((v, self.observe(v, check.location.as_ref())?)));
                match value {
                    Some((name, value)) => UserMessage::typed(format!("Yes, {}.", describe(name, &value))),
                    None => UserMessage::typed("I could not check that."),
                }
            }
            Payload::Fix { .. } => {
                if self.accepts(resp.payload.fix_id()) {
                    UserMessage::typed("Thanks, that fixed it.")
                } else {
                    UserMessage::typed("That only hides the error; it is not the real fix.")
                }
            }
            Payload::None => match self.pending.clone() {
                // An answer to our meta-question: go back to the request.
                Some(need) => self.answer_need(&need, &resp.followups),
                None => UserMessage::typed("Ok."),
            },
        }
    }
}

/// Drive one session to completion with a simulated developer.
pub fn run_episode(
    engine: &Engine,
    scenario_id: &str,
    mode: EvalMode,
    policy: SimulatedUserPolicy,
    seed: u64,
) -> Result<EpisodeResult, EvalError> {
    let scenario = engine
        .scenarios()
        .get(scenario_id)
        .map_err(OrchestratorError::from)?
        .clone();
    let mut session = engine.build_session(SessionConfig {
        scenario_id: Some(scenario.id.clone()),
        mode_override: (mode == EvalMode::Eager).then_some(ModeOverride::ForceEager),
        ..SessionConfig::default()
    })?;
    let mut user = SimulatedUser::new(&scenario, policy, seed);
    let mut failure = None;
    let mut next = Some(UserMessage::typed(scenario.scripted_user.opening.clone()));
    let mut sent = 0;
    while let Some(msg) = next.take() {
        if sent >= policy.max_turns {
            failure = Some(format!("turn limit of {} reached", policy.max_turns));
            break;
        }
        sent += 1;
        match session.handle(&msg) {
            Ok(outcome) => {
                if outcome.state_view.done {
                    break;
                }
                next = outcome.response.as_ref().map(|r| user.reply(r));
            }
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        }
    }
    if failure.is_none() && !session.is_done() {
        failure = Some("the session ended without closing".into());
    }

    let record = session.record().clone();
    let root = &scenario.root_cause.function_name;
    let localized = record
        .events_of(MetricKind::LocalizationDeclared)
        .any(|e| e.data["function_name"].as_str().is_some_and(|f| same_function(f, root)));
    let accepted_fix = record
        .events_of(MetricKind::FixAccepted)
        .find_map(|e| e.data["fix_id"].as_str().map(str::to_string));
    let fixed = accepted_fix
        .as_deref()
        .and_then(|id| scenario.fix(id))
        .is_some_and(|f| f.kind == FixKind::RootCauseFix);
    Ok(EpisodeResult {
        scenario_id: scenario.id.clone(),
        mode,
        seed,
        pattern_mode: session.state().map_or(PatternMode::Unset, |s| s.pattern_mode),
        localized,
        fixed,
        prompts: record.events_of(MetricKind::PromptSent).count(),
        followups_used: record.events_of(MetricKind::FollowupClicked).count(),
        assistant_turns: record.responses().count(),
        accepted_fix,
        failure,
        record,
    })
}

/// Every combination of scenario, mode and seed, in that nesting order.
pub fn run_suite(
    engine: &Engine,
    scenarios: &[String],
    modes: &[EvalMode],
    seeds: &[u64],
    policy: SimulatedUserPolicy,
) -> Result<Vec<EpisodeResult>, EvalError> {
    let mut out = Vec::new();
    for s in scenarios {
        for &m in modes {
            for &seed in seeds {
                out.push(run_episode(engine, s, m, policy, seed)?);
            }
        }
    }
    Ok(out)
}

fn mean(xs: impl Iterator<Item = usize>) -> f64 {
    let v: Vec<usize> = xs.collect();
    if v.is_empty() {
        return 0.0;
    }
    let m = v.iter().sum::<usize>() as f64 / v.len() as f64;
    (m * 100.0).round() / 100.0
}

/// Group episodes by scenario and mode, keeping first-seen order.
pub fn aggregate(results: &[EpisodeResult]) -> Vec<SuiteRow> {
    let mut order: Vec<(String, EvalMode)> = Vec::new();
    let mut groups: BTreeMap<(String, EvalMode), Vec<&EpisodeResult>> = BTreeMap::new();
    for r in results {
        let key = (r.scenario_id.clone(), r.mode);
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            SuiteRow {
                scenario: key.0.clone(),
                mode: key.1.name().to_string(),
                localized: g.iter().filter(|r| r.localized).count(),
                fixed: g.iter().filter(|r| r.fixed).count(),
                prompts: mean(g.iter().map(|r| r.prompts)),
                followups_used: mean(g.iter().map(|r| r.followups_used)),
                assistant_turns: mean(g.iter().map(|r| r.assistant_turns)),
            }
        })
        .collect()
}

pub fn write_csv<W: io::Write>(rows: &[SuiteRow], out: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn render_table(rows: &[SuiteRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<22} {:<6} {:>9} {:>6} {:>8} {:>10} {:>10}",
        "scenario", "mode", "localized", "fixed", "prompts", "followups", "asst_turns"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<22} {:<6} {:>9} {:>6} {:>8.2} {:>10.2} {:>10.2}",
            r.scenario, r.mode, r.localized, r.fixed, r.prompts, r.followups_used, r.assistant_turns
        );
    }
    s
}

/// Rule violations found by re-walking an episode's log.
pub fn audit(result: &EpisodeResult, scenario: &Scenario) -> Vec<String> {
    let mut problems = Vec::new();
    let record = &result.record;
    if let Err(e) = replay(record) {
        problems.push(format!("replay: {e}"));
        return problems;
    }
    let ctx = DebugAdapter::simulated(scenario)
        .ok()
        .and_then(|mut a| capture_context(&mut a).ok());
    let mut state: Option<ConversationState> = None;
    for (i, turn) in record.turns.iter().enumerate() {
        let mut s = match state.take() {
            None => ConversationState::open_session(turn.utterance.clone()),
            Some(s) => s.apply_utterance(turn.utterance.clone()),
        }
        .expect("replay already succeeded");
        for e in &turn.effects {
            s = s.apply_effect(e).expect("replay already succeeded");
        }
        if let Some(r) = &turn.response {
            if r.act == DialogueAct::FixProposal
                && s.pattern_mode == PatternMode::CollaborativeIE
                && (s.phase < DebugPhase::Fixing || s.open_inserts() > 0)
            {
                problems.push(format!(
                    "turn {i}: fix proposed in {:?} with {} open insert(s)",
                    s.phase,
                    s.open_inserts()
                ));
            }
            s = s
                .apply_utterance(Utterance::assistant(s.next_turn_index(), r.act, r.body.clone()))
                .expect("replay already succeeded");
            if r.followups.len() > FOLLOWUP_MAX {
                problems.push(format!("turn {i}: {} follow-ups offered", r.followups.len()));
            }
            for f in &r.followups {
                if let v @ AlignmentVerdict::Misaligned(_) = check_alignment(f, &s, r, ctx.as_ref()) {
                    problems.push(format!("turn {i}: follow-up {:?} is {v:?}", f.text));
                }
            }
        }
        state = Some(s);
    }
    if state.as_ref().is_some_and(|s| s.pattern_mode == PatternMode::EagerQA) && result.assistant_turns != 1 {
        problems.push(format!(
            "one-shot session took {} assistant turns",
            result.assistant_turns
        ));
    }
    problems
}
