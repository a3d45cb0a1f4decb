//! Completion backends and prompt assembly for the agent roles.

mod live;
mod prompt;
mod scripted;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conversation::ConversationState;

pub use live::{LiveBackend, LiveConfig};
pub use prompt::{assemble_prompt, render_turn, role_instructions, PromptBundle, OUTPUT_SCHEMA_HINT};
pub use scripted::ScriptedBackend;

/// Default size limit for a fully rendered prompt, in characters.
pub const GATEWAY_BUDGET_CHARS: usize = 12_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgentRole {
    HardnessClassifier,
    EagerResponder,
    CollaborativeResponder,
    FollowupGenerator,
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Which conversation thread a role is answering. Meta answers explain how
/// to obtain information and are scripted separately from the main line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Channel {
    Main,
    Meta,
}

/// Key into a scenario's `scripted_llm` table: `Role` or `Role.meta`.
pub fn script_key(role: AgentRole, channel: Channel) -> String {
    match channel {
        Channel::Main => role.to_string(),
        Channel::Meta => format!("{role}.meta"),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Determinism {
    #[default]
    Deterministic,
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub role: AgentRole,
    pub channel: Channel,
    /// How many earlier calls this session made for the same role and channel.
    pub step: usize,
    pub scenario_id: Option<String>,
    pub bundle: PromptBundle,
    pub determinism: Determinism,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub backend_id: String,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("completion backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("no scripted output for {key} step {step} in scenario {scenario}")]
    ScriptExhausted { scenario: String, key: String, step: usize },
    #[error("prompt needs {needed} characters but the budget is {budget}")]
    BudgetExceeded { needed: usize, budget: usize },
}

pub trait LlmBackend: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, GatewayError>;
}

/// Per-session call counters, one per script key.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmSession {
    pub scenario_id: Option<String>,
    steps: BTreeMap<String, usize>,
}

impl LlmSession {
    pub fn new(scenario_id: Option<String>) -> Self {
        Self {
            scenario_id,
            steps: BTreeMap::new(),
        }
    }

    fn take_step(&mut self, role: AgentRole, channel: Channel) -> usize {
        let n = self.steps.entry(script_key(role, channel)).or_default();
        let step = *n;
        *n += 1;
        step
    }

    pub fn steps_taken(&self, role: AgentRole, channel: Channel) -> usize {
        self.steps.get(&script_key(role, channel)).copied().unwrap_or(0)
    }
}

/// A backend plus the budgets used when prompting it.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn LlmBackend>,
    pub budget_chars: usize,
    pub determinism: Determinism,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.id())
            .field("budget_chars", &self.budget_chars)
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn LlmBackend>) -> Self {
        Self {
            backend,
            budget_chars: GATEWAY_BUDGET_CHARS,
            determinism: Determinism::Deterministic,
        }
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    /// Assemble a prompt for `role` and send it, advancing the session's
    /// step counter for that role and channel.
    pub fn call(
        &self,
        session: &mut LlmSession,
        role: AgentRole,
        channel: Channel,
        state: &ConversationState,
        ctx_summary: &str,
    ) -> Result<CompletionResult, GatewayError> {
        let bundle = assemble_prompt(role, state, ctx_summary, self.budget_chars)?;
        let req = CompletionRequest {
            role,
            channel,
            step: session.take_step(role, channel),
            scenario_id: session.scenario_id.clone(),
            bundle,
            determinism: self.determinism,
        };
        let started = Instant::now();
        let result = self.backend.complete(&req);
        tracing::debug!(
            role = %role,
            step = req.step,
            elapsed_ms = started.elapsed().as_millis() as u64,
            ok = result.is_ok(),
            "completion"
        );
        result
    }
}
