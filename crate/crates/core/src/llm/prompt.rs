use serde::{Deserialize, Serialize};

use super::{AgentRole, GatewayError};
use crate::conversation::{ConversationState, Speaker, Utterance};

/// Structured output contract shared by the responder roles.
pub const OUTPUT_SCHEMA_HINT: &str = r#"Reply with one fenced ```json block:
{"act": "Answer" | "InfoRequest" | "InstructionStep" | "HypothesisProposal" | "FixProposal",
 "body": "<text shown to the developer>",
 "payload": {"type": "InfoNeed", "kind": "VariableValue" | "MethodSource" | "Observation", "target": "<identifier or file:line>"}
          | {"type": "Instruction", "steps": [<step>, ...]}
          | {"type": "Hypothesis", "cause": "<text>", "check": <step>}
          | {"type": "Fix", "fix_id": "<id or null>", "diff_text": "<unified diff>", "explanation": "<text>"}
          | {"type": "None"},
 "followups": [{"text": "<next user message>", "kind": "AnswerCandidate" | "MetaQuestion" | "NewTopic", "anchor_entities": ["<identifier>", ...]}]}
<step> = {"action": "SetBreakpoint" | "StepThrough" | "InspectVariable" | "RunToBreakpoint", "location": {"file": "...", "line": N, "function": "..."}, "variable": "<identifier>"}"#;

const CLASSIFIER_HINT: &str = r#"Reply with one fenced ```json block:
{"mode": "OneShot" | "Collaborative", "confidence": <0..1>, "rationale": "<one sentence>"}"#;

const FOLLOWUP_HINT: &str = r#"Reply with one fenced ```json block:
{"followups": [{"text": "<next user message>", "kind": "AnswerCandidate" | "MetaQuestion" | "NewTopic", "anchor_entities": ["<identifier>", ...]}]}"#;

/// Implementer-authored role prompts. Treat as tunable configuration.
pub fn role_instructions(role: AgentRole) -> &'static str {
    match role {
        AgentRole::HardnessClassifier => {
            "You triage runtime exceptions for a debugging assistant. Decide whether the bug \
             can be fixed from the exception, stack and locals alone (OneShot) or whether the \
             developer has to gather more information with the debugger first (Collaborative). \
             Prefer Collaborative when unsure."
        }
        AgentRole::EagerResponder => {
            "You are a debugging assistant answering in a single message. Explain why the \
             exception occurred and propose a concrete code change as a unified diff."
        }
        AgentRole::CollaborativeResponder => {
            "You are a debugging assistant working through a bug together with the developer. \
             Ask for one piece of information at a time: a variable value, the code of a method, \
             or the result of a debugger step. Only refer to locations and identifiers present in \
             the debugger context. Do not propose a fix until the cause has been confirmed; when \
             you suspect a cause, state it and give one concrete debugger step that checks it. \
             If the developer asks how to obtain something you asked for, answer that question."
        }
        AgentRole::FollowupGenerator => {
            "Suggest up to three short messages the developer is likely to send next. When the \
             assistant has just asked for information, include a likely answer and a question \
             about how to find that information. Anchor each suggestion to identifiers that \
             appear in the conversation or the debugger context."
        }
    }
}

fn schema_hint(role: AgentRole) -> &'static str {
    match role {
        AgentRole::HardnessClassifier => CLASSIFIER_HINT,
        AgentRole::FollowupGenerator => FOLLOWUP_HINT,
        AgentRole::EagerResponder | AgentRole::CollaborativeResponder => OUTPUT_SCHEMA_HINT,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub role_instructions: String,
    pub context_summary: String,
    /// Rendered turns, oldest first; always a suffix of the transcript.
    pub transcript_window: Vec<String>,
    pub output_schema_hint: String,
}

impl PromptBundle {
    pub fn render(&self) -> String {
        format!(
            "{}\n\nDebugger context:\n{}\n\nConversation:\n{}\n\nOutput format:\n{}",
            self.role_instructions,
            self.context_summary,
            self.transcript_window.join("\n"),
            self.output_schema_hint
        )
    }

    pub fn rendered_len(&self) -> usize {
        self.render().chars().count()
    }
}

pub fn render_turn(u: &Utterance) -> String {
    let who = match u.speaker {
        Speaker::User => "Developer",
        Speaker::Assistant => "Assistant",
    };
    format!("[{}] {who} ({:?}): {}", u.turn_index, u.act, u.text)
}

/// Build the prompt for `role`, keeping the longest transcript suffix that
/// fits in `budget_chars` once instructions and context are placed.
pub fn assemble_prompt(
    role: AgentRole,
    state: &ConversationState,
    ctx_summary: &str,
    budget_chars: usize,
) -> Result<PromptBundle, GatewayError> {
    let mut bundle = PromptBundle {
        role_instructions: role_instructions(role).to_string(),
        context_summary: ctx_summary.to_string(),
        transcript_window: Vec::new(),
        output_schema_hint: schema_hint(role).to_string(),
    };
    let base = bundle.rendered_len();
    if base > budget_chars {
        return Err(GatewayError::BudgetExceeded {
            needed: base,
            budget: budget_chars,
        });
    }
    let mut used = base;
    let mut window = Vec::new();
    for u in state.transcript.iter().rev() {
        let turn = render_turn(u);
        let cost = turn.chars().count() + usize::from(!window.is_empty());
        if used + cost > budget_chars {
            break;
        }
        used += cost;
        window.push(turn);
    }
    window.reverse();
    bundle.transcript_window = window;
    Ok(bundle)
}
