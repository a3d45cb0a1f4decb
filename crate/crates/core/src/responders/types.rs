use serde::{Deserialize, Serialize};

use crate::conversation::DialogueAct;
use crate::debug_context::SourceLocation;
use crate::followup::Followup;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HardnessMode {
    OneShot,
    Collaborative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardnessVerdict {
    pub mode: HardnessMode,
    pub rationale: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InfoNeedKind {
    VariableValue,
    MethodSource,
    Observation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepAction {
    SetBreakpoint,
    StepThrough,
    InspectVariable,
    RunToBreakpoint,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DebuggerStep {
    pub action: StepAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<SourceLocation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variable: Option<String>,
}

impl DebuggerStep {
    pub fn set_breakpoint(location: SourceLocation) -> Self {
        Self {
            action: StepAction::SetBreakpoint,
            location: Some(location),
            variable: None,
        }
    }

    pub fn run_to(location: SourceLocation) -> Self {
        Self {
            action: StepAction::RunToBreakpoint,
            location: Some(location),
            variable: None,
        }
    }

    pub fn inspect(variable: impl Into<String>, location: Option<SourceLocation>) -> Self {
        Self {
            action: StepAction::InspectVariable,
            location,
            variable: Some(variable.into()),
        }
    }

    /// Breakpoint steps need a location, inspections a variable.
    pub fn is_well_formed(&self) -> bool {
        match self.action {
            StepAction::SetBreakpoint | StepAction::RunToBreakpoint => self.location.is_some(),
            StepAction::InspectVariable => self.variable.is_some(),
            StepAction::StepThrough => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Payload {
    InfoNeed {
        kind: InfoNeedKind,
        /// An identifier, or `file:line` for observations.
        target: String,
    },
    Instruction {
        steps: Vec<DebuggerStep>,
    },
    Hypothesis {
        cause: String,
        check: DebuggerStep,
    },
    Fix {
        #[serde(default)]
        fix_id: Option<String>,
        diff_text: String,
        explanation: String,
    },
    None,
}

impl Payload {
    /// The act this payload belongs to.
    pub fn act(&self) -> DialogueAct {
        match self {
            Payload::InfoNeed { .. } => DialogueAct::InfoRequest,
            Payload::Instruction { .. } => DialogueAct::InstructionStep,
            Payload::Hypothesis { .. } => DialogueAct::HypothesisProposal,
            Payload::Fix { .. } => DialogueAct::FixProposal,
            Payload::None => DialogueAct::Answer,
        }
    }

    pub fn fix_id(&self) -> Option<&str> {
        match self {
            Payload::Fix { fix_id, .. } => fix_id.as_deref(),
            _ => None,
        }
    }

    /// Variable a payload asks the developer to look at, with the place to
    /// look if one is given.
    pub fn watched_variable(&self) -> Option<(String, Option<SourceLocation>)> {
        match self {
            Payload::InfoNeed {
                kind: InfoNeedKind::VariableValue,
                target,
            } => Some((target.clone(), None)),
            Payload::Instruction { steps } => {
                let mut at = None;
                for s in steps {
                    if s.location.is_some() {
                        at = s.location.clone();
                    }
                    if s.action == StepAction::InspectVariable {
                        if let Some(v) = &s.variable {
                            return Some((v.clone(), s.location.clone().or(at)));
                        }
                    }
                }
                None
            }
            Payload::Hypothesis { check, .. } => check.variable.clone().map(|v| (v, check.location.clone())),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssistantResponse {
    pub act: DialogueAct,
    pub body: String,
    pub payload: Payload,
    #[serde(default)]
    pub followups: Vec<Followup>,
}

impl AssistantResponse {
    pub fn new(body: impl Into<String>, payload: Payload) -> Self {
        Self {
            act: payload.act(),
            body: body.into(),
            payload,
            followups: Vec::new(),
        }
    }

    /// Act and payload agree, and every debugger step is well formed.
    pub fn is_consistent(&self) -> bool {
        let steps_ok = match &self.payload {
            Payload::Instruction { steps } => !steps.is_empty() && steps.iter().all(DebuggerStep::is_well_formed),
            Payload::Hypothesis { check, .. } => check.is_well_formed(),
            _ => true,
        };
        self.act == self.payload.act() && steps_ok && self.followups.len() <= crate::followup::FOLLOWUP_MAX
    }
}
