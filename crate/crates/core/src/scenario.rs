//! Oracle descriptions of bugs: what the debugger shows, where the root
//! cause is, which fixes are acceptable, and scripted model/user behavior.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::debug_context::{ExceptionRecord, SourceLocation, StackFrame, VariableBinding};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error("invalid scenario file: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BreakpointObservation {
    pub location: SourceLocation,
    pub bindings: Vec<VariableBinding>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RootCause {
    pub function_name: String,
    pub location: SourceLocation,
    pub explanation: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FixKind {
    RootCauseFix,
    SymptomPatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EligibleFix {
    pub id: String,
    pub description: String,
    pub kind: FixKind,
    /// Where the fix applies; accepting it declares this location.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<SourceLocation>,
}

/// One scripted model output. Structured entries are emitted as a fenced
/// JSON block, the same shape a live model is asked to produce.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptEntry {
    Text(String),
    Structured(serde_json::Value),
}

impl ScriptEntry {
    pub fn render(&self) -> String {
        match self {
            ScriptEntry::Text(t) => t.clone(),
            ScriptEntry::Structured(v) => format!(
                "```json\n{}\n```",
                serde_json::to_string_pretty(v).expect("JSON values serialize")
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedUser {
    /// First message of a simulated session.
    pub opening: String,
    /// Typed replies keyed by the requested identifier.
    #[serde(default)]
    pub answers: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub title: String,
    pub exception: ExceptionRecord,
    pub frames: Vec<StackFrame>,
    #[serde(default)]
    pub breakpoint_observations: Vec<BreakpointObservation>,
    #[serde(default)]
    pub source_excerpts: BTreeMap<String, String>,
    pub root_cause: RootCause,
    pub eligible_fixes: Vec<EligibleFix>,
    /// Raw model outputs keyed by script key (see `llm::ScriptKey`), one
    /// entry per step.
    #[serde(default)]
    pub scripted_llm: BTreeMap<String, Vec<ScriptEntry>>,
    #[serde(default)]
    pub scripted_user: ScriptedUser,
    /// Whether the program is halted at the exception when a debugger attaches.
    #[serde(default = "yes")]
    pub stopped: bool,
}

fn yes() -> bool {
    true
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |m: String| Err(ScenarioError::Invalid(format!("{}: {m}", self.id)));
        for (i, f) in self.frames.iter().enumerate() {
            if f.index != i {
                return invalid(format!("frame {i} has index {}", f.index));
            }
        }
        for key in self.source_excerpts.keys() {
            let anchored = self
                .frames
                .iter()
                .map(|f| &f.location)
                .chain(self.breakpoint_observations.iter().map(|b| &b.location))
                .any(|l| &l.key() == key);
            if !anchored {
                return invalid(format!("excerpt {key} is not at a frame or breakpoint"));
            }
        }
        if self.eligible_fixes.is_empty() {
            return invalid("no eligible fixes".into());
        }
        Ok(())
    }

    pub fn fix(&self, id: &str) -> Option<&EligibleFix> {
        self.eligible_fixes.iter().find(|f| f.id == id)
    }

    pub fn observation_at(&self, loc: &SourceLocation) -> Option<&BreakpointObservation> {
        self.breakpoint_observations.iter().find(|o| o.location.same_place(loc))
    }

    /// Value of `name` anywhere the developer could look: frame locals
    /// first, then breakpoint observations.
    pub fn lookup_value(&self, name: &str) -> Option<&VariableBinding> {
        self.frames
            .iter()
            .flat_map(|f| f.locals.iter())
            .chain(self.breakpoint_observations.iter().flat_map(|o| o.bindings.iter()))
            .find(|b| b.name == name)
    }

    pub fn script(&self, key: &str) -> Option<&[ScriptEntry]> {
        self.scripted_llm.get(key).map(Vec::as_slice)
    }
}

const BUNDLED: &[(&str, &str)] = &[
    ("warmup_index_oob", include_str!("../scenarios/warmup_index_oob.json")),
    (
        "task1_serialization",
        include_str!("../scenarios/task1_serialization.json"),
    ),
    ("task2_overflow", include_str!("../scenarios/task2_overflow.json")),
];

/// A set of scenarios addressable by id or by the short alias before the
/// first underscore (`task1` for `task1_serialization`).
#[derive(Debug, Clone, Default)]
pub struct ScenarioSet {
    scenarios: Vec<Scenario>,
}

impl ScenarioSet {
    pub fn bundled() -> Self {
        let scenarios = BUNDLED
            .iter()
            .map(|(id, text)| {
                let s = Scenario::from_json(text).unwrap_or_else(|e| panic!("bundled scenario {id} is invalid: {e}"));
                assert_eq!(&s.id, id, "bundled scenario id mismatch");
                s
            })
            .collect();
        Self { scenarios }
    }

    pub fn new(scenarios: Vec<Scenario>) -> Self {
        Self { scenarios }
    }

    pub fn insert(&mut self, scenario: Scenario) {
        self.scenarios.retain(|s| s.id != scenario.id);
        self.scenarios.push(scenario);
    }

    pub fn get(&self, id_or_alias: &str) -> Result<&Scenario, ScenarioError> {
        self.scenarios
            .iter()
            .find(|s| s.id == id_or_alias)
            .or_else(|| {
                self.scenarios
                    .iter()
                    .find(|s| s.id.split('_').next() == Some(id_or_alias))
            })
            .ok_or_else(|| ScenarioError::UnknownScenario(id_or_alias.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Scenario> {
        self.scenarios.iter()
    }

    pub fn ids(&self) -> Vec<String> {
        self.scenarios.iter().map(|s| s.id.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenarios_load_and_resolve_aliases() {
        let set = ScenarioSet::bundled();
        assert_eq!(set.ids(), ["warmup_index_oob", "task1_serialization", "task2_overflow"]);
        assert_eq!(set.get("task1").unwrap().id, "task1_serialization");
        assert_eq!(set.get("warmup").unwrap().id, "warmup_index_oob");
        assert!(matches!(set.get("nope"), Err(ScenarioError::UnknownScenario(_))));
    }

    #[test]
    fn bundled_root_causes() {
        let set = ScenarioSet::bundled();
        assert_eq!(set.get("task1").unwrap().root_cause.function_name, "ToJson");
        assert_eq!(
            set.get("task2").unwrap().root_cause.function_name,
            "DeserializeIntegerHelper"
        );
        for s in set.iter() {
            assert!(s.eligible_fixes.iter().any(|f| f.kind == FixKind::RootCauseFix));
        }
    }

    #[test]
    fn overflow_breakpoint_value() {
        let set = ScenarioSet::bundled();
        let s = set.get("task2").unwrap();
        assert_eq!(s.lookup_value("result").unwrap().rendered_value, "9223372036854775808");
    }

    #[test]
    fn unanchored_excerpt_is_invalid() {
        let mut s = ScenarioSet::bundled().get("warmup").unwrap().clone();
        s.source_excerpts.insert("Nowhere.cs:1".into(), "x".into());
        assert!(s.validate().is_err());
    }
}
