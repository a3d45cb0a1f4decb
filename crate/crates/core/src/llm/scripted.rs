use std::sync::Arc;

use super::{script_key, CompletionRequest, CompletionResult, GatewayError, LlmBackend};
use crate::scenario::ScenarioSet;

/// Replays the outputs recorded in each scenario's `scripted_llm` table,
/// indexed by role, channel and step. The prompt text is ignored.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    scenarios: Arc<ScenarioSet>,
}

impl ScriptedBackend {
    pub fn new(scenarios: Arc<ScenarioSet>) -> Self {
        Self { scenarios }
    }
}

impl LlmBackend for ScriptedBackend {
    fn id(&self) -> &str {
        "scripted"
    }

    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        let Some(id) = req.scenario_id.as_deref() else {
            return Err(GatewayError::BackendUnavailable(
                "the scripted backend needs a scenario".into(),
            ));
        };
        let scenario = self
            .scenarios
            .get(id)
            .map_err(|e| GatewayError::BackendUnavailable(e.to_string()))?;
        let key = script_key(req.role, req.channel);
        let entry = scenario
            .script(&key)
            .and_then(|entries| entries.get(req.step))
            .ok_or_else(|| GatewayError::ScriptExhausted {
                scenario: scenario.id.clone(),
                key,
                step: req.step,
            })?;
        Ok(CompletionResult {
            text: entry.render(),
            backend_id: self.id().to_string(),
            latency_ms: 0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conversation::{ConversationState, DialogueAct, Utterance};
    use crate::llm::{assemble_prompt, AgentRole, Channel, Determinism};

    fn request(scenario: &str, role: AgentRole, step: usize) -> CompletionRequest {
        let state = ConversationState::open_session(Utterance::user(
            0,
            DialogueAct::PrimaryRequest,
            "Why did I get this SerializationException?",
        ))
        .unwrap();
        CompletionRequest {
            role,
            channel: Channel::Main,
            step,
            scenario_id: Some(scenario.into()),
            bundle: assemble_prompt(role, &state, "", 12_000).unwrap(),
            determinism: Determinism::Deterministic,
        }
    }

    #[test]
    fn resolves_by_step() {
        let b = ScriptedBackend::new(Arc::new(ScenarioSet::bundled()));
        let r = b
            .complete(&request("task1", AgentRole::CollaborativeResponder, 0))
            .unwrap();
        assert!(r.text.contains("`serialized`"));
        assert_eq!(
            r,
            b.complete(&request("task1", AgentRole::CollaborativeResponder, 0))
                .unwrap()
        );
        assert!(matches!(
            b.complete(&request("task1", AgentRole::CollaborativeResponder, 99)),
            Err(GatewayError::ScriptExhausted { step: 99, .. })
        ));
    }
}
