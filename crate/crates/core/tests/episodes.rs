use std::sync::Arc;

use dbgchat_core::conversation::{DebugPhase, DialogueAct, Origin, PatternMode, Speaker};
use dbgchat_core::eval::{audit, run_episode, EvalMode, Persona, SimulatedUserPolicy};
use dbgchat_core::followup::FollowupKind;
use dbgchat_core::orchestrator::{
    replay, Engine, MetricKind, ModeOverride, OrchestratorError, SessionConfig, UserMessage,
};
use dbgchat_core::responders::Payload;
use dbgchat_core::scenario::{ScenarioSet, ScriptEntry};
use serde_json::json;

fn policy(persona: Persona) -> SimulatedUserPolicy {
    SimulatedUserPolicy {
        persona,
        ..SimulatedUserPolicy::default()
    }
}

fn session_for(engine: &Engine, id: &str) -> dbgchat_core::orchestrator::Session {
    engine
        .build_session(SessionConfig {
            scenario_id: Some(id.into()),
            ..SessionConfig::default()
        })
        .unwrap()
}

#[test]
fn task1_walkthrough() {
    let engine = Engine::bundled();
    let mut s = session_for(&engine, "task1");

    let out = s
        .handle(&UserMessage::typed("Why did I get this SerializationException?"))
        .unwrap();
    assert_eq!(
        out.verdict.unwrap().mode,
        dbgchat_core::responders::HardnessMode::Collaborative
    );
    let r = out.response.unwrap();
    assert_eq!(r.act, DialogueAct::InfoRequest);
    let kinds: Vec<_> = r.followups.iter().map(|f| (f.text.as_str(), f.kind)).collect();
    assert_eq!(
        kinds,
        [
            ("serialized is an empty string", FollowupKind::AnswerCandidate),
            (
                "How to check the value of serialized during execution?",
                FollowupKind::MetaQuestion
            ),
        ]
    );
    assert_eq!(out.state_view.depth, 2);

    let out = s
        .handle(&UserMessage::clicked("serialized is an empty string"))
        .unwrap();
    assert_eq!(out.state_view.phase, DebugPhase::Localization);
    let user_turn = &out.state_view.turns[2];
    assert_eq!(
        (user_turn.act, user_turn.origin),
        (DialogueAct::InfoProvision, Origin::FollowupClick)
    );
    assert!(matches!(
        out.response.unwrap().payload,
        Payload::InfoNeed { ref target, .. } if target == "ToJson"
    ));

    let code = engine.scenarios().get("task1").unwrap().scripted_user.answers["ToJson"].clone();
    let out = s.handle(&UserMessage::typed(code)).unwrap();
    assert_eq!(out.state_view.phase, DebugPhase::Comprehension);
    assert_eq!(out.response.as_ref().unwrap().act, DialogueAct::HypothesisProposal);

    let out = s
        .handle(&UserMessage::typed("Yes, Position is 36 and Length is 36."))
        .unwrap();
    assert_eq!(out.state_view.phase, DebugPhase::Fixing);
    let fix = out.response.unwrap();
    assert_eq!(fix.payload.fix_id(), Some("reset-stream-position"));
    // The aligned new-topic suggestion survives, the off-topic one does not.
    assert!(fix.followups.iter().all(|f| f.kind == FollowupKind::NewTopic));
    assert!(!fix.followups.iter().any(|f| f.text.contains("reject an empty json")));

    let out = s.handle(&UserMessage::typed("Thanks, that fixed it.")).unwrap();
    assert!(out.response.is_none());
    assert!(out.state_view.done);
    assert!(out.legal_next_acts.is_empty());

    let rec = s.record();
    let accepted: Vec<_> = rec.events_of(MetricKind::FixAccepted).collect();
    assert_eq!(accepted.len(), 1);
    assert_eq!(accepted[0].data["fix_id"], "reset-stream-position");
    let loc: Vec<_> = rec.events_of(MetricKind::LocalizationDeclared).collect();
    assert_eq!(loc[0].data["function_name"], "ToJson");
    assert_eq!(rec.events_of(MetricKind::FollowupClicked).count(), 1);
    assert_eq!(rec.events_of(MetricKind::PromptSent).count(), 5);
    assert_eq!(replay(rec).unwrap(), *s.state().unwrap());

    assert!(matches!(
        s.handle(&UserMessage::typed("one more thing")),
        Err(OrchestratorError::SessionClosed)
    ));
}

#[test]
fn full_mode_fixes_root_causes() {
    let engine = Engine::bundled();
    for (id, clicks) in [("task1", 1), ("task2", 2)] {
        let r = run_episode(&engine, id, EvalMode::Full, policy(Persona::Cooperative), 7).unwrap();
        assert_eq!(r.failure, None, "{id}");
        assert_eq!(r.pattern_mode, PatternMode::CollaborativeIE);
        assert!(r.fixed && r.localized, "{id}");
        assert!(r.assistant_turns <= 8);
        assert_eq!(r.assistant_turns, 4);
        assert_eq!(r.followups_used, clicks, "{id}");
        let sc = engine.scenarios().get(id).unwrap();
        assert_eq!(audit(&r, sc), Vec::<String>::new());
    }
}

#[test]
fn eager_mode_patches_symptoms() {
    let engine = Engine::bundled();
    for (id, fix) in [("task1", "guard-empty-json"), ("task2", "catch-overflow")] {
        let r = run_episode(&engine, id, EvalMode::Eager, policy(Persona::Cooperative), 7).unwrap();
        assert_eq!(r.pattern_mode, PatternMode::EagerQA);
        assert_eq!(r.assistant_turns, 1);
        assert!(!r.fixed && !r.localized);
        assert_eq!(r.accepted_fix, None);
        let proposed: Vec<_> = r.record.events_of(MetricKind::FixProposed).collect();
        assert_eq!(proposed[0].data["fix_id"], fix);
        assert_eq!(proposed[0].data["fix_kind"], "SymptomPatch");
        let closed: Vec<_> = r.record.events_of(MetricKind::SessionClosed).collect();
        assert_eq!(closed[0].data["fix_accepted"], false);

        // A developer who takes any fix still does not get the root cause.
        let hasty = run_episode(&engine, id, EvalMode::Eager, policy(Persona::Hasty), 7).unwrap();
        assert_eq!(hasty.accepted_fix.as_deref(), Some(fix));
        assert!(!hasty.fixed);
    }
}

#[test]
fn warmup_is_one_shot_in_both_modes() {
    let engine = Engine::bundled();
    for mode in [EvalMode::Full, EvalMode::Eager] {
        let r = run_episode(&engine, "warmup", mode, policy(Persona::Cooperative), 1).unwrap();
        assert_eq!(r.pattern_mode, PatternMode::EagerQA);
        assert!(r.fixed && r.localized);
        assert_eq!((r.assistant_turns, r.followups_used), (1, 0));
    }
}

#[test]
fn meta_questions_are_answered_and_resumed() {
    let engine = Engine::bundled();
    for id in ["task1", "task2"] {
        let r = run_episode(&engine, id, EvalMode::Full, policy(Persona::Novice), 3).unwrap();
        assert_eq!(r.failure, None);
        assert!(r.fixed);
        let state = replay(&r.record).unwrap();
        let metas: Vec<_> = state
            .transcript
            .iter()
            .filter(|u| u.act == DialogueAct::MetaQuestion)
            .collect();
        assert_eq!(metas.len(), 2, "{id}");
        // Each meta-question is followed by an assistant answer.
        for m in metas {
            let next = &state.transcript[m.turn_index as usize + 1];
            assert_eq!((next.speaker, next.act), (Speaker::Assistant, DialogueAct::Answer));
        }
        assert_eq!(audit(&r, engine.scenarios().get(id).unwrap()), Vec::<String>::new());
    }
}

#[test]
fn unoffered_click_counts_as_typed() {
    let engine = Engine::bundled();
    let mut s = session_for(&engine, "task1");
    s.handle(&UserMessage::typed("Why did I get this SerializationException?"))
        .unwrap();
    let out = s.handle(&UserMessage::clicked("serialized is \"\"")).unwrap();
    let turn = &out.state_view.turns[2];
    assert_eq!((turn.act, turn.origin), (DialogueAct::InfoProvision, Origin::Typed));
    assert_eq!(s.record().events_of(MetricKind::FollowupClicked).count(), 0);
}

#[test]
fn illegal_act_is_rejected_without_side_effects() {
    let engine = Engine::bundled();
    let mut s = session_for(&engine, "task1");
    s.handle(&UserMessage::typed("Why did I get this SerializationException?"))
        .unwrap();
    let before = s.state().unwrap().clone();
    let turns = s.record().turns.len();
    let msg = UserMessage {
        act: Some(DialogueAct::PrimaryRequest),
        ..UserMessage::typed("start over")
    };
    match s.handle(&msg) {
        Err(OrchestratorError::IllegalTransition { legal_next_acts, .. }) => {
            assert!(legal_next_acts.iter().any(|a| a.act == DialogueAct::InfoProvision));
            assert!(!legal_next_acts.iter().any(|a| a.act == DialogueAct::PrimaryRequest));
        }
        other => panic!("expected an illegal transition, got {other:?}"),
    }
    assert_eq!(s.state().unwrap(), &before);
    assert_eq!(s.record().turns.len(), turns);
    assert!(matches!(
        s.handle(&UserMessage::typed("  ")),
        Err(OrchestratorError::EmptyMessage)
    ));
}

#[test]
fn premature_fix_is_replaced_by_a_request() {
    let mut set = ScenarioSet::bundled();
    let mut sc = set.get("task1").unwrap().clone();
    let fix = sc.scripted_llm["CollaborativeResponder"][3].clone();
    sc.scripted_llm.insert("CollaborativeResponder".into(), vec![fix]);
    set.insert(sc);
    let engine = Engine::new(Arc::new(set));
    let mut s = session_for(&engine, "task1");
    let out = s
        .handle(&UserMessage::typed("Why did I get this SerializationException?"))
        .unwrap();
    let r = out.response.unwrap();
    assert_eq!(r.act, DialogueAct::InfoRequest);
    assert_eq!(s.record().events_of(MetricKind::FixProposed).count(), 0);
}

#[test]
fn exhausted_script_leaves_session_unchanged() {
    let mut set = ScenarioSet::bundled();
    let mut sc = set.get("task1").unwrap().clone();
    sc.scripted_llm.insert(
        "CollaborativeResponder".into(),
        vec![ScriptEntry::Structured(json!({
            "act": "InfoRequest",
            "body": "What is the value of `json` in `FromJson`?",
            "payload": {"type": "InfoNeed", "kind": "VariableValue", "target": "json"}
        }))],
    );
    set.insert(sc);
    let engine = Engine::new(Arc::new(set));
    let mut s = session_for(&engine, "task1");
    s.handle(&UserMessage::typed("Why did I get this SerializationException?"))
        .unwrap();
    let before = s.state().unwrap().clone();
    let err = s.handle(&UserMessage::typed("json is an empty string")).unwrap_err();
    assert!(err.to_string().contains("no scripted output"), "{err}");
    assert_eq!(s.state().unwrap(), &before);
    assert_eq!(s.record().turns.len(), 1);
}

#[test]
fn forced_modes_override_the_classifier() {
    let engine = Engine::bundled();
    let mut s = engine
        .build_session(SessionConfig {
            scenario_id: Some("task1".into()),
            mode_override: Some(ModeOverride::ForceEager),
            ..SessionConfig::default()
        })
        .unwrap();
    let out = s
        .handle(&UserMessage::typed("Why did I get this SerializationException?"))
        .unwrap();
    assert_eq!(out.state_view.pattern_mode, PatternMode::EagerQA);
    assert_eq!(out.verdict.unwrap().confidence, 1.0);
    assert_eq!(out.response.unwrap().act, DialogueAct::FixProposal);
}

#[test]
fn session_without_scenario_still_converses() {
    let engine = Engine::bundled();
    let mut s = engine.build_session(SessionConfig::default()).unwrap();
    assert!(s.context().is_none());
    // No scenario means no script: the backend reports that, and nothing is kept.
    assert!(s.handle(&UserMessage::typed("help")).is_err());
    assert!(s.state().is_none());
    assert!(matches!(
        engine.create_session(SessionConfig {
            scenario_id: Some("nope".into()),
            ..SessionConfig::default()
        }),
        Err(OrchestratorError::UnknownScenario(_))
    ));
}
