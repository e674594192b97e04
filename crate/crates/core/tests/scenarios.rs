mod common;

use std::sync::Arc;
use std::thread;

use common::{chemist_gateway, CLASSIFY, EXTRACT, PFOA_QUESTION};
use episodic_core::harness::{bootstrap_memory, CHEMIST_CREW_ID};
use episodic_core::session::{InputOutcome, SessionError, SUGGESTIONS_UNAVAILABLE};
use episodic_core::suggest::RESPONSE_SEPARATOR;
use episodic_core::trajectory::{compile, read_jsonl};
use episodic_core::workflow::{leaf_sequence, workflows_equal};
use episodic_core::{
    FsStore, Gateway, HashedBagOfWords, InMemoryStore, MemoryStore, RetrievalConfig, ScriptedLlm,
    SuggestionMode,
};

fn bootstrapped(count: usize, seed: u64) -> Arc<dyn MemoryStore> {
    let store = Arc::new(InMemoryStore::new());
    bootstrap_memory(count, seed, store.as_ref()).unwrap();
    store
}

#[test]
fn extract_turn_with_bootstrapped_memory_suggests_classification() {
    let gw = chemist_gateway(bootstrapped(20, 1));
    let sid = gw.create_session(CHEMIST_CREW_ID).unwrap();
    let out = gw.handle_instruction(&sid, EXTRACT).unwrap();

    assert_eq!(out.mode, SuggestionMode::Memory);
    assert!(!out.matches.is_empty());
    assert!(out.matches.iter().all(|m| m.score > 0.65));
    assert!(out
        .suggestions
        .iter()
        .any(|s| s.contains("PFAS classifier")));

    let state = gw.session_state(&sid).unwrap();
    let crew_result = &state.turns[0].crew_result;
    assert!(out.response.starts_with(crew_result.as_str()));
    assert_eq!(
        &out.response[crew_result.len()..crew_result.len() + RESPONSE_SEPARATOR.len()],
        RESPONSE_SEPARATOR
    );
    let prompt = &state.turns[0].suggestion_set.as_ref().unwrap().prompt_used;
    assert!(prompt.contains("CURRENT WORKFLOW:\n- [instruction] Extract all ingredients of sample.sds\n  - [call] sds_extract(file=sample.sds)"));
}

#[test]
fn knowledge_question_on_empty_memory_falls_back_to_capabilities() {
    let gw = chemist_gateway(Arc::new(InMemoryStore::new()));
    let sid = gw.create_session(CHEMIST_CREW_ID).unwrap();
    let out = gw.handle_instruction(&sid, PFOA_QUESTION).unwrap();
    assert_eq!(out.mode, SuggestionMode::Fallback);
    assert!(out.matches.is_empty());
    assert!(gw.workflow(&sid).unwrap().is_empty());

    let state = gw.session_state(&sid).unwrap();
    let prompt = &state.turns[0].suggestion_set.as_ref().unwrap().prompt_used;
    for tool in ["Product extractor", "PFAS classifier", "Hazard Assessment"] {
        assert!(prompt.contains(tool), "missing {tool}");
    }
    assert!(prompt.contains("(no steps recorded yet)"));
}

#[test]
fn saved_session_is_excluded_from_its_replay_but_found_by_a_prefix() {
    let gw = chemist_gateway(bootstrapped(20, 1));
    let first = gw.create_session(CHEMIST_CREW_ID).unwrap();
    gw.handle_instruction(&first, EXTRACT).unwrap();
    gw.handle_instruction(&first, CLASSIFY).unwrap();
    let saved = match gw.handle_input(&first, "  \\save ").unwrap() {
        InputOutcome::Saved(r) => r,
        other => panic!("expected a save, got {other:?}"),
    };
    assert!(!saved.duplicate);

    let replay = gw.create_session(CHEMIST_CREW_ID).unwrap();
    let shorter = gw.handle_instruction(&replay, EXTRACT).unwrap();
    let hit = shorter
        .matches
        .iter()
        .find(|m| m.record_id == saved.record_id)
        .expect("prefix query should retrieve the saved record");
    assert_eq!(hit.score, 1.0);
    assert_eq!(hit.continuation.len(), 1);
    assert_eq!(hit.continuation[0].sub_steps[0].name, "pfas_classify");

    let full = gw.handle_instruction(&replay, CLASSIFY).unwrap();
    assert!(workflows_equal(
        &gw.workflow(&replay).unwrap(),
        &gw.workflow(&first).unwrap()
    ));
    assert!(full.matches.iter().all(|m| m.record_id != saved.record_id));

    // saving the replay again is recognised as a duplicate
    let again = gw.handle_save(&replay).unwrap();
    assert!(again.duplicate);
    assert_eq!(again.record_id, saved.record_id);
}

#[test]
fn workflow_accumulates_over_three_turns() {
    let gw = chemist_gateway(Arc::new(InMemoryStore::new()));
    let sid = gw.create_session(CHEMIST_CREW_ID).unwrap();
    for text in [
        EXTRACT,
        CLASSIFY,
        "Assess the hazard of the PFAS ingredients",
    ] {
        gw.handle_instruction(&sid, text).unwrap();
    }
    let state = gw.session_state(&sid).unwrap();
    let names: Vec<_> = leaf_sequence(&state.current_workflow)
        .iter()
        .map(|s| s.name.clone())
        .collect();
    assert_eq!(names, ["sds_extract", "pfas_classify", "hazard_assess"]);

    // the session workflow equals the fold of per-turn compilations
    let mut expected: Vec<String> = Vec::new();
    for turn in &state.turns {
        let wf = compile(&turn.trajectory).unwrap();
        expected.extend(leaf_sequence(&wf).iter().map(|s| s.name.clone()));
    }
    assert_eq!(names, expected);
    state.current_workflow.validate().unwrap();
}

#[test]
fn concurrent_sessions_do_not_interfere() {
    let gw = Arc::new(chemist_gateway(bootstrapped(20, 1)));
    let handles: Vec<_> = (0..8)
        .map(|i| {
            let gw = Arc::clone(&gw);
            thread::spawn(move || {
                let sid = gw.create_session(CHEMIST_CREW_ID).unwrap();
                gw.handle_instruction(&sid, EXTRACT).unwrap();
                if i % 2 == 0 {
                    gw.handle_instruction(&sid, CLASSIFY).unwrap();
                }
                (i, sid)
            })
        })
        .collect();
    for h in handles {
        let (i, sid) = h.join().unwrap();
        let leaves = leaf_sequence(&gw.workflow(&sid).unwrap()).len();
        assert_eq!(leaves, if i % 2 == 0 { 2 } else { 1 });
    }
}

#[test]
fn turns_within_one_session_are_serialized() {
    let gw = Arc::new(chemist_gateway(Arc::new(InMemoryStore::new())));
    let sid = gw.create_session(CHEMIST_CREW_ID).unwrap();
    let handles: Vec<_> = (0..6)
        .map(|_| {
            let (gw, sid) = (Arc::clone(&gw), sid.clone());
            thread::spawn(move || gw.handle_instruction(&sid, EXTRACT).unwrap())
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    let state = gw.session_state(&sid).unwrap();
    assert_eq!(state.turns.len(), 6);
    let wf = &state.current_workflow;
    wf.validate().unwrap();
    assert_eq!(leaf_sequence(wf).len(), 6);
}

#[test]
fn unparseable_llm_reply_keeps_the_turn() {
    let mut gw = Gateway::new(
        Arc::new(InMemoryStore::new()),
        Arc::new(HashedBagOfWords::default()),
        Arc::new(ScriptedLlm::always("I would rather not.")),
        RetrievalConfig::default(),
    );
    gw.register_crew(
        CHEMIST_CREW_ID,
        episodic_core::harness::chemist_crew(),
        Arc::new(episodic_core::harness::MockCrew::chemist()),
    );
    let sid = gw.create_session(CHEMIST_CREW_ID).unwrap();
    let out = gw.handle_instruction(&sid, EXTRACT).unwrap();
    assert!(out.response.ends_with(SUGGESTIONS_UNAVAILABLE));
    assert!(out.suggestions.is_empty());
    assert!(out.suggestion_error.is_some());
    assert_eq!(leaf_sequence(&gw.workflow(&sid).unwrap()).len(), 1);
}

#[test]
fn save_needs_steps_and_unknown_ids_are_rejected() {
    let gw = chemist_gateway(Arc::new(InMemoryStore::new()));
    assert!(matches!(
        gw.create_session("nobody"),
        Err(SessionError::UnknownCrew(_))
    ));
    assert!(matches!(
        gw.handle_save("missing"),
        Err(SessionError::UnknownSession(_))
    ));
    let sid = gw.create_session(CHEMIST_CREW_ID).unwrap();
    gw.handle_instruction(&sid, PFOA_QUESTION).unwrap();
    assert!(matches!(
        gw.handle_save(&sid),
        Err(SessionError::EmptyWorkflow)
    ));
    assert!(matches!(
        gw.handle_instruction(&sid, "\\save"),
        Err(SessionError::SaveIsCommand)
    ));
}

#[test]
fn file_store_survives_gateway_restart() {
    let dir = tempfile::tempdir().unwrap();
    let saved = {
        let store: Arc<dyn MemoryStore> = Arc::new(FsStore::open(dir.path()).unwrap());
        let gw = chemist_gateway(store);
        let sid = gw.create_session(CHEMIST_CREW_ID).unwrap();
        gw.handle_instruction(&sid, EXTRACT).unwrap();
        gw.handle_instruction(&sid, CLASSIFY).unwrap();
        let receipt = gw.handle_save(&sid).unwrap();
        gw.snapshot_sessions(&dir.path().join("sessions")).unwrap();
        (receipt, gw.workflow(&sid).unwrap(), sid)
    };
    let (receipt, workflow, sid) = saved;

    let store: Arc<dyn MemoryStore> = Arc::new(FsStore::open(dir.path()).unwrap());
    assert!(workflows_equal(
        &store.load(&receipt.record_id).unwrap().workflow,
        &workflow
    ));
    let gw = chemist_gateway(store);
    assert_eq!(
        gw.restore_sessions(&dir.path().join("sessions")).unwrap(),
        1
    );
    assert!(workflows_equal(&gw.workflow(&sid).unwrap(), &workflow));

    let fresh = gw.create_session(CHEMIST_CREW_ID).unwrap();
    let out = gw.handle_instruction(&fresh, EXTRACT).unwrap();
    assert_eq!(out.mode, SuggestionMode::Memory);
    assert_eq!(out.matches[0].record_id, receipt.record_id);
}

#[test]
fn trajectory_fixtures_compile_to_the_expected_shapes() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/trajectories");
    let clean = read_jsonl(std::io::BufReader::new(
        std::fs::File::open(format!("{dir}/extract_clean.jsonl")).unwrap(),
    ))
    .unwrap();
    let noisy = read_jsonl(std::io::BufReader::new(
        std::fs::File::open(format!("{dir}/extract_noisy.jsonl")).unwrap(),
    ))
    .unwrap();
    let a = compile(&clean).unwrap();
    let b = compile(&noisy).unwrap();
    assert!(workflows_equal(&a, &b));
    let names: Vec<_> = leaf_sequence(&a).iter().map(|s| s.name.clone()).collect();
    assert_eq!(names, ["sds_extract", "pfas_classify"]);
}
