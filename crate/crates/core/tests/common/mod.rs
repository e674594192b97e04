#![allow(dead_code)]

use chrono::{DateTime, Duration, Utc};
use episodic_core::prov::to_prov;
use episodic_core::store::MemoryRecord;
use episodic_core::trajectory::{CallStatus, TrajectoryEvent};
use episodic_core::workflow::{Step, StepInput, Workflow, WorkflowSource};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CALL_NAMES: [&str; 5] = [
    "sds_extract",
    "pfas_classify",
    "hazard_assess",
    "format_markdown",
    "lookup",
];
pub const INSTRUCTIONS: [&str; 6] = [
    "extract the ingredients",
    "extract all ingredients of the sds",
    "classify the ingredients as pfas",
    "assess the hazard",
    "assess the pfas hazard of the ingredients",
    "what is pfoa",
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn epoch() -> DateTime<Utc> {
    DateTime::from_timestamp(1_750_000_000, 0).unwrap()
}

fn random_input(rng: &mut ChaCha8Rng) -> StepInput {
    let mut input = StepInput::new();
    if rng.random_bool(0.3) {
        input.insert(
            "file".into(),
            ["a.sds", "b.fmd"][rng.random_range(0..2)].into(),
        );
    }
    input
}

/// Random valid workflow with at most `max_leaves` leaves, depth at most 2.
pub fn random_workflow(rng: &mut ChaCha8Rng, max_leaves: usize) -> Workflow {
    let target = rng.random_range(0..=max_leaves);
    let mut steps = Vec::new();
    let mut leaves = 0;
    let mut next_id = 0;
    let mut id = || {
        next_id += 1;
        format!("s{next_id}")
    };
    while leaves < target {
        let roll: f64 = rng.random();
        if roll < 0.4 {
            let name = CALL_NAMES[rng.random_range(0..CALL_NAMES.len())];
            steps.push(Step::call(
                id(),
                name,
                random_input(rng),
                format!("out{}", rng.random_range(0..3)),
            ));
            leaves += 1;
        } else if roll < 0.6 {
            steps.push(Step::instruction(
                id(),
                INSTRUCTIONS[rng.random_range(0..INSTRUCTIONS.len())],
            ));
            leaves += 1;
        } else {
            let parent =
                Step::instruction(id(), INSTRUCTIONS[rng.random_range(0..INSTRUCTIONS.len())]);
            let k = rng.random_range(1..=3).min(target - leaves);
            let children = (0..k)
                .map(|_| {
                    let name = CALL_NAMES[rng.random_range(0..CALL_NAMES.len())];
                    Step::call(id(), name, random_input(rng), "")
                })
                .collect();
            steps.push(parent.with_sub_steps(children));
            leaves += k;
        }
    }
    let mut wf = Workflow::new(WorkflowSource::Import).with_steps(steps);
    wf.created_at = epoch() + Duration::milliseconds(rng.random_range(0..10_000));
    wf
}

/// Store snapshot of up to `max_records` random workflows; sometimes
/// includes a copy of `query` and duplicate timestamps.
pub fn random_records(
    rng: &mut ChaCha8Rng,
    query: &Workflow,
    max_records: usize,
) -> Vec<MemoryRecord> {
    let n = rng.random_range(0..=max_records);
    let mut records = Vec::with_capacity(n);
    let mut at = epoch();
    for i in 0..n {
        let workflow = if rng.random_bool(0.05) {
            query.clone()
        } else {
            random_workflow(rng, 8)
        };
        if rng.random_bool(0.7) {
            at += Duration::milliseconds(rng.random_range(1..5));
        }
        records.push(MemoryRecord {
            record_id: format!("rec-{:06}", i + 1),
            saved_at: at,
            prov: to_prov(&workflow),
            workflow,
        });
    }
    records
}

/// A clean trajectory plus the same trajectory with reasoning events,
/// failed calls and unfinished calls mixed in.
pub fn clean_and_noisy(rng: &mut ChaCha8Rng) -> (Vec<TrajectoryEvent>, Vec<TrajectoryEvent>) {
    #[derive(Clone)]
    enum Ev {
        Instr(String),
        Start(String, String),
        End(String, String, CallStatus),
        Reason,
    }
    let mut clean: Vec<Ev> = Vec::new();
    let mut call = 0;
    let turns = rng.random_range(0..5);
    if rng.random_bool(0.3) {
        call += 1;
        let name = CALL_NAMES[rng.random_range(0..CALL_NAMES.len())].to_string();
        clean.push(Ev::Start(name.clone(), format!("c{call}")));
        clean.push(Ev::End(name, format!("c{call}"), CallStatus::Success));
    }
    for _ in 0..turns {
        clean.push(Ev::Instr(
            INSTRUCTIONS[rng.random_range(0..INSTRUCTIONS.len())].to_string(),
        ));
        let calls = rng.random_range(0..4);
        let mut open: Vec<(String, String)> = Vec::new();
        for _ in 0..calls {
            call += 1;
            let name = CALL_NAMES[rng.random_range(0..CALL_NAMES.len())].to_string();
            clean.push(Ev::Start(name.clone(), format!("c{call}")));
            open.push((name, format!("c{call}")));
            // sometimes overlap calls
            if rng.random_bool(0.6) {
                let (n, id) = open.remove(rng.random_range(0..open.len()));
                clean.push(Ev::End(n, id, CallStatus::Success));
            }
        }
        while !open.is_empty() {
            let (n, id) = open.remove(rng.random_range(0..open.len()));
            clean.push(Ev::End(n, id, CallStatus::Success));
        }
    }

    let mut noisy = clean.clone();
    let extra = rng.random_range(0..8);
    for _ in 0..extra {
        let pos = rng.random_range(0..=noisy.len());
        match rng.random_range(0..3) {
            0 => noisy.insert(pos, Ev::Reason),
            1 => {
                call += 1;
                let name = CALL_NAMES[rng.random_range(0..CALL_NAMES.len())].to_string();
                let end_pos = rng.random_range(pos..=noisy.len());
                noisy.insert(
                    end_pos,
                    Ev::End(name.clone(), format!("c{call}"), CallStatus::Failure),
                );
                noisy.insert(pos, Ev::Start(name, format!("c{call}")));
            }
            _ => {
                call += 1;
                noisy.insert(pos, Ev::Start("never_finishes".into(), format!("c{call}")));
            }
        }
    }

    let materialize = |evs: &[Ev], offset: u64| -> Vec<TrajectoryEvent> {
        evs.iter()
            .enumerate()
            .map(|(i, e)| {
                let id = format!("e{}", i as u64 + offset);
                let ts = epoch() + Duration::milliseconds(i as i64 * 10);
                match e {
                    Ev::Instr(t) => TrajectoryEvent::instruction(id, t.clone(), ts),
                    Ev::Reason => TrajectoryEvent::reasoning(id, "thinking", ts),
                    Ev::Start(n, c) => {
                        TrajectoryEvent::call_start(id, n.clone(), c.clone(), StepInput::new(), ts)
                    }
                    Ev::End(n, c, s) => TrajectoryEvent::call_end(
                        id,
                        n.clone(),
                        c.clone(),
                        format!("{n} result"),
                        *s,
                        ts,
                    ),
                }
            })
            .collect()
    };
    (materialize(&clean, 0), materialize(&noisy, 1000))
}

/// Gateway wired to the chemist mock crew, the scripted LLM and the
/// built-in embedder with default retrieval settings.
pub fn chemist_gateway(
    store: std::sync::Arc<dyn episodic_core::MemoryStore>,
) -> episodic_core::Gateway {
    use episodic_core::harness::{chemist_crew, chemist_llm, MockCrew, CHEMIST_CREW_ID};
    use episodic_core::{Gateway, HashedBagOfWords, RetrievalConfig};
    use std::sync::Arc;
    let mut gw = Gateway::new(
        store,
        Arc::new(HashedBagOfWords::default()),
        Arc::new(chemist_llm()),
        RetrievalConfig::default(),
    );
    gw.register_crew(
        CHEMIST_CREW_ID,
        chemist_crew(),
        Arc::new(MockCrew::chemist()),
    );
    gw
}

pub const EXTRACT: &str = "Extract all ingredients of sample.sds";
pub const CLASSIFY: &str = "Classify the extracted ingredients as PFAS";
pub const PFOA_QUESTION: &str = "What is perfluorooctanoic acid?";
