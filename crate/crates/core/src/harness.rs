//! Deterministic Chemist crew and memory bootstrap.
//!
//! The mock crew answers from keyword rules with canned results and canned
//! trajectories. The bootstrap generator fills a store with seeded
//! extract/classify/assess/format tool chains, one instruction per tool.

use std::fs;
use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crew::{CrewAdapter, CrewDescription, CrewError, CrewOutput};
use crate::store::{MemoryStore, StoreError};
use crate::suggest::ScriptedLlm;
use crate::trajectory::{EventKind, TrajectoryEvent};
use crate::workflow::{Step, StepInput, Workflow, WorkflowSource};

pub const CHEMIST_CREW_ID: &str = "chemist";
pub const INSTRUCTION_PLACEHOLDER: &str = "{instruction}";

const CHEMIST_CREW_JSON: &str = include_str!("../fixtures/crews/chemist.json");
const CHEMIST_RULES_JSON: [&str; 4] = [
    include_str!("../fixtures/rules/01_extract.json"),
    include_str!("../fixtures/rules/02_classify.json"),
    include_str!("../fixtures/rules/03_hazard.json"),
    include_str!("../fixtures/rules/04_pfoa_knowledge.json"),
];
const CHEMIST_LLM_JSON: &str = include_str!("../fixtures/llm/chemist.json");

const DEFAULT_KNOWLEDGE_ANSWER: &str =
    "None of the crew's tools applies to this request. Answer given from general knowledge only.";

pub fn chemist_crew() -> CrewDescription {
    CrewDescription::from_json(CHEMIST_CREW_JSON.as_bytes()).expect("bundled crew fixture is valid")
}

/// Scripted LLM with canned replies for memory and fallback prompts.
pub fn chemist_llm() -> ScriptedLlm {
    ScriptedLlm::from_json(CHEMIST_LLM_JSON.as_bytes()).expect("bundled LLM script is valid")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockCrewRule {
    /// All keywords must occur in the lowercased instruction.
    pub keywords: Vec<String>,
    /// Events to emit. `{instruction}` in instruction events is replaced by
    /// the verbatim instruction.
    pub script: Vec<TrajectoryEvent>,
    pub result_text: String,
}

impl MockCrewRule {
    fn matches(&self, lowered: &str) -> bool {
        self.keywords
            .iter()
            .all(|k| lowered.contains(&k.to_lowercase()))
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("bad rule fixture {name}: {message}")]
    Fixture { name: String, message: String },
    #[error("I/O on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bootstrap count must be at least 1")]
    ZeroCount,
    #[error("only {saved} distinct workflows could be generated out of {requested}")]
    Exhausted { requested: usize, saved: usize },
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Rule-driven stand-in for the Chemist crew. Among matching rules the one
/// with the most keywords wins, earlier rules on ties; otherwise a tool-free general-knowledge answer with an empty trajectory.
#[derive(Debug, Clone)]
pub struct MockCrew {
    rules: Vec<MockCrewRule>,
    default_result: String,
}

impl MockCrew {
    pub fn new(rules: Vec<MockCrewRule>) -> Self {
        MockCrew {
            rules,
            default_result: DEFAULT_KNOWLEDGE_ANSWER.to_string(),
        }
    }

    pub fn chemist() -> Self {
        let rules = CHEMIST_RULES_JSON
            .iter()
            .map(|text| serde_json::from_str(text).expect("bundled rule fixture is valid"))
            .collect();
        Self::new(rules)
    }

    /// Loads every `*.json` rule in `dir`, ordered by file name.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let dir = dir.as_ref();
        let io = |source| HarnessError::Io {
            path: dir.display().to_string(),
            source,
        };
        let mut paths: Vec<_> = fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let mut rules = Vec::new();
        for path in paths {
            let text = fs::read_to_string(&path).map_err(|source| HarnessError::Io {
                path: path.display().to_string(),
                source,
            })?;
            let rule = serde_json::from_str(&text).map_err(|e| HarnessError::Fixture {
                name: path.display().to_string(),
                message: e.to_string(),
            })?;
            rules.push(rule);
        }
        Ok(Self::new(rules))
    }

    pub fn rules(&self) -> &[MockCrewRule] {
        &self.rules
    }

    pub fn respond(&self, instruction: &str) -> CrewOutput {
        let lowered = instruction.to_lowercase();
        let best = self.rules.iter().filter(|r| r.matches(&lowered)).fold(
            None::<&MockCrewRule>,
            |best, r| match best {
                Some(b) if b.keywords.len() >= r.keywords.len() => Some(b),
                _ => Some(r),
            },
        );
        match best {
            Some(rule) => CrewOutput {
                result: rule.result_text.clone(),
                trajectory: rule
                    .script
                    .iter()
                    .map(|e| {
                        let mut e = e.clone();
                        if e.kind == EventKind::UserInstruction {
                            e.text = e.text.replace(INSTRUCTION_PLACEHOLDER, instruction);
                        }
                        e
                    })
                    .collect(),
            },
            None => CrewOutput {
                result: self.default_result.clone(),
                trajectory: Vec::new(),
            },
        }
    }
}

impl CrewAdapter for MockCrew {
    fn run(&self, instruction: &str) -> Result<CrewOutput, CrewError> {
        Ok(self.respond(instruction))
    }
}

struct ToolTemplate {
    name: &'static str,
    phrasings: [&'static str; 2],
    output: &'static str,
}

const EXTRACT: ToolTemplate = ToolTemplate {
    name: "sds_extract",
    phrasings: [
        "Extract all ingredients of {file}",
        "Which ingredients are listed in {file}?",
    ],
    output: "ingredient table",
};

const OPTIONAL_TOOLS: [ToolTemplate; 3] = [
    ToolTemplate {
        name: "pfas_classify",
        phrasings: [
            "Classify the ingredients as PFAS",
            "Are any of these ingredients PFAS?",
        ],
        output: "PFAS classification per ingredient",
    },
    ToolTemplate {
        name: "hazard_assess",
        phrasings: [
            "Assess the PBT hazard of the ingredients",
            "How hazardous are these ingredients?",
        ],
        output: "persistence, bioaccumulation and toxicity verdicts",
    },
    ToolTemplate {
        name: "format_markdown",
        phrasings: [
            "Convert the ingredient table to Markdown",
            "Can you format the table as Markdown?",
        ],
        output: "markdown table",
    },
];

const PRODUCT_FILES: [&str; 6] = [
    "sample.sds",
    "cleaner.sds",
    "sealant.sds",
    "gasket.fmd",
    "coating.fmd",
    "membrane.fmd",
];

fn bootstrap_epoch() -> DateTime<Utc> {
    DateTime::from_timestamp(1_735_689_600, 0).expect("valid epoch") // 2025-01-01T00:00:00Z
}

/// One sampled memory workflow: a chain starting with extraction, each tool
/// wrapped in its own instruction.
fn sample_workflow(rng: &mut ChaCha8Rng, seed: u64, index: usize) -> Workflow {
    let file = PRODUCT_FILES[rng.random_range(0..PRODUCT_FILES.len())];
    let mut chain = vec![&EXTRACT];
    for tool in &OPTIONAL_TOOLS {
        if rng.random_bool(0.5) {
            chain.push(tool);
        }
    }
    let mut steps = Vec::with_capacity(chain.len());
    for (slot, tool) in chain.into_iter().enumerate() {
        let phrasing = tool.phrasings[rng.random_range(0..2)].replace("{file}", file);
        let mut input = StepInput::new();
        input.insert(
            if slot == 0 { "file" } else { "source" }.to_string(),
            file.to_string(),
        );
        let call = Step::call(format!("s{}", 2 * slot + 1), tool.name, input, tool.output);
        steps
            .push(Step::instruction(format!("s{}", 2 * slot), phrasing).with_sub_steps(vec![call]));
    }
    let mut wf = Workflow::new(WorkflowSource::Bootstrap).with_steps(steps);
    wf.workflow_id = format!("bootstrap-{seed}-{index}");
    wf.created_at = bootstrap_epoch() + Duration::seconds(index as i64);
    wf.tags.insert("bootstrap".to_string());
    wf
}

/// Saves `count` distinct seeded workflows. Samples that duplicate a stored
/// workflow are redrawn; the result is deterministic for a fresh store.
pub fn bootstrap_memory(
    count: usize,
    seed: u64,
    store: &dyn MemoryStore,
) -> Result<Vec<String>, HarnessError> {
    if count == 0 {
        return Err(HarnessError::ZeroCount);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids = Vec::with_capacity(count);
    let max_attempts = count.saturating_mul(50);
    let mut attempt = 0;
    while ids.len() < count && attempt < max_attempts {
        let wf = sample_workflow(&mut rng, seed, attempt);
        attempt += 1;
        let receipt = store.save(&wf, true)?;
        if !receipt.duplicate {
            ids.push(receipt.record_id);
        }
    }
    if ids.len() < count {
        return Err(HarnessError::Exhausted {
            requested: count,
            saved: ids.len(),
        });
    }
    tracing::debug!(count, seed, attempts = attempt, "bootstrapped memory");
    Ok(ids)
}
