//! Mapping between workflows and PROV-style documents.
//!
//! Every step becomes an activity `act:<step_id>`. Inputs become
//! `input-data` entities `ent:<step_id>:in:<key>` linked with `used`; a
//! non-empty output becomes an `output-data` entity `ent:<step_id>:out`
//! linked with `wasGeneratedBy`. Consecutive leaf activities are chained
//! with `wasInformedBy` (later step informed by earlier step). A nested call
//! records its owning instruction in the `parent` attribute.

use std::collections::{HashMap, HashSet};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timefmt;
use crate::workflow::{leaf_sequence, Step, StepInput, StepKind, Workflow, WorkflowSource};

pub const ATTR_PARENT: &str = "parent";
pub const ATTR_INSTRUCTION: &str = "instruction";
pub const ATTR_KEY: &str = "key";
pub const ATTR_VALUE: &str = "value";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntityType {
    InputData,
    OutputData,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvEntity {
    pub id: String,
    #[serde(rename = "type")]
    pub entity_type: EntityType,
    pub attributes: IndexMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvActivity {
    pub id: String,
    #[serde(rename = "type")]
    pub activity_type: StepKind,
    pub name: String,
    pub attributes: IndexMap<String, String>,
    #[serde(rename = "startTime")]
    pub start_time: String,
    #[serde(rename = "endTime")]
    pub end_time: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum RelationKind {
    Used,
    WasGeneratedBy,
    WasInformedBy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvRelation {
    pub kind: RelationKind,
    pub source: String,
    pub target: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvDocument {
    pub entities: Vec<ProvEntity>,
    pub activities: Vec<ProvActivity>,
    pub relations: Vec<ProvRelation>,
}

impl ProvDocument {
    pub fn count(&self, kind: RelationKind) -> usize {
        self.relations.iter().filter(|r| r.kind == kind).count()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProvError {
    #[error("relation #{index} ({kind:?}) references missing {role} `{id}`")]
    DanglingReference {
        index: usize,
        kind: RelationKind,
        role: &'static str,
        id: String,
    },
    #[error("wasInformedBy relations form a cycle through {0:?}")]
    Cycle(Vec<String>),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("activity `{id}`: {reason}")]
    MalformedActivity { id: String, reason: String },
    #[error("entity `{id}`: {reason}")]
    MalformedEntity { id: String, reason: String },
    #[error("wasInformedBy chain does not follow step order: {0}")]
    ChainMismatch(String),
    #[error(transparent)]
    Workflow(#[from] crate::workflow::WorkflowError),
}

pub fn activity_id(step_id: &str) -> String {
    format!("act:{step_id}")
}

pub fn input_entity_id(step_id: &str, key: &str) -> String {
    format!("ent:{step_id}:in:{key}")
}

pub fn output_entity_id(step_id: &str) -> String {
    format!("ent:{step_id}:out")
}

pub fn to_prov(w: &Workflow) -> ProvDocument {
    let mut doc = ProvDocument::default();
    let time = timefmt::format(&w.created_at);
    for step in &w.steps {
        add_step(&mut doc, step, None, &time);
    }
    let leaves = leaf_sequence(w);
    for pair in leaves.as_slice().windows(2) {
        doc.relations.push(ProvRelation {
            kind: RelationKind::WasInformedBy,
            source: activity_id(&pair[1].step_id),
            target: activity_id(&pair[0].step_id),
        });
    }
    doc
}

fn add_step(doc: &mut ProvDocument, step: &Step, parent: Option<&Step>, time: &str) {
    let act = activity_id(&step.step_id);
    let mut attributes = IndexMap::new();
    if step.kind == StepKind::UserInstruction {
        attributes.insert(ATTR_INSTRUCTION.to_string(), step.instruction.clone());
    }
    if let Some(p) = parent {
        attributes.insert(ATTR_PARENT.to_string(), activity_id(&p.step_id));
    }
    doc.activities.push(ProvActivity {
        id: act.clone(),
        activity_type: step.kind,
        name: step.name.clone(),
        attributes,
        start_time: time.to_string(),
        end_time: time.to_string(),
    });
    for (key, value) in &step.input {
        let ent = input_entity_id(&step.step_id, key);
        doc.entities.push(ProvEntity {
            id: ent.clone(),
            entity_type: EntityType::InputData,
            attributes: IndexMap::from([
                (ATTR_KEY.to_string(), key.clone()),
                (ATTR_VALUE.to_string(), value.clone()),
            ]),
        });
        doc.relations.push(ProvRelation {
            kind: RelationKind::Used,
            source: act.clone(),
            target: ent,
        });
    }
    if !step.output.is_empty() {
        let ent = output_entity_id(&step.step_id);
        doc.entities.push(ProvEntity {
            id: ent.clone(),
            entity_type: EntityType::OutputData,
            attributes: IndexMap::from([(ATTR_VALUE.to_string(), step.output.clone())]),
        });
        doc.relations.push(ProvRelation {
            kind: RelationKind::WasGeneratedBy,
            source: ent,
            target: act.clone(),
        });
    }
    for child in &step.sub_steps {
        add_step(doc, child, Some(step), time);
    }
}

/// Rebuilds a workflow from a document. The result has a fresh workflow id
/// and `source = import`; it is structurally equal to the original.
pub fn from_prov(d: &ProvDocument) -> Result<Workflow, ProvError> {
    let mut activities: HashMap<&str, &ProvActivity> = HashMap::new();
    for a in &d.activities {
        if activities.insert(a.id.as_str(), a).is_some() {
            return Err(ProvError::DuplicateId(a.id.clone()));
        }
    }
    let mut entities: HashMap<&str, &ProvEntity> = HashMap::new();
    for e in &d.entities {
        if activities.contains_key(e.id.as_str()) || entities.insert(e.id.as_str(), e).is_some() {
            return Err(ProvError::DuplicateId(e.id.clone()));
        }
    }

    let mut used: HashMap<&str, Vec<&ProvEntity>> = HashMap::new();
    let mut generated: HashMap<&str, &ProvEntity> = HashMap::new();
    let mut informed_by: Vec<(&str, &str)> = Vec::new();
    for (index, r) in d.relations.iter().enumerate() {
        let dangling = |role: &'static str, id: &str| ProvError::DanglingReference {
            index,
            kind: r.kind,
            role,
            id: id.to_string(),
        };
        match r.kind {
            RelationKind::Used => {
                if !activities.contains_key(r.source.as_str()) {
                    return Err(dangling("activity", &r.source));
                }
                let ent = *entities
                    .get(r.target.as_str())
                    .ok_or_else(|| dangling("entity", &r.target))?;
                used.entry(r.source.as_str()).or_default().push(ent);
            }
            RelationKind::WasGeneratedBy => {
                let ent = *entities
                    .get(r.source.as_str())
                    .ok_or_else(|| dangling("entity", &r.source))?;
                if !activities.contains_key(r.target.as_str()) {
                    return Err(dangling("activity", &r.target));
                }
                if generated.insert(r.target.as_str(), ent).is_some() {
                    return Err(ProvError::MalformedActivity {
                        id: r.target.clone(),
                        reason: "more than one generated output".into(),
                    });
                }
            }
            RelationKind::WasInformedBy => {
                for id in [&r.source, &r.target] {
                    if !activities.contains_key(id.as_str()) {
                        return Err(dangling("activity", id));
                    }
                }
                informed_by.push((r.source.as_str(), r.target.as_str()));
            }
        }
    }
    check_acyclic(&informed_by)?;

    let mut top: Vec<Step> = Vec::new();
    // activity id -> index into `top`
    let mut top_index: HashMap<&str, usize> = HashMap::new();
    for a in &d.activities {
        let step_id =
            a.id.strip_prefix("act:")
                .ok_or_else(|| ProvError::MalformedActivity {
                    id: a.id.clone(),
                    reason: "activity ids must start with `act:`".into(),
                })?;
        let mut input = StepInput::new();
        for ent in used.get(a.id.as_str()).into_iter().flatten() {
            let (Some(k), Some(v)) = (ent.attributes.get(ATTR_KEY), ent.attributes.get(ATTR_VALUE))
            else {
                return Err(ProvError::MalformedEntity {
                    id: ent.id.clone(),
                    reason: "input entity needs `key` and `value` attributes".into(),
                });
            };
            input.insert(k.clone(), v.clone());
        }
        let output = match generated.get(a.id.as_str()) {
            Some(ent) => ent.attributes.get(ATTR_VALUE).cloned().ok_or_else(|| {
                ProvError::MalformedEntity {
                    id: ent.id.clone(),
                    reason: "output entity needs a `value` attribute".into(),
                }
            })?,
            None => String::new(),
        };
        let step = Step {
            step_id: step_id.to_string(),
            kind: a.activity_type,
            name: a.name.clone(),
            instruction: a
                .attributes
                .get(ATTR_INSTRUCTION)
                .cloned()
                .unwrap_or_default(),
            input,
            output,
            sub_steps: Vec::new(),
        };
        match a.attributes.get(ATTR_PARENT) {
            Some(parent) => {
                let &i =
                    top_index
                        .get(parent.as_str())
                        .ok_or_else(|| ProvError::MalformedActivity {
                            id: a.id.clone(),
                            reason: format!(
                                "parent `{parent}` is not an earlier top-level activity"
                            ),
                        })?;
                top[i].sub_steps.push(step);
            }
            None => {
                top_index.insert(a.id.as_str(), top.len());
                top.push(step);
            }
        }
    }

    let created_at = d
        .activities
        .iter()
        .filter_map(|a| timefmt::parse(&a.start_time).ok())
        .min()
        .unwrap_or_else(timefmt::now_millis);
    let mut wf = Workflow::new(WorkflowSource::Import).with_steps(top);
    wf.created_at = created_at;
    wf.validate()?;
    check_chain(&wf, &informed_by)?;
    Ok(wf)
}

fn check_acyclic(edges: &[(&str, &str)]) -> Result<(), ProvError> {
    let mut out: HashMap<&str, Vec<&str>> = HashMap::new();
    for &(s, t) in edges {
        out.entry(s).or_default().push(t);
    }
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state: HashMap<&str, u8> = HashMap::new();
    let mut nodes: Vec<&str> = out.keys().copied().collect();
    nodes.sort_unstable();
    for &root in &nodes {
        if state.get(root).copied().unwrap_or(0) != 0 {
            continue;
        }
        let mut path: Vec<&str> = vec![root];
        let mut stack: Vec<(&str, usize)> = vec![(root, 0)];
        state.insert(root, 1);
        while let Some((node, next)) = stack.pop() {
            let succ = out.get(node).map(Vec::as_slice).unwrap_or(&[]);
            if next < succ.len() {
                stack.push((node, next + 1));
                let t = succ[next];
                match state.get(t).copied().unwrap_or(0) {
                    0 => {
                        state.insert(t, 1);
                        path.push(t);
                        stack.push((t, 0));
                    }
                    1 => {
                        let from = path.iter().position(|&n| n == t).unwrap_or(0);
                        return Err(ProvError::Cycle(
                            path[from..].iter().map(|s| s.to_string()).collect(),
                        ));
                    }
                    _ => {}
                }
            } else {
                state.insert(node, 2);
                path.pop();
            }
        }
    }
    Ok(())
}

fn check_chain(wf: &Workflow, edges: &[(&str, &str)]) -> Result<(), ProvError> {
    let leaves = leaf_sequence(wf);
    let expected: HashSet<(String, String)> = leaves
        .as_slice()
        .windows(2)
        .map(|p| (activity_id(&p[1].step_id), activity_id(&p[0].step_id)))
        .collect();
    let actual: HashSet<(String, String)> = edges
        .iter()
        .map(|&(s, t)| (s.to_string(), t.to_string()))
        .collect();
    if expected.len() != edges.len() || expected != actual {
        return Err(ProvError::ChainMismatch(format!(
            "expected {} edges between consecutive leaves, found {}",
            expected.len(),
            edges.len()
        )));
    }
    Ok(())
}
