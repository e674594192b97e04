//! Workflow tree IR.
//!
//! A workflow is an ordered list of steps. A step is either a user
//! instruction, which may own function-call children, or a function call,
//! which is always a leaf. Similarity is computed over the leaf sequence;
//! duplicate detection uses [`workflows_equal`], which compares the action
//! structure and ignores identifiers, outputs and metadata.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use chrono::{DateTime, Utc};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timefmt;

/// Ordered key/value arguments of a step.
pub type StepInput = IndexMap<String, String>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepKind {
    UserInstruction,
    FunctionCall,
}

impl fmt::Display for StepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StepKind::UserInstruction => "user-instruction",
            StepKind::FunctionCall => "function-call",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    pub step_id: String,
    pub kind: StepKind,
    /// Function name; empty for instructions.
    pub name: String,
    /// Verbatim user text; empty for function calls.
    pub instruction: String,
    pub input: StepInput,
    pub output: String,
    pub sub_steps: Vec<Step>,
}

impl Step {
    pub fn instruction(step_id: impl Into<String>, text: impl Into<String>) -> Self {
        Step {
            step_id: step_id.into(),
            kind: StepKind::UserInstruction,
            name: String::new(),
            instruction: text.into(),
            input: StepInput::new(),
            output: String::new(),
            sub_steps: Vec::new(),
        }
    }

    pub fn call(
        step_id: impl Into<String>,
        name: impl Into<String>,
        input: StepInput,
        output: impl Into<String>,
    ) -> Self {
        Step {
            step_id: step_id.into(),
            kind: StepKind::FunctionCall,
            name: name.into(),
            instruction: String::new(),
            input,
            output: output.into(),
            sub_steps: Vec::new(),
        }
    }

    pub fn with_sub_steps(mut self, sub_steps: Vec<Step>) -> Self {
        self.sub_steps = sub_steps;
        self
    }

    pub fn is_leaf(&self) -> bool {
        self.sub_steps.is_empty()
    }

    pub fn is_call(&self) -> bool {
        self.kind == StepKind::FunctionCall
    }

    /// Number of steps in this subtree, including `self`.
    pub fn step_count(&self) -> usize {
        1 + self.sub_steps.iter().map(Step::step_count).sum::<usize>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorkflowSource {
    Session,
    Bootstrap,
    Import,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workflow {
    pub workflow_id: String,
    #[serde(with = "timefmt")]
    pub created_at: DateTime<Utc>,
    pub source: WorkflowSource,
    pub tags: BTreeSet<String>,
    pub steps: Vec<Step>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WorkflowError {
    #[error("invalid workflow document at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("workflow invariant violated at `{path}`: {reason}")]
    Invalid { path: String, reason: String },
}

impl Workflow {
    /// Empty workflow with a fresh id and the current time.
    pub fn new(source: WorkflowSource) -> Self {
        Workflow {
            workflow_id: uuid::Uuid::new_v4().to_string(),
            created_at: timefmt::now_millis(),
            source,
            tags: BTreeSet::new(),
            steps: Vec::new(),
        }
    }

    pub fn with_steps(mut self, steps: Vec<Step>) -> Self {
        self.steps = steps;
        self
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn step_count(&self) -> usize {
        self.steps.iter().map(Step::step_count).sum()
    }

    /// Checks the structural invariants: calls are named leaves, instructions
    /// carry text and only call children, step ids are unique.
    pub fn validate(&self) -> Result<(), WorkflowError> {
        let mut seen = HashSet::new();
        for (i, step) in self.steps.iter().enumerate() {
            validate_step(step, &format!("steps[{i}]"), true, &mut seen)?;
        }
        Ok(())
    }

    /// Compact JSON document.
    pub fn serialize(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("workflow serialization is infallible")
    }

    pub fn serialize_pretty(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(self).expect("workflow serialization is infallible")
    }

    /// Parses and validates a workflow document. Errors carry the path of the
    /// offending field, e.g. `steps[0].kind`.
    pub fn deserialize(bytes: &[u8]) -> Result<Workflow, WorkflowError> {
        let de = &mut serde_json::Deserializer::from_slice(bytes);
        let wf: Workflow = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            WorkflowError::Schema {
                path,
                message: e.into_inner().to_string(),
            }
        })?;
        wf.validate()?;
        Ok(wf)
    }
}

fn validate_step(
    step: &Step,
    path: &str,
    top_level: bool,
    seen: &mut HashSet<String>,
) -> Result<(), WorkflowError> {
    let invalid = |field: &str, reason: &str| WorkflowError::Invalid {
        path: format!("{path}.{field}"),
        reason: reason.to_string(),
    };
    if !seen.insert(step.step_id.clone()) {
        return Err(invalid(
            "step_id",
            &format!("duplicate step id {:?}", step.step_id),
        ));
    }
    match step.kind {
        StepKind::FunctionCall => {
            if step.name.is_empty() {
                return Err(invalid("name", "function call without a name"));
            }
            if !step.sub_steps.is_empty() {
                return Err(invalid("sub_steps", "function calls cannot have sub-steps"));
            }
        }
        StepKind::UserInstruction => {
            if step.instruction.is_empty() {
                return Err(invalid("instruction", "user instruction without text"));
            }
            if !top_level {
                return Err(invalid(
                    "kind",
                    "user instructions may only appear at the top level",
                ));
            }
            for (i, child) in step.sub_steps.iter().enumerate() {
                validate_step(child, &format!("{path}.sub_steps[{i}]"), false, seen)?;
            }
        }
    }
    Ok(())
}

/// Leaves of a workflow in depth-first pre-order.
#[derive(Debug, Clone, Default)]
pub struct LeafSequence<'a> {
    pub leaves: Vec<&'a Step>,
    parents: Vec<Option<&'a Step>>,
}

impl<'a> LeafSequence<'a> {
    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &'a Step> + '_ {
        self.leaves.iter().copied()
    }

    pub fn as_slice(&self) -> &[&'a Step] {
        &self.leaves
    }

    /// The instruction step owning leaf `index`, if it is nested.
    pub fn parent(&self, index: usize) -> Option<&'a Step> {
        self.parents.get(index).copied().flatten()
    }
}

pub fn leaf_sequence(w: &Workflow) -> LeafSequence<'_> {
    let mut seq = LeafSequence::default();
    for step in &w.steps {
        collect_leaves(step, None, &mut seq);
    }
    seq
}

fn collect_leaves<'a>(step: &'a Step, parent: Option<&'a Step>, seq: &mut LeafSequence<'a>) {
    if step.sub_steps.is_empty() {
        seq.leaves.push(step);
        seq.parents.push(parent);
    } else {
        for child in &step.sub_steps {
            collect_leaves(child, Some(step), seq);
        }
    }
}

/// Structural equality over kind, name, instruction, input and tree shape.
/// Step ids, outputs and workflow metadata are ignored.
pub fn workflows_equal(a: &Workflow, b: &Workflow) -> bool {
    steps_equal(&a.steps, &b.steps)
}

pub fn steps_equal(a: &[Step], b: &[Step]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| step_equal(x, y))
}

fn step_equal(a: &Step, b: &Step) -> bool {
    a.kind == b.kind
        && a.name == b.name
        && a.instruction == b.instruction
        && a.input.len() == b.input.len()
        && a.input.iter().zip(&b.input).all(|(x, y)| x == y)
        && steps_equal(&a.sub_steps, &b.sub_steps)
}

/// Indented one-line-per-step rendering used in prompts.
///
/// ```text
/// - [instruction] Extract all ingredients of sample.sds
///   - [call] sds_extract(file=sample.sds) -> 3 ingredients
/// ```
pub fn render_text(w: &Workflow) -> String {
    render_steps(&w.steps)
}

pub fn render_steps(steps: &[Step]) -> String {
    let mut lines = Vec::new();
    for step in steps {
        render_step(step, 0, &mut lines);
    }
    lines.join("\n")
}

fn render_step(step: &Step, depth: usize, lines: &mut Vec<String>) {
    let indent = "  ".repeat(depth);
    let line = match step.kind {
        StepKind::UserInstruction => {
            format!("{indent}- [instruction] {}", one_line(&step.instruction))
        }
        StepKind::FunctionCall => {
            let args = step
                .input
                .iter()
                .map(|(k, v)| format!("{}={}", one_line(k), one_line(v)))
                .collect::<Vec<_>>()
                .join(",");
            format!(
                "{indent}- [call] {}({args}) -> {}",
                one_line(&step.name),
                one_line(&step.output)
            )
        }
    };
    lines.push(line);
    for child in &step.sub_steps {
        render_step(child, depth + 1, lines);
    }
}

fn one_line(s: &str) -> String {
    if !s.contains(['\n', '\r', '\\']) {
        return s.to_string();
    }
    s.replace('\\', "\\\\")
        .replace('\n', "\\n")
        .replace('\r', "\\r")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(pairs: &[(&str, &str)]) -> StepInput {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    fn wf(steps: Vec<Step>) -> Workflow {
        Workflow::new(WorkflowSource::Session).with_steps(steps)
    }

    fn names<'a>(seq: &LeafSequence<'a>) -> Vec<String> {
        seq.iter()
            .map(|s| match s.kind {
                StepKind::FunctionCall => format!("fc {}", s.name),
                StepKind::UserInstruction => format!("instr {}", s.instruction),
            })
            .collect()
    }

    #[test]
    fn leaf_sequence_of_empty_workflow_is_empty() {
        assert!(leaf_sequence(&wf(vec![])).is_empty());
    }

    #[test]
    fn instruction_with_child_contributes_only_the_child() {
        let w = wf(vec![Step::instruction("s0", "extract SDS").with_sub_steps(
            vec![Step::call("s1", "sds_extract", input(&[]), "")],
        )]);
        let seq = leaf_sequence(&w);
        assert_eq!(names(&seq), ["fc sds_extract"]);
        assert_eq!(seq.parent(0).unwrap().step_id, "s0");
    }

    #[test]
    fn leaf_sequence_is_depth_first_pre_order() {
        let w = wf(vec![
            Step::instruction("a", "A"),
            Step::instruction("b", "B").with_sub_steps(vec![
                Step::call("f1", "f1", input(&[]), ""),
                Step::call("f2", "f2", input(&[]), ""),
            ]),
        ]);
        let seq = leaf_sequence(&w);
        assert_eq!(names(&seq), ["instr A", "fc f1", "fc f2"]);
        assert!(seq.parent(0).is_none());
    }

    #[test]
    fn equality_ignores_ids_outputs_and_metadata() {
        let a = wf(vec![Step::call("x", "f", input(&[("k", "v")]), "out1")]);
        let mut b = wf(vec![Step::call("y", "f", input(&[("k", "v")]), "out2")]);
        b.tags.insert("t".into());
        b.source = WorkflowSource::Import;
        assert!(workflows_equal(&a, &a));
        assert!(workflows_equal(&a, &b));
        b.steps[0].name = "g".into();
        assert!(!workflows_equal(&a, &b));
    }

    #[test]
    fn equality_respects_input_order() {
        let a = wf(vec![Step::call(
            "x",
            "f",
            input(&[("a", "1"), ("b", "2")]),
            "",
        )]);
        let b = wf(vec![Step::call(
            "x",
            "f",
            input(&[("b", "2"), ("a", "1")]),
            "",
        )]);
        assert!(!workflows_equal(&a, &b));
    }

    #[test]
    fn render_empty_is_empty_string() {
        assert_eq!(render_text(&wf(vec![])), "");
    }

    #[test]
    fn render_single_call() {
        let w = wf(vec![Step::call(
            "s0",
            "pfas_classify",
            input(&[("smiles", "C(=O)(C(C(F)(F)F)(F)F)O")]),
            "PFAS",
        )]);
        assert_eq!(
            render_text(&w),
            "- [call] pfas_classify(smiles=C(=O)(C(C(F)(F)F)(F)F)O) -> PFAS"
        );
    }

    #[test]
    fn render_nests_children_two_spaces_deeper() {
        let w = wf(vec![Step::instruction("s0", "Assess the product")
            .with_sub_steps(vec![
                Step::call("s1", "pfas_classify", input(&[("smiles", "X")]), "PFAS"),
                Step::call("s2", "hazard_assess", input(&[]), "high"),
            ])]);
        let text = render_text(&w);
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "- [instruction] Assess the product");
        assert_eq!(lines[1], "  - [call] pfas_classify(smiles=X) -> PFAS");
        assert_eq!(lines[2], "  - [call] hazard_assess() -> high");
    }

    #[test]
    fn render_escapes_newlines() {
        let w = wf(vec![Step::instruction("s0", "two\nlines")]);
        assert_eq!(render_text(&w), "- [instruction] two\\nlines");
    }

    #[test]
    fn validate_rejects_nested_call_children() {
        let mut call = Step::call("s1", "f", input(&[]), "");
        call.sub_steps.push(Step::call("s2", "g", input(&[]), ""));
        let err = wf(vec![call]).validate().unwrap_err();
        assert!(
            matches!(err, WorkflowError::Invalid { ref path, .. } if path == "steps[0].sub_steps")
        );
    }

    #[test]
    fn validate_rejects_duplicate_ids_and_nested_instructions() {
        let w = wf(vec![
            Step::instruction("s", "a"),
            Step::instruction("s", "b"),
        ]);
        assert!(matches!(w.validate(), Err(WorkflowError::Invalid { .. })));

        let w = wf(vec![
            Step::instruction("a", "a").with_sub_steps(vec![Step::instruction("b", "b")])
        ]);
        assert!(matches!(
            w.validate(),
            Err(WorkflowError::Invalid { ref path, .. }) if path == "steps[0].sub_steps[0].kind"
        ));
    }

    #[test]
    fn validate_rejects_unnamed_call_and_blank_instruction() {
        assert!(wf(vec![Step::call("s", "", input(&[]), "")])
            .validate()
            .is_err());
        assert!(wf(vec![Step::instruction("s", "")]).validate().is_err());
    }

    #[test]
    fn serialize_uses_exact_keys() {
        let mut w = wf(vec![Step::call("s0", "f", input(&[("k", "v")]), "o")]);
        w.workflow_id = "wf-1".into();
        w.created_at = crate::timefmt::parse("2025-01-02T03:04:05.006Z").unwrap();
        let text = String::from_utf8(w.serialize()).unwrap();
        assert_eq!(
            text,
            r#"{"workflow_id":"wf-1","created_at":"2025-01-02T03:04:05.006Z","source":"session","tags":[],"steps":[{"step_id":"s0","kind":"function-call","name":"f","instruction":"","input":{"k":"v"},"output":"o","sub_steps":[]}]}"#
        );
    }

    #[test]
    fn deserialize_round_trips_empty_workflow() {
        let w = wf(vec![]);
        let bytes = w.serialize();
        let back = Workflow::deserialize(&bytes).unwrap();
        assert_eq!(back, w);
        assert_eq!(back.serialize(), bytes);
    }

    #[test]
    fn deserialize_reports_path_of_unknown_kind() {
        let doc = r#"{"workflow_id":"w","created_at":"2025-01-02T03:04:05.006Z","source":"session","tags":[],
            "steps":[{"step_id":"s0","kind":"thought","name":"","instruction":"x","input":{},"output":"","sub_steps":[]}]}"#;
        match Workflow::deserialize(doc.as_bytes()).unwrap_err() {
            WorkflowError::Schema { path, .. } => assert_eq!(path, "steps[0].kind"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn deserialize_reports_missing_field_and_bad_timestamp() {
        let missing = r#"{"workflow_id":"w","created_at":"2025-01-02T03:04:05.006Z","source":"session","tags":[],
            "steps":[{"step_id":"s0","kind":"function-call","name":"f","instruction":"","input":{},"output":""}]}"#;
        match Workflow::deserialize(missing.as_bytes()).unwrap_err() {
            WorkflowError::Schema { path, message } => {
                assert_eq!(path, "steps[0]");
                assert!(message.contains("sub_steps"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }

        let bad_ts = r#"{"workflow_id":"w","created_at":"last tuesday","source":"session","tags":[],"steps":[]}"#;
        match Workflow::deserialize(bad_ts.as_bytes()).unwrap_err() {
            WorkflowError::Schema { path, .. } => assert_eq!(path, "created_at"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
