//! Trajectory events emitted by a crew and their compilation into workflows.
//!
//! Reasoning events, failed tool calls and tool calls that never finish are
//! dropped. Each user instruction opens a top-level step; successful tool
//! calls attach to the most recent instruction at the time they complete.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timefmt;
use crate::workflow::{Step, StepInput, Workflow, WorkflowSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    UserInstruction,
    Reasoning,
    ToolCallStart,
    ToolCallEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CallStatus {
    Success,
    Failure,
}

/// One line of a crew execution log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryEvent {
    pub event_id: String,
    pub kind: EventKind,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub tool_name: String,
    #[serde(default)]
    pub call_id: String,
    #[serde(default)]
    pub input: StepInput,
    #[serde(default)]
    pub output: String,
    #[serde(default)]
    pub status: Option<CallStatus>,
    #[serde(with = "timefmt")]
    pub timestamp: DateTime<Utc>,
}

impl TrajectoryEvent {
    fn bare(event_id: impl Into<String>, kind: EventKind, timestamp: DateTime<Utc>) -> Self {
        TrajectoryEvent {
            event_id: event_id.into(),
            kind,
            text: String::new(),
            tool_name: String::new(),
            call_id: String::new(),
            input: StepInput::new(),
            output: String::new(),
            status: None,
            timestamp,
        }
    }

    pub fn instruction(
        event_id: impl Into<String>,
        text: impl Into<String>,
        timestamp: DateTime<Utc>,
    ) -> Self {
        let mut e = Self::bare(event_id, EventKind::UserInstruction, timestamp);
        e.text = text.into();
        e
    }

    pub fn reasoning(
        event_id: impl Into<String>,
        text: impl Into<String>,
        timestamp: DateTime<Utc>,
    ) -> Self {
        let mut e = Self::bare(event_id, EventKind::Reasoning, timestamp);
        e.text = text.into();
        e
    }

    pub fn call_start(
        event_id: impl Into<String>,
        tool_name: impl Into<String>,
        call_id: impl Into<String>,
        input: StepInput,
        timestamp: DateTime<Utc>,
    ) -> Self {
        let mut e = Self::bare(event_id, EventKind::ToolCallStart, timestamp);
        e.tool_name = tool_name.into();
        e.call_id = call_id.into();
        e.input = input;
        e
    }

    pub fn call_end(
        event_id: impl Into<String>,
        tool_name: impl Into<String>,
        call_id: impl Into<String>,
        output: impl Into<String>,
        status: CallStatus,
        timestamp: DateTime<Utc>,
    ) -> Self {
        let mut e = Self::bare(event_id, EventKind::ToolCallEnd, timestamp);
        e.tool_name = tool_name.into();
        e.call_id = call_id.into();
        e.output = output.into();
        e.status = Some(status);
        e
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TrajectoryError {
    #[error("event {event_id}: tool-call-end references unknown call id {call_id:?}")]
    UnknownCallId { event_id: String, call_id: String },
    #[error("event {event_id}: call id {call_id:?} is already in flight")]
    DuplicateCallId { event_id: String, call_id: String },
    #[error("event {event_id}: timestamp precedes the previous event")]
    OutOfOrder { event_id: String },
    #[error("event {event_id}: {reason}")]
    Malformed { event_id: String, reason: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trajectory I/O: {0}")]
    Io(String),
}

/// Compiles a full trajectory into a fresh session workflow.
pub fn compile(events: &[TrajectoryEvent]) -> Result<Workflow, TrajectoryError> {
    let mut ids = StepIds::default();
    let steps = compile_steps(events, &mut ids)?;
    let mut wf = Workflow::new(WorkflowSource::Session).with_steps(steps);
    if let Some(first) = events.first() {
        wf.created_at = first.timestamp;
    }
    Ok(wf)
}

/// Returns `session` extended with the top-level steps compiled from
/// `events`. Step ids stay unique across turns.
pub fn append(session: &Workflow, events: &[TrajectoryEvent]) -> Result<Workflow, TrajectoryError> {
    let mut ids = StepIds::from_workflow(session);
    let steps = compile_steps(events, &mut ids)?;
    let mut wf = session.clone();
    if wf.steps.is_empty() {
        if let Some(first) = events.first() {
            wf.created_at = first.timestamp;
        }
    }
    wf.steps.extend(steps);
    Ok(wf)
}

#[derive(Default)]
struct StepIds {
    used: HashSet<String>,
    next: usize,
}

impl StepIds {
    fn from_workflow(w: &Workflow) -> Self {
        fn walk(steps: &[Step], used: &mut HashSet<String>) {
            for s in steps {
                used.insert(s.step_id.clone());
                walk(&s.sub_steps, used);
            }
        }
        let mut used = HashSet::new();
        walk(&w.steps, &mut used);
        StepIds {
            next: used.len(),
            used,
        }
    }

    fn fresh(&mut self) -> String {
        loop {
            let id = format!("s{}", self.next);
            self.next += 1;
            if self.used.insert(id.clone()) {
                return id;
            }
        }
    }
}

struct PendingCall<'a> {
    start: &'a TrajectoryEvent,
}

fn compile_steps(
    events: &[TrajectoryEvent],
    ids: &mut StepIds,
) -> Result<Vec<Step>, TrajectoryError> {
    let mut steps: Vec<Step> = Vec::new();
    // index into `steps` of the latest instruction
    let mut open_instruction: Option<usize> = None;
    let mut pending: HashMap<&str, PendingCall<'_>> = HashMap::new();
    let mut last_ts: Option<DateTime<Utc>> = None;

    for event in events {
        if last_ts.is_some_and(|t| event.timestamp < t) {
            return Err(TrajectoryError::OutOfOrder {
                event_id: event.event_id.clone(),
            });
        }
        last_ts = Some(event.timestamp);

        match event.kind {
            EventKind::UserInstruction => {
                if event.text.is_empty() {
                    return Err(malformed(event, "user instruction without text"));
                }
                steps.push(Step::instruction(ids.fresh(), event.text.clone()));
                open_instruction = Some(steps.len() - 1);
            }
            EventKind::Reasoning => {}
            EventKind::ToolCallStart => {
                if event.tool_name.is_empty() {
                    return Err(malformed(event, "tool-call-start without tool_name"));
                }
                if pending.contains_key(event.call_id.as_str()) {
                    return Err(TrajectoryError::DuplicateCallId {
                        event_id: event.event_id.clone(),
                        call_id: event.call_id.clone(),
                    });
                }
                pending.insert(event.call_id.as_str(), PendingCall { start: event });
            }
            EventKind::ToolCallEnd => {
                let Some(call) = pending.remove(event.call_id.as_str()) else {
                    return Err(TrajectoryError::UnknownCallId {
                        event_id: event.event_id.clone(),
                        call_id: event.call_id.clone(),
                    });
                };
                let status = event
                    .status
                    .ok_or_else(|| malformed(event, "tool-call-end without status"))?;
                if status == CallStatus::Failure {
                    continue;
                }
                let step = Step::call(
                    ids.fresh(),
                    call.start.tool_name.clone(),
                    call.start.input.clone(),
                    event.output.clone(),
                );
                match open_instruction {
                    Some(i) => steps[i].sub_steps.push(step),
                    None => steps.push(step),
                }
            }
        }
    }
    // calls still pending never finished; they are dropped like failures
    Ok(steps)
}

fn malformed(event: &TrajectoryEvent, reason: &str) -> TrajectoryError {
    TrajectoryError::Malformed {
        event_id: event.event_id.clone(),
        reason: reason.to_string(),
    }
}

/// Reads a JSON-Lines trajectory. Blank lines are skipped.
pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<TrajectoryEvent>, TrajectoryError> {
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| TrajectoryError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(&line).map_err(|e| TrajectoryError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        events.push(event);
    }
    Ok(events)
}

pub fn write_jsonl<W: Write>(mut writer: W, events: &[TrajectoryEvent]) -> std::io::Result<()> {
    for event in events {
        serde_json::to_writer(&mut writer, event)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
