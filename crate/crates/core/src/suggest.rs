//! Next-step suggestions.
//!
//! Two prompt templates: memory mode lists the current workflow and every
//! retrieved past workflow; fallback mode lists the crew's agents and tools.
//! The model's reply is parsed as a numbered list and appended verbatim to
//! the crew result, never merged into it.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crew::CrewDescription;
use crate::embedding::fnv1a_64;
use crate::retrieval::RetrievalMatch;
use crate::store::{MemoryStore, StoreError};
use crate::workflow::{render_text, Workflow};

pub const RESPONSE_SEPARATOR: &str = "\n\n--- Suggested next steps ---\n";
pub const NO_STEPS_MARKER: &str = "(no steps recorded yet)";
pub const MAX_PROMPTED_SUGGESTIONS: usize = 3;
pub const MAX_PARSED_SUGGESTIONS: usize = 5;

const PROMPT_ROLE: &str = "You are the episodic memory assistant of a domain agent crew.";
const PROMPT_GUARD: &str =
    "Only suggest steps. Do not perform them and do not answer the user's request.";
const PROMPT_FOOTER: &str = "Reply with a numbered list only, one suggested step per line.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuggestionMode {
    Memory,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuggestionSet {
    pub mode: SuggestionMode,
    pub suggestions: Vec<String>,
    pub prompt_used: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LlmError {
    #[error("LLM transport failure: {0}")]
    Transport(String),
    #[error("no scripted reply for prompt {0}")]
    NoScript(String),
}

#[derive(Debug, Error)]
pub enum SuggestError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("reply contains no numbered list: {reply:?}")]
    Unparseable { reply: String },
    #[error("memory prompt needs at least one match")]
    NoMatches,
    #[error(transparent)]
    Store(#[from] StoreError),
}

pub trait LlmClient: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, LlmError>;
}

fn current_block(current: &Workflow) -> String {
    if current.is_empty() {
        NO_STEPS_MARKER.to_string()
    } else {
        render_text(current)
    }
}

/// Memory-mode prompt. Past workflows appear in the order of `matches`.
pub fn build_memory_prompt(
    current: &Workflow,
    matches: &[RetrievalMatch],
    store: &dyn MemoryStore,
) -> Result<String, SuggestError> {
    if matches.is_empty() {
        return Err(SuggestError::NoMatches);
    }
    let mut p = String::new();
    let _ = writeln!(p, "{PROMPT_ROLE}");
    let _ = writeln!(
        p,
        "The user is building a workflow step by step. Using the past workflows below as \
         evidence, suggest up to {MAX_PROMPTED_SUGGESTIONS} likely next steps for the current workflow."
    );
    let _ = writeln!(p, "{PROMPT_GUARD}");
    let _ = writeln!(p);
    let _ = writeln!(p, "CURRENT WORKFLOW:");
    let _ = writeln!(p, "{}", current_block(current));
    for m in matches {
        let record = store.load(&m.record_id)?;
        let _ = writeln!(p);
        let _ = writeln!(p, "PAST WORKFLOW (score={:.2}):", m.score);
        let _ = writeln!(p, "{}", render_text(&record.workflow));
    }
    let _ = writeln!(p);
    let _ = writeln!(p, "{PROMPT_FOOTER}");
    Ok(p)
}

/// Fallback prompt built from the crew's capabilities.
pub fn build_fallback_prompt(current: &Workflow, crew: &CrewDescription) -> String {
    let mut p = String::new();
    let _ = writeln!(p, "{PROMPT_ROLE}");
    let _ = writeln!(
        p,
        "No past workflow resembles the current one. Based on the crew capabilities below, \
         suggest up to {MAX_PROMPTED_SUGGESTIONS} likely next steps for the current workflow."
    );
    let _ = writeln!(p, "{PROMPT_GUARD}");
    let _ = writeln!(p);
    let _ = writeln!(p, "CREW: {}", crew.name);
    for agent in &crew.agents {
        let _ = writeln!(p, "AGENT: {}", agent.role);
        let _ = writeln!(p, "  Description: {}", agent.description);
        if agent.tools.is_empty() {
            let _ = writeln!(p, "  Tools: none");
        } else {
            let _ = writeln!(p, "  Tools:");
            for tool in &agent.tools {
                let _ = writeln!(p, "  - {}: {}", tool.name, tool.description);
            }
        }
    }
    let _ = writeln!(p);
    let _ = writeln!(p, "CURRENT WORKFLOW:");
    let _ = writeln!(p, "{}", current_block(current));
    let _ = writeln!(p);
    let _ = writeln!(p, "{PROMPT_FOOTER}");
    p
}

/// Items of lines shaped `N. text` or `N) text`, at most five, blanks skipped.
pub fn parse_numbered_list(reply: &str) -> Vec<String> {
    reply
        .lines()
        .filter_map(|line| {
            let line = line.trim();
            let digits = line.len() - line.trim_start_matches(|c: char| c.is_ascii_digit()).len();
            if digits == 0 {
                return None;
            }
            let rest = line[digits..]
                .strip_prefix('.')
                .or_else(|| line[digits..].strip_prefix(')'))?;
            if !rest.starts_with(char::is_whitespace) {
                return None;
            }
            let item = rest.trim();
            (!item.is_empty()).then(|| item.to_string())
        })
        .take(MAX_PARSED_SUGGESTIONS)
        .collect()
}

pub fn generate(
    prompt: &str,
    llm: &dyn LlmClient,
    mode: SuggestionMode,
) -> Result<SuggestionSet, SuggestError> {
    let reply = llm.complete(prompt)?;
    let suggestions = parse_numbered_list(&reply);
    if suggestions.is_empty() {
        return Err(SuggestError::Unparseable { reply });
    }
    Ok(SuggestionSet {
        mode,
        suggestions,
        prompt_used: prompt.to_string(),
    })
}

/// `crew_result` followed by the separator and the numbered suggestions.
/// With no suggestions the crew result is returned as is.
pub fn compose_response(crew_result: &str, s: &SuggestionSet) -> String {
    if s.suggestions.is_empty() {
        return crew_result.to_string();
    }
    let mut out = String::with_capacity(crew_result.len() + 64);
    out.push_str(crew_result);
    out.push_str(RESPONSE_SEPARATOR);
    let items: Vec<String> = s
        .suggestions
        .iter()
        .enumerate()
        .map(|(i, text)| format!("{}. {text}", i + 1))
        .collect();
    out.push_str(&items.join("\n"));
    out
}

/// Stable key for exact-prompt scripting.
pub fn prompt_key(prompt: &str) -> String {
    format!("{:016x}", fnv1a_64(prompt.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    /// Every fragment must occur in the prompt.
    pub when_all: Vec<String>,
    pub reply: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmScript {
    /// Replies keyed by [`prompt_key`]; consulted before `rules`.
    #[serde(default)]
    pub exact: HashMap<String, String>,
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
    #[serde(default)]
    pub default_reply: Option<String>,
}

/// Deterministic test double: replies come from a script, and every prompt
/// received is kept for inspection.
#[derive(Debug, Default)]
pub struct ScriptedLlm {
    script: LlmScript,
    prompts: Mutex<Vec<String>>,
}

impl ScriptedLlm {
    pub fn new(script: LlmScript) -> Self {
        ScriptedLlm {
            script,
            prompts: Mutex::new(Vec::new()),
        }
    }

    pub fn always(reply: impl Into<String>) -> Self {
        Self::new(LlmScript {
            default_reply: Some(reply.into()),
            ..LlmScript::default()
        })
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        Ok(Self::new(serde_json::from_slice(bytes)?))
    }

    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().expect("prompt log poisoned").clone()
    }
}

impl LlmClient for ScriptedLlm {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        self.prompts
            .lock()
            .expect("prompt log poisoned")
            .push(prompt.to_string());
        let key = prompt_key(prompt);
        if let Some(reply) = self.script.exact.get(&key) {
            return Ok(reply.clone());
        }
        self.script
            .rules
            .iter()
            .find(|r| r.when_all.iter().all(|frag| prompt.contains(frag.as_str())))
            .map(|r| r.reply.clone())
            .or_else(|| self.script.default_reply.clone())
            .ok_or(LlmError::NoScript(key))
    }
}
