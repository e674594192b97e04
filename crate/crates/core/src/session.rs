//! Per-session orchestration of a chat turn.
//!
//! An instruction is forwarded verbatim to the crew. The crew's trajectory is
//! compiled onto the session workflow, similar memory workflows are
//! retrieved, and the suggestions are appended to the unchanged crew result.
//! `\save` stores the session workflow in episodic memory.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crew::{CrewAdapter, CrewDescription, CrewError};
use crate::embedding::EmbeddingProvider;
use crate::retrieval::{retrieve, RetrievalConfig, RetrievalError, RetrievalMatch};
use crate::store::{MemoryStore, SaveReceipt, StoreError};
use crate::suggest::{
    build_fallback_prompt, build_memory_prompt, compose_response, generate, LlmClient,
    SuggestionMode, SuggestionSet,
};
use crate::trajectory::{append, TrajectoryError, TrajectoryEvent};
use crate::workflow::{Workflow, WorkflowSource};

pub const SAVE_COMMAND: &str = "\\save";
pub const SUGGESTIONS_UNAVAILABLE: &str = "--- Suggested next steps unavailable ---";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub instruction: String,
    pub crew_result: String,
    pub trajectory: Vec<TrajectoryEvent>,
    pub suggestion_set: Option<SuggestionSet>,
    pub composed_response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub crew_id: String,
    pub current_workflow: Workflow,
    pub turns: Vec<Turn>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnOutcome {
    pub response: String,
    pub mode: SuggestionMode,
    pub suggestions: Vec<String>,
    pub matches: Vec<RetrievalMatch>,
    /// Set when suggestion generation failed and the notice line was used.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub suggestion_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InputOutcome {
    Turn(TurnOutcome),
    Saved(SaveReceipt),
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("unknown crew `{0}`")]
    UnknownCrew(String),
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("nothing to save: the session workflow has no steps yet")]
    EmptyWorkflow,
    #[error("`\\save` is a command, not an instruction")]
    SaveIsCommand,
    #[error(transparent)]
    Crew(#[from] CrewError),
    #[error("crew trajectory rejected: {0}")]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("session snapshot: {0}")]
    Snapshot(String),
}

pub fn is_save_command(text: &str) -> bool {
    text.trim() == SAVE_COMMAND
}

pub struct RegisteredCrew {
    pub description: CrewDescription,
    pub adapter: Arc<dyn CrewAdapter>,
}

/// Serves many sessions. Turns of one session are serialized by a
/// per-session lock; different sessions proceed concurrently.
pub struct Gateway {
    crews: HashMap<String, RegisteredCrew>,
    store: Arc<dyn MemoryStore>,
    embedder: Arc<dyn EmbeddingProvider>,
    llm: Arc<dyn LlmClient>,
    config: RetrievalConfig,
    sessions: RwLock<HashMap<String, Arc<Mutex<SessionState>>>>,
}

impl Gateway {
    pub fn new(
        store: Arc<dyn MemoryStore>,
        embedder: Arc<dyn EmbeddingProvider>,
        llm: Arc<dyn LlmClient>,
        config: RetrievalConfig,
    ) -> Self {
        Gateway {
            crews: HashMap::new(),
            store,
            embedder,
            llm,
            config,
            sessions: RwLock::new(HashMap::new()),
        }
    }

    pub fn register_crew(
        &mut self,
        crew_id: impl Into<String>,
        description: CrewDescription,
        adapter: Arc<dyn CrewAdapter>,
    ) {
        self.crews.insert(
            crew_id.into(),
            RegisteredCrew {
                description,
                adapter,
            },
        );
    }

    pub fn crew(&self, crew_id: &str) -> Option<&CrewDescription> {
        self.crews.get(crew_id).map(|c| &c.description)
    }

    pub fn store(&self) -> &Arc<dyn MemoryStore> {
        &self.store
    }

    pub fn config(&self) -> &RetrievalConfig {
        &self.config
    }

    pub fn create_session(&self, crew_id: &str) -> Result<String, SessionError> {
        if !self.crews.contains_key(crew_id) {
            return Err(SessionError::UnknownCrew(crew_id.to_string()));
        }
        let session_id = uuid::Uuid::new_v4().to_string();
        let state = SessionState {
            session_id: session_id.clone(),
            crew_id: crew_id.to_string(),
            current_workflow: Workflow::new(WorkflowSource::Session),
            turns: Vec::new(),
        };
        self.sessions
            .write()
            .expect("session table poisoned")
            .insert(session_id.clone(), Arc::new(Mutex::new(state)));
        Ok(session_id)
    }

    fn session(&self, session_id: &str) -> Result<Arc<Mutex<SessionState>>, SessionError> {
        self.sessions
            .read()
            .expect("session table poisoned")
            .get(session_id)
            .cloned()
            .ok_or_else(|| SessionError::UnknownSession(session_id.to_string()))
    }

    pub fn session_state(&self, session_id: &str) -> Result<SessionState, SessionError> {
        let handle = self.session(session_id)?;
        let state = handle.lock().expect("session poisoned");
        Ok(state.clone())
    }

    pub fn workflow(&self, session_id: &str) -> Result<Workflow, SessionError> {
        Ok(self.session_state(session_id)?.current_workflow)
    }

    /// Routes `\save` to [`Gateway::handle_save`] and everything else to
    /// [`Gateway::handle_instruction`].
    pub fn handle_input(&self, session_id: &str, text: &str) -> Result<InputOutcome, SessionError> {
        if is_save_command(text) {
            self.handle_save(session_id).map(InputOutcome::Saved)
        } else {
            self.handle_instruction(session_id, text)
                .map(InputOutcome::Turn)
        }
    }

    pub fn handle_instruction(
        &self,
        session_id: &str,
        text: &str,
    ) -> Result<TurnOutcome, SessionError> {
        if is_save_command(text) {
            return Err(SessionError::SaveIsCommand);
        }
        let handle = self.session(session_id)?;
        let mut state = handle.lock().expect("session poisoned");
        let crew = self
            .crews
            .get(&state.crew_id)
            .ok_or_else(|| SessionError::UnknownCrew(state.crew_id.clone()))?;

        let output = crew.adapter.run(text)?;
        let workflow = append(&state.current_workflow, &output.trajectory)?;
        let matches = retrieve(
            &workflow,
            self.store.as_ref(),
            &self.config,
            self.embedder.as_ref(),
        )?;

        let mode = if matches.is_empty() {
            SuggestionMode::Fallback
        } else {
            SuggestionMode::Memory
        };
        let suggested = match mode {
            SuggestionMode::Memory => build_memory_prompt(&workflow, &matches, self.store.as_ref()),
            SuggestionMode::Fallback => Ok(build_fallback_prompt(&workflow, &crew.description)),
        }
        .and_then(|prompt| generate(&prompt, self.llm.as_ref(), mode));

        let (response, suggestion_set, suggestion_error) = match suggested {
            Ok(set) => (compose_response(&output.result, &set), Some(set), None),
            Err(e) => {
                tracing::warn!(session_id, error = %e, "suggestions unavailable");
                let response = format!("{}\n\n{SUGGESTIONS_UNAVAILABLE}", output.result);
                (response, None, Some(e.to_string()))
            }
        };

        state.current_workflow = workflow;
        state.turns.push(Turn {
            instruction: text.to_string(),
            crew_result: output.result,
            trajectory: output.trajectory,
            suggestion_set: suggestion_set.clone(),
            composed_response: response.clone(),
        });
        Ok(TurnOutcome {
            response,
            mode,
            suggestions: suggestion_set.map(|s| s.suggestions).unwrap_or_default(),
            matches,
            suggestion_error,
        })
    }

    pub fn handle_save(&self, session_id: &str) -> Result<SaveReceipt, SessionError> {
        let handle = self.session(session_id)?;
        let state = handle.lock().expect("session poisoned");
        if state.current_workflow.is_empty() {
            return Err(SessionError::EmptyWorkflow);
        }
        Ok(self.store.save(&state.current_workflow, true)?)
    }

    /// Writes every session as `<session_id>.json` under `dir`.
    pub fn snapshot_sessions(&self, dir: &Path) -> Result<usize, SessionError> {
        let snap = |e: std::io::Error| SessionError::Snapshot(e.to_string());
        fs::create_dir_all(dir).map_err(snap)?;
        let sessions: Vec<_> = self
            .sessions
            .read()
            .expect("session table poisoned")
            .values()
            .cloned()
            .collect();
        for handle in &sessions {
            let state = handle.lock().expect("session poisoned");
            let bytes = serde_json::to_vec_pretty(&*state)
                .map_err(|e| SessionError::Snapshot(e.to_string()))?;
            fs::write(dir.join(format!("{}.json", state.session_id)), bytes).map_err(snap)?;
        }
        Ok(sessions.len())
    }

    /// Loads sessions written by [`Gateway::snapshot_sessions`]. Sessions
    /// whose crew is not registered are rejected.
    pub fn restore_sessions(&self, dir: &Path) -> Result<usize, SessionError> {
        let snap = |e: std::io::Error| SessionError::Snapshot(e.to_string());
        let mut restored = 0;
        for entry in fs::read_dir(dir).map_err(snap)? {
            let path = entry.map_err(snap)?.path();
            if path.extension().is_none_or(|x| x != "json") {
                continue;
            }
            let bytes = fs::read(&path).map_err(snap)?;
            let state: SessionState = serde_json::from_slice(&bytes)
                .map_err(|e| SessionError::Snapshot(format!("{}: {e}", path.display())))?;
            if !self.crews.contains_key(&state.crew_id) {
                return Err(SessionError::UnknownCrew(state.crew_id));
            }
            self.sessions
                .write()
                .expect("session table poisoned")
                .insert(state.session_id.clone(), Arc::new(Mutex::new(state)));
            restored += 1;
        }
        Ok(restored)
    }
}
