//! Domain crew description and the adapter the gateway forwards to.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajectory::TrajectoryEvent;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolDescription {
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentDescription {
    pub role: String,
    pub description: String,
    #[serde(default)]
    pub tools: Vec<ToolDescription>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrewDescription {
    pub name: String,
    pub agents: Vec<AgentDescription>,
}

impl CrewDescription {
    pub fn tool_names(&self) -> impl Iterator<Item = &str> {
        self.agents
            .iter()
            .flat_map(|a| a.tools.iter().map(|t| t.name.as_str()))
    }

    /// Tool names must be unique across the crew.
    pub fn validate(&self) -> Result<(), CrewError> {
        let mut seen = HashSet::new();
        for name in self.tool_names() {
            if !seen.insert(name) {
                return Err(CrewError::DuplicateTool(name.to_string()));
            }
        }
        Ok(())
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, CrewError> {
        let crew: CrewDescription =
            serde_json::from_slice(bytes).map_err(|e| CrewError::Fixture(e.to_string()))?;
        crew.validate()?;
        Ok(crew)
    }
}

/// What a crew hands back for one instruction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrewOutput {
    pub result: String,
    pub trajectory: Vec<TrajectoryEvent>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CrewError {
    #[error("tool `{0}` is declared more than once")]
    DuplicateTool(String),
    #[error("crew execution failed: {0}")]
    Execution(String),
    #[error("bad crew fixture: {0}")]
    Fixture(String),
}

pub trait CrewAdapter: Send + Sync {
    fn run(&self, instruction: &str) -> Result<CrewOutput, CrewError>;
}
