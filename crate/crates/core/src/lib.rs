//! Episodic workflow memory for agent crews.
//!
//! Crew trajectories are compiled into workflow trees, stored as
//! provenance documents, and matched against the in-progress session by
//! sliding the session's leaf sequence over each stored workflow. Matches
//! (or, failing that, the crew's capability description) are turned into a
//! prompt whose numbered reply becomes the next-step suggestions appended to
//! the crew's answer.

pub mod crew;
pub mod embedding;
pub mod harness;
pub mod prov;
pub mod retrieval;
pub mod session;
pub mod store;
pub mod suggest;
pub mod timefmt;
pub mod trajectory;
pub mod workflow;

pub use crew::{CrewAdapter, CrewDescription, CrewOutput};
pub use embedding::{cosine, EmbeddingProvider, EmbeddingVector, HashedBagOfWords};
pub use retrieval::{retrieve, retrieve_oracle, RetrievalConfig, RetrievalMatch};
pub use session::{Gateway, InputOutcome, SessionState, TurnOutcome};
pub use store::{FsStore, InMemoryStore, MemoryRecord, MemoryStore, SaveReceipt};
pub use suggest::{LlmClient, ScriptedLlm, SuggestionMode, SuggestionSet};
pub use trajectory::{compile, TrajectoryEvent};
pub use workflow::{leaf_sequence, render_text, workflows_equal, Step, StepKind, Workflow};
