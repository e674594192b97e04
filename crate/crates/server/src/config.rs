//! Settings for the `episodic` binary: defaults, then an optional TOML
//! file, then command-line flags. `WORKFLOW_STORE_DIR` beats them all for
//! the store location.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::ValueEnum;
use episodic_core::embedding::DEFAULT_DIMENSION;
use episodic_core::harness::{chemist_crew, chemist_llm, MockCrew, CHEMIST_CREW_ID};
use episodic_core::retrieval::{DEFAULT_MAX_RESULTS, DEFAULT_THRESHOLD};
use episodic_core::{
    EmbeddingProvider, FsStore, Gateway, HashedBagOfWords, LlmClient, MemoryStore, RetrievalConfig,
    ScriptedLlm,
};
use serde::{Deserialize, Serialize};

use crate::clients::{HttpEmbedder, HttpLlm};

pub const STORE_ENV: &str = "WORKFLOW_STORE_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    Builtin,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LlmKind {
    Mock,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub store: PathBuf,
    pub addr: String,
    pub threshold: f64,
    pub max_results: usize,
    pub embedder: EmbedderKind,
    pub embedder_endpoint: Option<String>,
    pub dimension: usize,
    pub llm: LlmKind,
    pub llm_endpoint: Option<String>,
    /// Script for the mock LLM; the bundled chemist script when unset.
    pub llm_script: Option<PathBuf>,
    /// Directory of mock crew rules; the bundled chemist rules when unset.
    pub crew_rules: Option<PathBuf>,
    /// Sessions are restored from here on start and written back on shutdown.
    pub sessions_dir: Option<PathBuf>,
    pub timeout_secs: u64,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            store: PathBuf::from("workflow-store"),
            addr: "127.0.0.1:8080".into(),
            threshold: DEFAULT_THRESHOLD,
            max_results: DEFAULT_MAX_RESULTS,
            embedder: EmbedderKind::Builtin,
            embedder_endpoint: None,
            dimension: DEFAULT_DIMENSION,
            llm: LlmKind::Mock,
            llm_endpoint: None,
            llm_script: None,
            crew_rules: None,
            sessions_dir: None,
            timeout_secs: 60,
        }
    }
}

impl Settings {
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        path.map_or_else(|| Ok(Settings::default()), Settings::from_file)
    }

    /// Applies `WORKFLOW_STORE_DIR` when set and non-empty.
    pub fn apply_env(&mut self) {
        if let Some(dir) = std::env::var_os(STORE_ENV).filter(|d| !d.is_empty()) {
            self.store = PathBuf::from(dir);
        }
    }

    pub fn retrieval_config(&self) -> anyhow::Result<RetrievalConfig> {
        Ok(RetrievalConfig::new(self.threshold, self.max_results)?)
    }

    fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }

    pub fn open_store(&self) -> anyhow::Result<FsStore> {
        FsStore::open(&self.store)
            .with_context(|| format!("opening store {}", self.store.display()))
    }

    pub fn build_embedder(&self) -> anyhow::Result<Arc<dyn EmbeddingProvider>> {
        match self.embedder {
            EmbedderKind::Builtin => {
                if self.dimension == 0 {
                    bail!("dimension must be positive");
                }
                Ok(Arc::new(HashedBagOfWords::new(self.dimension)))
            }
            EmbedderKind::External => {
                let Some(endpoint) = &self.embedder_endpoint else {
                    bail!("embedder = external needs embedder_endpoint");
                };
                Ok(Arc::new(HttpEmbedder::new(
                    endpoint.clone(),
                    self.timeout(),
                )))
            }
        }
    }

    pub fn build_llm(&self) -> anyhow::Result<Arc<dyn LlmClient>> {
        match self.llm {
            LlmKind::Mock => match &self.llm_script {
                None => Ok(Arc::new(chemist_llm())),
                Some(path) => {
                    let bytes = std::fs::read(path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    Ok(Arc::new(ScriptedLlm::from_json(&bytes)?))
                }
            },
            LlmKind::External => {
                let Some(endpoint) = &self.llm_endpoint else {
                    bail!("llm = external needs llm_endpoint");
                };
                Ok(Arc::new(HttpLlm::new(endpoint.clone(), self.timeout())))
            }
        }
    }

    pub fn build_gateway(&self) -> anyhow::Result<Gateway> {
        self.build_gateway_with(Arc::new(self.open_store()?))
    }

    /// Gateway over `store` with the chemist crew registered.
    pub fn build_gateway_with(&self, store: Arc<dyn MemoryStore>) -> anyhow::Result<Gateway> {
        let crew = match &self.crew_rules {
            None => MockCrew::chemist(),
            Some(dir) => MockCrew::from_dir(dir)?,
        };
        let mut gateway = Gateway::new(
            store,
            self.build_embedder()?,
            self.build_llm()?,
            self.retrieval_config()?,
        );
        gateway.register_crew(CHEMIST_CREW_ID, chemist_crew(), Arc::new(crew));
        Ok(gateway)
    }
}
