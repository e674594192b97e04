//! Leaf-window retrieval of similar memory workflows.
//!
//! The current workflow's leaf sequence `S_c` is slid over every memory
//! workflow's leaf sequence as a contiguous window of the same length. The
//! window score is the mean per-position step similarity; function calls
//! match only on identical names, instructions compare by clamped cosine of
//! their embeddings. A record is returned when its best window scores
//! strictly above the threshold and it is not structurally equal to the
//! current workflow.

mod oracle;

use std::cmp::Ordering;
use std::collections::HashMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine, EmbeddingError, EmbeddingProvider, EmbeddingVector};
use crate::store::{MemoryRecord, MemoryStore, StoreError};
use crate::workflow::{leaf_sequence, workflows_equal, LeafSequence, Step, StepKind, Workflow};

pub use oracle::retrieve_oracle;

pub const DEFAULT_THRESHOLD: f64 = 0.65;
pub const DEFAULT_MAX_RESULTS: usize = 10;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowMode {
    #[default]
    Contiguous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub threshold: f64,
    pub max_results: usize,
    pub window_mode: WindowMode,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            threshold: DEFAULT_THRESHOLD,
            max_results: DEFAULT_MAX_RESULTS,
            window_mode: WindowMode::Contiguous,
        }
    }
}

impl RetrievalConfig {
    pub fn new(threshold: f64, max_results: usize) -> Result<Self, RetrievalError> {
        let cfg = RetrievalConfig {
            threshold,
            max_results,
            window_mode: WindowMode::Contiguous,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RetrievalError> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(RetrievalError::InvalidConfig(format!(
                "threshold must lie in [0, 1], got {}",
                self.threshold
            )));
        }
        if self.max_results == 0 {
            return Err(RetrievalError::InvalidConfig(
                "max_results must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMatch {
    pub record_id: String,
    pub score: f64,
    pub window_start: usize,
    pub window_end: usize,
    /// Memory leaves after the window, regrouped under copies of their
    /// parent instructions.
    pub continuation: Vec<Step>,
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("window length {window} does not match query length {query}")]
    LengthMismatch { query: usize, window: usize },
    #[error("query leaf sequence is empty")]
    EmptyQuery,
    #[error("invalid retrieval config: {0}")]
    InvalidConfig(String),
}

fn clamp_unit(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Similarity of two leaf steps in [0, 1].
pub fn step_similarity(
    a: &Step,
    b: &Step,
    embedder: &dyn EmbeddingProvider,
) -> Result<f64, EmbeddingError> {
    match (a.kind, b.kind) {
        (StepKind::FunctionCall, StepKind::FunctionCall) => Ok(name_similarity(a, b)),
        (StepKind::UserInstruction, StepKind::UserInstruction) => {
            let ea = embedder.embed(&a.instruction)?;
            let eb = embedder.embed(&b.instruction)?;
            Ok(clamp_unit(cosine(&ea, &eb)?))
        }
        _ => Ok(0.0),
    }
}

fn name_similarity(a: &Step, b: &Step) -> f64 {
    if a.name == b.name {
        1.0
    } else {
        0.0
    }
}

/// Step similarity with instruction embeddings computed once per text.
struct Scorer<'e> {
    embedder: &'e dyn EmbeddingProvider,
    cache: HashMap<String, EmbeddingVector>,
}

impl<'e> Scorer<'e> {
    fn new(embedder: &'e dyn EmbeddingProvider) -> Self {
        Scorer {
            embedder,
            cache: HashMap::new(),
        }
    }

    fn warm(&mut self, text: &str) -> Result<(), EmbeddingError> {
        if !self.cache.contains_key(text) {
            let v = self.embedder.embed(text)?;
            self.cache.insert(text.to_string(), v);
        }
        Ok(())
    }

    fn similarity(&mut self, a: &Step, b: &Step) -> Result<f64, EmbeddingError> {
        match (a.kind, b.kind) {
            (StepKind::FunctionCall, StepKind::FunctionCall) => Ok(name_similarity(a, b)),
            (StepKind::UserInstruction, StepKind::UserInstruction) => {
                self.warm(&a.instruction)?;
                self.warm(&b.instruction)?;
                let c = cosine(&self.cache[&a.instruction], &self.cache[&b.instruction])?;
                Ok(clamp_unit(c))
            }
            _ => Ok(0.0),
        }
    }
}

/// Mean step similarity over positionally aligned pairs.
pub fn window_score(
    query: &[&Step],
    window: &[&Step],
    embedder: &dyn EmbeddingProvider,
) -> Result<f64, RetrievalError> {
    if query.is_empty() {
        return Err(RetrievalError::EmptyQuery);
    }
    if query.len() != window.len() {
        return Err(RetrievalError::LengthMismatch {
            query: query.len(),
            window: window.len(),
        });
    }
    let mut sum = 0.0;
    for (a, b) in query.iter().zip(window) {
        sum += step_similarity(a, b, embedder)?;
    }
    Ok(sum / query.len() as f64)
}

/// Best contiguous window of `memory` aligned with `query`: `(score, start)`,
/// earliest start on ties. `None` when the query is empty or longer than
/// the memory sequence.
pub fn best_window(
    query: &[&Step],
    memory: &[&Step],
    embedder: &dyn EmbeddingProvider,
) -> Result<Option<(f64, usize)>, RetrievalError> {
    let mut scorer = Scorer::new(embedder);
    Ok(best_window_with(&mut scorer, query, memory)?)
}

fn best_window_with(
    scorer: &mut Scorer<'_>,
    query: &[&Step],
    memory: &[&Step],
) -> Result<Option<(f64, usize)>, EmbeddingError> {
    let n = query.len();
    if n == 0 || memory.len() < n {
        return Ok(None);
    }
    let len = n as f64;
    let mut best: Option<(f64, usize, f64)> = None; // (mean, start, sum)
    for start in 0..=memory.len() - n {
        let mut sum = 0.0;
        let mut pruned = false;
        for i in 0..n {
            sum += scorer.similarity(query[i], memory[start + i])?;
            if let Some((_, _, best_sum)) = best {
                // every remaining pair contributes at most 1
                let bound = sum + (n - i - 1) as f64;
                if bound < best_sum - 1e-9 {
                    pruned = true;
                    break;
                }
            }
        }
        if pruned {
            continue;
        }
        let mean = sum / len;
        if best.is_none_or(|(m, _, _)| mean > m) {
            best = Some((mean, start, sum));
            if mean >= 1.0 {
                break;
            }
        }
    }
    Ok(best.map(|(m, s, _)| (m, s)))
}

/// Memory leaves from `from` onwards, consecutive siblings regrouped under a
/// copy of their parent instruction.
pub(crate) fn continuation_after(leaves: &LeafSequence<'_>, from: usize) -> Vec<Step> {
    let mut out: Vec<Step> = Vec::new();
    let mut open_parent: Option<&str> = None;
    for i in from..leaves.len() {
        let leaf = leaves.leaves[i];
        match leaves.parent(i) {
            Some(p) if open_parent == Some(p.step_id.as_str()) => {
                out.last_mut()
                    .expect("open parent implies a pushed step")
                    .sub_steps
                    .push(leaf.clone());
            }
            Some(p) => {
                let mut group = p.clone();
                group.sub_steps = vec![leaf.clone()];
                out.push(group);
                open_parent = Some(p.step_id.as_str());
            }
            None => {
                out.push(leaf.clone());
                open_parent = None;
            }
        }
    }
    out
}

/// Ranking: score descending, then more recent `saved_at`, then record id.
pub(crate) fn rank_order(a: (f64, DateTime<Utc>, &str), b: (f64, DateTime<Utc>, &str)) -> Ordering {
    b.0.total_cmp(&a.0)
        .then_with(|| b.1.cmp(&a.1))
        .then_with(|| a.2.cmp(b.2))
}

pub fn retrieve(
    current: &Workflow,
    store: &dyn MemoryStore,
    cfg: &RetrievalConfig,
    embedder: &dyn EmbeddingProvider,
) -> Result<Vec<RetrievalMatch>, RetrievalError> {
    if leaf_sequence(current).is_empty() {
        return Ok(Vec::new());
    }
    let records = store.scan()?;
    retrieve_from_records(current, &records, cfg, embedder)
}

/// [`retrieve`] over an already loaded snapshot of records.
pub fn retrieve_from_records(
    current: &Workflow,
    records: &[MemoryRecord],
    cfg: &RetrievalConfig,
    embedder: &dyn EmbeddingProvider,
) -> Result<Vec<RetrievalMatch>, RetrievalError> {
    cfg.validate()?;
    let query = leaf_sequence(current);
    if query.is_empty() {
        return Ok(Vec::new());
    }
    let mut scorer = Scorer::new(embedder);

    struct Hit<'r> {
        score: f64,
        start: usize,
        record: &'r MemoryRecord,
    }
    let mut hits: Vec<Hit<'_>> = Vec::new();
    for record in records {
        if workflows_equal(&record.workflow, current) {
            continue;
        }
        let leaves = leaf_sequence(&record.workflow);
        if let Some((score, start)) =
            best_window_with(&mut scorer, query.as_slice(), leaves.as_slice())?
        {
            if score > cfg.threshold {
                hits.push(Hit {
                    score,
                    start,
                    record,
                });
            }
        }
    }
    hits.sort_by(|a, b| {
        rank_order(
            (a.score, a.record.saved_at, &a.record.record_id),
            (b.score, b.record.saved_at, &b.record.record_id),
        )
    });
    hits.truncate(cfg.max_results);

    let n = query.len();
    Ok(hits
        .into_iter()
        .map(|h| {
            let leaves = leaf_sequence(&h.record.workflow);
            RetrievalMatch {
                record_id: h.record.record_id.clone(),
                score: h.score,
                window_start: h.start,
                window_end: h.start + n,
                continuation: continuation_after(&leaves, h.start + n),
            }
        })
        .collect())
}
