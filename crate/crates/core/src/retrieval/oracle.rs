//! Reference implementation of retrieval for differential testing.
//!
//! Enumerates every record, every window and every aligned pair with no
//! caching, pruning or early exit, and rebuilds continuations by walking the
//! workflow tree instead of the leaf sequence.

use crate::embedding::EmbeddingProvider;
use crate::store::MemoryRecord;
use crate::workflow::{leaf_sequence, workflows_equal, Step, Workflow};

use super::{rank_order, step_similarity, RetrievalConfig, RetrievalError, RetrievalMatch};

pub fn retrieve_oracle(
    current: &Workflow,
    records: &[MemoryRecord],
    cfg: &RetrievalConfig,
    embedder: &dyn EmbeddingProvider,
) -> Result<Vec<RetrievalMatch>, RetrievalError> {
    cfg.validate()?;
    let query = leaf_sequence(current);
    let n = query.len();
    if n == 0 {
        return Ok(Vec::new());
    }

    let mut found: Vec<(RetrievalMatch, &MemoryRecord)> = Vec::new();
    for record in records {
        if workflows_equal(&record.workflow, current) {
            continue;
        }
        let memory = leaf_sequence(&record.workflow);
        let mut best: Option<(f64, usize)> = None;
        let mut start = 0;
        while start + n <= memory.len() {
            let mut sum = 0.0;
            for i in 0..n {
                sum += step_similarity(query.leaves[i], memory.leaves[start + i], embedder)?;
            }
            let mean = sum / n as f64;
            match best {
                Some((b, _)) if mean <= b => {}
                _ => best = Some((mean, start)),
            }
            start += 1;
        }
        if let Some((score, start)) = best {
            if score > cfg.threshold {
                found.push((
                    RetrievalMatch {
                        record_id: record.record_id.clone(),
                        score,
                        window_start: start,
                        window_end: start + n,
                        continuation: tree_continuation(&record.workflow, start + n),
                    },
                    record,
                ));
            }
        }
    }

    // insertion sort keeps the comparison explicit
    let mut ranked: Vec<(RetrievalMatch, &MemoryRecord)> = Vec::with_capacity(found.len());
    for item in found {
        let pos = ranked
            .iter()
            .position(|(m, r)| {
                rank_order(
                    (item.0.score, item.1.saved_at, &item.1.record_id),
                    (m.score, r.saved_at, &r.record_id),
                )
                .is_lt()
            })
            .unwrap_or(ranked.len());
        ranked.insert(pos, item);
    }
    Ok(ranked
        .into_iter()
        .take(cfg.max_results)
        .map(|(m, _)| m)
        .collect())
}

fn tree_continuation(w: &Workflow, from: usize) -> Vec<Step> {
    let mut out = Vec::new();
    let mut index = 0;
    for step in &w.steps {
        if step.sub_steps.is_empty() {
            if index >= from {
                out.push(step.clone());
            }
            index += 1;
            continue;
        }
        let mut kept = Vec::new();
        for child in &step.sub_steps {
            if index >= from {
                kept.push(child.clone());
            }
            index += 1;
        }
        if !kept.is_empty() {
            let mut group = step.clone();
            group.sub_steps = kept;
            out.push(group);
        }
    }
    out
}
