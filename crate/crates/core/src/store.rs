//! Episodic memory store.
//!
//! Records hold the workflow together with its PROV document. The on-disk
//! layout is one JSON file per record under `records/` plus an append-only
//! `index.jsonl` that fixes the save order.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prov::{from_prov, to_prov, ProvDocument};
use crate::timefmt;
use crate::workflow::{workflows_equal, Workflow};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub record_id: String,
    #[serde(with = "timefmt")]
    pub saved_at: DateTime<Utc>,
    pub workflow: Workflow,
    pub prov: ProvDocument,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaveReceipt {
    pub record_id: String,
    pub duplicate: bool,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("record `{0}` not found")]
    NotFound(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt store entry {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("refusing to store invalid workflow: {0}")]
    InvalidWorkflow(#[from] crate::workflow::WorkflowError),
}

/// Durable workflow memory. Implementations serialize writes internally and
/// allow concurrent readers.
pub trait MemoryStore: Send + Sync {
    /// Persists `w`. With `dedupe`, a structurally equal record already in
    /// the store is returned instead, flagged as a duplicate.
    fn save(&self, w: &Workflow, dedupe: bool) -> Result<SaveReceipt, StoreError>;

    /// All records in save order.
    fn scan(&self) -> Result<Vec<MemoryRecord>, StoreError>;

    fn load(&self, record_id: &str) -> Result<MemoryRecord, StoreError>;

    fn len(&self) -> Result<usize, StoreError> {
        Ok(self.scan()?.len())
    }

    fn is_empty(&self) -> Result<bool, StoreError> {
        Ok(self.len()? == 0)
    }
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    record_id: String,
    #[serde(with = "timefmt")]
    saved_at: DateTime<Utc>,
    workflow_id: String,
}

fn record_id_for(seq: usize) -> String {
    format!("rec-{seq:06}")
}

fn find_duplicate<'a>(records: &'a [MemoryRecord], w: &Workflow) -> Option<&'a MemoryRecord> {
    records.iter().find(|r| workflows_equal(&r.workflow, w))
}

fn next_record(records: &[MemoryRecord], w: &Workflow) -> MemoryRecord {
    let now = timefmt::now_millis();
    // strictly increasing, so "newest first" never depends on clock resolution
    let saved_at = records.last().map_or(now, |r| {
        (r.saved_at + chrono::Duration::milliseconds(1)).max(now)
    });
    MemoryRecord {
        record_id: record_id_for(records.len() + 1),
        saved_at,
        workflow: w.clone(),
        prov: to_prov(w),
    }
}

/// Volatile store for tests and one-shot tools.
#[derive(Default)]
pub struct InMemoryStore {
    records: RwLock<Vec<MemoryRecord>>,
}

impl InMemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl MemoryStore for InMemoryStore {
    fn save(&self, w: &Workflow, dedupe: bool) -> Result<SaveReceipt, StoreError> {
        w.validate()?;
        let mut records = self.records.write().expect("store lock poisoned");
        if dedupe {
            if let Some(existing) = find_duplicate(&records, w) {
                return Ok(SaveReceipt {
                    record_id: existing.record_id.clone(),
                    duplicate: true,
                });
            }
        }
        let record = next_record(&records, w);
        let receipt = SaveReceipt {
            record_id: record.record_id.clone(),
            duplicate: false,
        };
        records.push(record);
        Ok(receipt)
    }

    fn scan(&self) -> Result<Vec<MemoryRecord>, StoreError> {
        Ok(self.records.read().expect("store lock poisoned").clone())
    }

    fn load(&self, record_id: &str) -> Result<MemoryRecord, StoreError> {
        self.records
            .read()
            .expect("store lock poisoned")
            .iter()
            .find(|r| r.record_id == record_id)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(record_id.to_string()))
    }
}

/// Directory-backed store: `records/<record_id>.json` and `index.jsonl`.
///
/// Records are cached in memory after [`FsStore::open`]; the directory is
/// assumed to have a single writer process.
pub struct FsStore {
    root: PathBuf,
    records: RwLock<Vec<MemoryRecord>>,
}

impl FsStore {
    pub const INDEX_FILE: &'static str = "index.jsonl";
    pub const RECORDS_DIR: &'static str = "records";

    /// Opens (creating if needed) the store rooted at `root` and loads every
    /// indexed record, verifying its PROV document against its workflow.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        let records_dir = root.join(Self::RECORDS_DIR);
        fs::create_dir_all(&records_dir).map_err(|source| StoreError::Io {
            path: records_dir.clone(),
            source,
        })?;
        let index_path = root.join(Self::INDEX_FILE);
        let mut records = Vec::new();
        if index_path.exists() {
            let file = File::open(&index_path).map_err(|source| StoreError::Io {
                path: index_path.clone(),
                source,
            })?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|source| StoreError::Io {
                    path: index_path.clone(),
                    source,
                })?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: IndexEntry =
                    serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
                        path: index_path.clone(),
                        reason: format!("line {}: {e}", i + 1),
                    })?;
                records.push(read_record(&records_dir, &entry.record_id)?);
            }
        }
        tracing::debug!(root = %root.display(), records = records.len(), "opened memory store");
        Ok(FsStore {
            root,
            records: RwLock::new(records),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn record_path(&self, record_id: &str) -> PathBuf {
        self.root
            .join(Self::RECORDS_DIR)
            .join(format!("{record_id}.json"))
    }

    fn persist(&self, record: &MemoryRecord) -> Result<(), StoreError> {
        let path = self.record_path(&record.record_id);
        let tmp = path.with_extension("json.tmp");
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| StoreError::Io { path, source }
        };
        let bytes = serde_json::to_vec_pretty(record).expect("record serialization is infallible");
        fs::write(&tmp, bytes).map_err(io(&tmp))?;
        fs::rename(&tmp, &path).map_err(io(&path))?;

        let index_path = self.root.join(Self::INDEX_FILE);
        let mut index = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&index_path)
            .map_err(io(&index_path))?;
        let entry = IndexEntry {
            record_id: record.record_id.clone(),
            saved_at: record.saved_at,
            workflow_id: record.workflow.workflow_id.clone(),
        };
        let mut line = serde_json::to_vec(&entry).expect("index serialization is infallible");
        line.push(b'\n');
        index.write_all(&line).map_err(io(&index_path))?;
        index.sync_all().map_err(io(&index_path))?;
        Ok(())
    }
}

fn read_record(records_dir: &Path, record_id: &str) -> Result<MemoryRecord, StoreError> {
    let path = records_dir.join(format!("{record_id}.json"));
    let bytes = fs::read(&path).map_err(|source| StoreError::Io {
        path: path.clone(),
        source,
    })?;
    let corrupt = |reason: String| StoreError::Corrupt {
        path: path.clone(),
        reason,
    };
    let record: MemoryRecord =
        serde_json::from_slice(&bytes).map_err(|e| corrupt(e.to_string()))?;
    if record.record_id != record_id {
        return Err(corrupt(format!(
            "record id {:?} does not match index",
            record.record_id
        )));
    }
    record
        .workflow
        .validate()
        .map_err(|e| corrupt(e.to_string()))?;
    let rebuilt = from_prov(&record.prov).map_err(|e| corrupt(e.to_string()))?;
    if !workflows_equal(&rebuilt, &record.workflow) {
        return Err(corrupt(
            "provenance document disagrees with workflow".into(),
        ));
    }
    Ok(record)
}

impl MemoryStore for FsStore {
    fn save(&self, w: &Workflow, dedupe: bool) -> Result<SaveReceipt, StoreError> {
        w.validate()?;
        let mut records = self.records.write().expect("store lock poisoned");
        if dedupe {
            if let Some(existing) = find_duplicate(&records, w) {
                return Ok(SaveReceipt {
                    record_id: existing.record_id.clone(),
                    duplicate: true,
                });
            }
        }
        let record = next_record(&records, w);
        self.persist(&record)?;
        let receipt = SaveReceipt {
            record_id: record.record_id.clone(),
            duplicate: false,
        };
        records.push(record);
        Ok(receipt)
    }

    fn scan(&self) -> Result<Vec<MemoryRecord>, StoreError> {
        Ok(self.records.read().expect("store lock poisoned").clone())
    }

    fn load(&self, record_id: &str) -> Result<MemoryRecord, StoreError> {
        self.records
            .read()
            .expect("store lock poisoned")
            .iter()
            .find(|r| r.record_id == record_id)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(record_id.to_string()))
    }
}
