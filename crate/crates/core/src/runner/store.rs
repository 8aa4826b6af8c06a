use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{RunKey, RunnerError, Suite};
use crate::eval::{EvalResult, RESULTS_HEADER};

/// Provenance of a finished (or failed) run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub config_hash: String,
    pub data_hash: String,
    pub run_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub stream_lines: usize,
    pub updates: u64,
    pub final_loss: Option<f64>,
    pub manifest_verified: bool,
    pub model_reused: bool,
    pub train_seconds: f64,
    pub eval_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub key: RunKey,
    pub rows: Vec<EvalResult>,
    pub error: Option<String>,
    pub meta: RunMeta,
}

impl RunRecord {
    pub fn is_done(&self) -> bool {
        self.error.is_none()
    }
}

/// Run records keyed by `RunKey::id`, persisted as `results.json` with CSV
/// views alongside. Every write replaces the files atomically.
#[derive(Debug, Clone, Default)]
pub struct ResultStore {
    dir: Option<PathBuf>,
    records: BTreeMap<String, RunRecord>,
}

#[derive(Serialize, Deserialize)]
struct Stored {
    runs: Vec<RunRecord>,
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunnerError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| RunnerError::io(parent, e))?;
    }
    let tmp = path.with_extension(format!("{}.tmp", path.extension().and_then(|e| e.to_str()).unwrap_or("")));
    std::fs::write(&tmp, bytes).map_err(|e| RunnerError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| RunnerError::io(path, e))
}

fn key_order(a: &RunKey, b: &RunKey) -> Ordering {
    (a.suite, a.phenomenon, a.evidence, a.n, a.seed)
        .cmp(&(b.suite, b.phenomenon, b.evidence, b.n, b.seed))
        .then(a.init_std.total_cmp(&b.init_std))
        .then(a.wug_mode.cmp(&b.wug_mode))
}

impl ResultStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or starts) the store kept in `dir`.
    pub fn open(dir: &Path) -> Result<Self, RunnerError> {
        let path = dir.join("results.json");
        let mut store = ResultStore { dir: Some(dir.to_path_buf()), records: BTreeMap::new() };
        if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| RunnerError::io(&path, e))?;
            let stored: Stored = serde_json::from_str(&text)?;
            for r in stored.runs {
                store.records.insert(r.key.id(), r);
            }
        }
        Ok(store)
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn get(&self, key: &RunKey) -> Option<&RunRecord> {
        self.records.get(&key.id())
    }

    pub fn is_done(&self, key: &RunKey) -> bool {
        self.get(key).is_some_and(RunRecord::is_done)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records in canonical key order.
    pub fn records(&self) -> Vec<&RunRecord> {
        let mut v: Vec<&RunRecord> = self.records.values().collect();
        v.sort_by(|a, b| key_order(&a.key, &b.key));
        v
    }

    pub fn failures(&self) -> Vec<&RunRecord> {
        self.records().into_iter().filter(|r| !r.is_done()).collect()
    }

    /// Result rows of one suite in canonical order.
    pub fn rows(&self, suite: Suite) -> Vec<&EvalResult> {
        self.records()
            .into_iter()
            .filter(|r| r.key.suite == suite)
            .flat_map(|r| {
                let mut rows: Vec<&EvalResult> = r.rows.iter().collect();
                rows.sort_by_key(|x| x.method);
                rows
            })
            .collect()
    }

    pub fn all_rows(&self) -> Vec<&EvalResult> {
        let mut v = self.rows(Suite::Main);
        v.extend(self.rows(Suite::Interference));
        v
    }

    pub fn csv(&self, suite: Suite) -> String {
        rows_to_csv(self.rows(suite))
    }

    /// Inserts (or replaces) a record and persists the store.
    pub fn put(&mut self, record: RunRecord) -> Result<(), RunnerError> {
        self.records.insert(record.key.id(), record);
        self.persist()
    }

    pub fn persist(&self) -> Result<(), RunnerError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let stored = Stored { runs: self.records().into_iter().cloned().collect() };
        write_atomic(&dir.join("results.json"), serde_json::to_string_pretty(&stored)?.as_bytes())?;
        write_atomic(&dir.join("results.csv"), self.csv(Suite::Main).as_bytes())?;
        if self.records.values().any(|r| r.key.suite == Suite::Interference) {
            write_atomic(&dir.join("interference.csv"), self.csv(Suite::Interference).as_bytes())?;
        }
        Ok(())
    }
}

pub fn rows_to_csv<'a>(rows: impl IntoIterator<Item = &'a EvalResult>) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("rows serialize");
    }
    let body = String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8");
    format!("{RESULTS_HEADER}\n{body}")
}
