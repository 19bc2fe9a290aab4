//! Append-only JSON Lines journal that makes suites resumable.
//!
//! Each record is written with a single `write` followed by `fsync`. A torn
//! final line left by a crash is ignored on reload. `done` is the only
//! terminal status: a failed experiment is tried again on the next run.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{ExperimentResult, RunError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JournalStatus {
    Started,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalRecord {
    pub spec_hash: String,
    pub status: JournalStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<ExperimentResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    file: Mutex<File>,
    done: Mutex<HashMap<String, ExperimentResult>>,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> RunError + '_ {
    move |source| RunError::Journal { path: path.display().to_string(), source }
}

impl Journal {
    /// Open or create the journal at `path` and load its finished results.
    pub fn open(path: &Path) -> Result<Self, RunError> {
        let mut done = HashMap::new();
        if path.exists() {
            let text = std::fs::read_to_string(path).map_err(io_err(path))?;
            for (n, line) in text.lines().enumerate() {
                match serde_json::from_str::<JournalRecord>(line) {
                    Ok(JournalRecord { spec_hash, status: JournalStatus::Done, result: Some(r), .. }) => {
                        done.entry(spec_hash).or_insert(r);
                    }
                    Ok(_) => {}
                    Err(e) => log::warn!("{}:{}: skipping unreadable record ({e})", path.display(), n + 1),
                }
            }
            // Make sure the next record starts on a fresh line.
            if !text.is_empty() && !text.ends_with('\n') {
                OpenOptions::new().append(true).open(path).and_then(|mut f| f.write_all(b"\n")).map_err(io_err(path))?;
            }
        }
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io_err(path))?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
        Ok(Self { path: path.to_path_buf(), file: Mutex::new(file), done: Mutex::new(done) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn finished(&self, spec_hash: &str) -> Option<ExperimentResult> {
        self.done.lock().unwrap().get(spec_hash).cloned()
    }

    pub fn n_finished(&self) -> usize {
        self.done.lock().unwrap().len()
    }

    fn append(&self, record: &JournalRecord) -> Result<(), RunError> {
        let mut line = serde_json::to_vec(record).expect("record serializes");
        line.push(b'\n');
        let mut f = self.file.lock().unwrap();
        f.write_all(&line).and_then(|_| f.sync_data()).map_err(io_err(&self.path))
    }

    fn now() -> u64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
    }

    pub fn start(&self, spec_hash: &str) -> Result<(), RunError> {
        self.append(&JournalRecord { spec_hash: spec_hash.into(), status: JournalStatus::Started, result: None, error: None, timestamp: Self::now() })
    }

    /// Record the outcome. A second `done` for the same hash is not written.
    pub fn finish(&self, spec_hash: &str, outcome: &Result<ExperimentResult, String>) -> Result<(), RunError> {
        let record = match outcome {
            Ok(r) => {
                let mut done = self.done.lock().unwrap();
                if done.contains_key(spec_hash) {
                    return Ok(());
                }
                done.insert(spec_hash.into(), r.clone());
                JournalRecord { spec_hash: spec_hash.into(), status: JournalStatus::Done, result: Some(r.clone()), error: None, timestamp: Self::now() }
            }
            Err(e) => JournalRecord { spec_hash: spec_hash.into(), status: JournalStatus::Failed, result: None, error: Some(e.clone()), timestamp: Self::now() },
        };
        self.append(&record)
    }
}
