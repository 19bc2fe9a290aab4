//! Where things live on disk.
//!
//! ```text
//! <corpus_dir>/<lang>/corpus.jsonl, stats.json
//! <task_dir>/<task>/manifest.json, {train,dev,test}/instances.jsonl
//! <out>/journal.jsonl
//! <out>/<suite>/rows.json, results.csv
//! <out>/<suite>/<model>/<task>/<run>/result.json (+ seed checkpoints)
//! <out>/shapley/<model>/<task>/{table,profile,groups}.json
//! <out>/analysis/…  <out>/report/…
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use morphoprobe_core::report::{results_csv, to_json};
use morphoprobe_core::runner::SuiteRow;
use morphoprobe_core::sampler::{read_task, TaskDataset, MANIFEST_FILE};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::{Context, Failure};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const STATS_FILE: &str = "stats.json";
pub const ROWS_FILE: &str = "rows.json";

pub fn corpus_path(ctx: &Context, lang: &str) -> PathBuf {
    ctx.corpus_dir.join(lang).join(CORPUS_FILE)
}

pub fn journal_path(ctx: &Context) -> PathBuf {
    ctx.out.join("journal.jsonl")
}

/// Keep path components free of separators.
pub fn component(s: &str) -> String {
    s.chars().map(|c| if c == '/' || c == '\\' || c == ':' { '_' } else { c }).collect()
}

pub fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Failure::Data(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), Failure> {
    write_text(path, &to_json(value))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

/// Task directories, sorted: the given ones, else those under the task
/// directory (restricted to the configured task names, if any).
pub fn task_dirs(ctx: &Context, given: &[PathBuf]) -> Result<Vec<PathBuf>, Failure> {
    if !given.is_empty() {
        for d in given {
            if !d.join(MANIFEST_FILE).exists() {
                return Err(Failure::Data(format!("{}: not a task directory (no {MANIFEST_FILE})", d.display())));
            }
        }
        return Ok(given.to_vec());
    }
    let entries = std::fs::read_dir(&ctx.task_dir).map_err(|e| Failure::Data(format!("{}: {e}", ctx.task_dir.display())))?;
    let mut dirs: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.join(MANIFEST_FILE).exists()).collect();
    let wanted = &ctx.config.suite.tasks;
    if !wanted.is_empty() {
        dirs.retain(|d| d.file_name().is_some_and(|n| wanted.iter().any(|w| w.as_str() == n)));
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Failure::Data(format!("{}: no tasks found", ctx.task_dir.display())));
    }
    Ok(dirs)
}

pub fn load_tasks(dirs: &[PathBuf]) -> Result<Vec<Arc<TaskDataset>>, Failure> {
    dirs.iter()
        .map(|d| read_task(d).map(|(t, _)| Arc::new(t)).map_err(|e| Failure::Data(format!("{}: {e}", d.display()))))
        .collect()
}

pub fn suite_dir(ctx: &Context, suite: &str) -> PathBuf {
    ctx.out.join(suite)
}

pub fn run_dir(ctx: &Context, suite: &str, model: &str, task: &str, run: &str) -> PathBuf {
    suite_dir(ctx, suite).join(component(model)).join(component(task)).join(component(run))
}

pub fn load_rows(path: &Path) -> Result<Vec<SuiteRow>, Failure> {
    if path.exists() {
        read_json(path)
    } else {
        Ok(Vec::new())
    }
}

/// Merge `rows` into the suite's row file (replacing rows of the same
/// experiment) and rewrite the per-seed CSV.
pub fn save_rows(ctx: &Context, suite: &str, rows: &[SuiteRow], run_label: impl Fn(&SuiteRow) -> String) -> Result<Vec<SuiteRow>, Failure> {
    let dir = suite_dir(ctx, suite);
    let path = dir.join(ROWS_FILE);
    let key = |r: &SuiteRow| (r.model_id.clone(), r.task.clone(), run_label(r));
    let mut all = load_rows(&path)?;
    all.retain(|old| !rows.iter().any(|new| key(new) == key(old)));
    all.extend(rows.iter().cloned());
    all.sort_by_key(|r| key(r));
    write_json(&path, &all)?;
    write_text(&dir.join("results.csv"), &results_csv(&all))?;
    Ok(all)
}
