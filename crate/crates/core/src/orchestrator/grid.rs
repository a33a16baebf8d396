//! Runs every cell of an experiment and appends the results to the run ledger.

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use thiserror::Error;

use super::cell::{enumerate_cells, run_cell, BuiltinLaunch, CellContext};
use super::config::ExperimentConfig;
use super::runlog::{read_ledger, LedgerWriter, RunLedgerEntry, RunLogError, RunStatus};

pub const LEDGER_FILE: &str = "ledger.jsonl";
pub const LOGS_DIR: &str = "logs";

#[derive(Debug, Error)]
pub enum GridError {
    #[error(transparent)]
    RunLog(#[from] RunLogError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(
        "{0} already holds runs; pass --resume to continue it or choose another output directory"
    )]
    LedgerExists(PathBuf),
}

#[derive(Debug, Clone)]
pub struct GridOptions {
    /// Skip cells that already have a complete entry.
    pub resume: bool,
    pub builtin: BuiltinLaunch,
    pub idle_timeout: Option<Duration>,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            resume: false,
            builtin: BuiltinLaunch::InProcess,
            idle_timeout: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub ledger_path: PathBuf,
    /// Entries written by this invocation, in cell order.
    pub new_entries: Vec<RunLedgerEntry>,
    /// Cells skipped because a complete entry already existed.
    pub skipped: usize,
}

impl GridOutcome {
    pub fn all_complete(&self) -> bool {
        self.new_entries
            .iter()
            .all(|e| e.status == RunStatus::Complete)
    }
}

/// Progress callback: the finished entry, how many cells are done, how many to run.
pub type Progress<'a> = &'a (dyn Fn(&RunLedgerEntry, usize, usize) + Sync);

/// Runs the grid into `config.output_dir`. External trainers start in `base_dir`.
pub fn run_grid(
    config: &ExperimentConfig,
    base_dir: &Path,
    options: &GridOptions,
    progress: Progress<'_>,
) -> Result<GridOutcome, GridError> {
    let out = &config.output_dir;
    let logs = out.join(LOGS_DIR);
    std::fs::create_dir_all(&logs).map_err(|source| GridError::Io {
        path: logs.clone(),
        source,
    })?;
    let ledger_path = out.join(LEDGER_FILE);
    let existing = read_ledger(&ledger_path)?;
    if !existing.is_empty() && !options.resume {
        return Err(GridError::LedgerExists(ledger_path));
    }

    let mut attempts: BTreeMap<&str, u32> = BTreeMap::new();
    let mut done: BTreeMap<&str, bool> = BTreeMap::new();
    for e in &existing {
        let n = attempts.entry(e.cell_id.as_str()).or_default();
        *n = (*n).max(e.attempt);
        *done.entry(e.cell_id.as_str()).or_default() |= e.status == RunStatus::Complete;
    }

    let mut todo = Vec::new();
    let mut skipped = 0;
    for cell in enumerate_cells(config) {
        let id = cell.id(config);
        if done.get(id.as_str()).copied().unwrap_or(false) {
            skipped += 1;
        } else {
            let attempt = attempts.get(id.as_str()).copied().unwrap_or(0) + 1;
            todo.push((cell, attempt));
        }
    }

    let ctx = CellContext {
        config,
        base_dir,
        builtin: &options.builtin,
        logs_dir: Some(&logs),
        idle_timeout: options.idle_timeout,
    };
    let writer = Mutex::new(LedgerWriter::open(&ledger_path)?);
    let results: Mutex<Vec<Option<RunLedgerEntry>>> = Mutex::new(vec![None; todo.len()]);
    let next = AtomicUsize::new(0);
    let finished = AtomicUsize::new(0);
    let first_error: Mutex<Option<RunLogError>> = Mutex::new(None);
    let workers = config
        .supervision
        .parallel_cells
        .clamp(1, todo.len().max(1));

    let work = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some((cell, attempt)) = todo.get(i) else {
            return;
        };
        if first_error.lock().unwrap().is_some() {
            return;
        }
        let entry = run_cell(&ctx, cell, *attempt);
        if let Err(e) = writer.lock().unwrap().append(&entry) {
            first_error.lock().unwrap().get_or_insert(e);
            return;
        }
        let n = finished.fetch_add(1, Ordering::SeqCst) + 1;
        progress(&entry, n, todo.len());
        results.lock().unwrap()[i] = Some(entry);
    };
    if workers == 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(work);
            }
        });
    }

    if let Some(e) = first_error.into_inner().unwrap() {
        return Err(e.into());
    }
    Ok(GridOutcome {
        ledger_path,
        new_entries: results
            .into_inner()
            .unwrap()
            .into_iter()
            .flatten()
            .collect(),
        skipped,
    })
}
