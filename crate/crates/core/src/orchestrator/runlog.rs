//! The append-only JSONL run ledger.

use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::TrainerSpec;
use crate::criteria::StoppingCriterion;
use crate::telemetry::{Component, TelemetrySourceConfig};
use crate::{EpochRecord, RunRecord, StopReason};

/// Bumped whenever the entry layout changes incompatibly.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Failed,
    Degraded,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Complete => "complete",
            RunStatus::Failed => "failed",
            RunStatus::Degraded => "degraded",
        }
    }
}

/// The configuration slice that produced one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSnapshot {
    pub task: String,
    /// Value passed to the trainer as `--task`.
    pub task_arg: String,
    pub trainer: TrainerSpec,
    pub size_multiplier: u32,
    pub criterion_label: String,
    pub criterion: StoppingCriterion,
    pub safety_cap: usize,
    pub include_in_overall: bool,
    pub seed: u64,
    pub telemetry: Vec<TelemetrySourceConfig>,
    /// Virtual epoch length in deterministic mode, absent for live runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub virtual_epoch_ms: Option<u64>,
}

/// Energy as recorded up to the final epoch mark.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergySummary {
    pub samples_at_stop: usize,
    pub watt_sum_at_stop: f64,
    /// Derived: each sample's watts times its source interval.
    pub joules_at_stop: f64,
}

/// Wall-clock and process details; excluded when comparing ledgers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Runtime {
    pub started_at: String,
    pub finished_at: String,
    pub wall_ms: u64,
    pub exit_code: Option<i32>,
    /// Epoch events that arrived after the stop decision.
    pub trailing_events: usize,
    pub samples_after_stop: usize,
    pub watt_sum_after_stop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLedgerEntry {
    pub schema_version: u32,
    pub run_id: String,
    pub cell_id: String,
    pub attempt: u32,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    pub cell: CellSnapshot,
    pub epochs: Vec<EpochRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<StopReason>,
    pub component_set: BTreeSet<Component>,
    pub energy: EnergySummary,
    pub runtime: Runtime,
    pub harness_version: String,
}

pub fn cell_id(task: &str, architecture: &str, criterion_label: &str, size: u32) -> String {
    format!("{task}/{architecture}/{criterion_label}/{size}")
}

pub fn run_id(cell_id: &str, attempt: u32) -> String {
    format!("{cell_id}#{attempt}")
}

impl RunLedgerEntry {
    /// The sealed run, when the stop decision was reached.
    pub fn run_record(&self) -> Option<RunRecord> {
        let stop = self.stop?;
        let record = RunRecord {
            architecture: self.cell.trainer.architecture.clone(),
            size_multiplier: self.cell.size_multiplier,
            criterion_label: self.cell.criterion_label.clone(),
            criterion: self.cell.criterion,
            task: self.cell.task.clone(),
            epochs: self.epochs.clone(),
            stop,
            component_set: self.component_set.clone(),
        };
        record.validate().ok()?;
        Some(record)
    }

    /// The entry with wall-clock metadata cleared, for determinism checks.
    pub fn without_runtime(&self) -> Self {
        Self {
            runtime: Runtime::default(),
            ..self.clone()
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("ledger entries serialise")
    }
}

#[derive(Debug, Error)]
pub enum RunLogError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: schema_version {found} is not supported (expected {SCHEMA_VERSION})")]
    SchemaMismatch {
        path: PathBuf,
        line: usize,
        found: String,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// Reads every entry; blank lines are skipped. A missing file is an empty ledger.
pub fn read_ledger(path: &Path) -> Result<Vec<RunLedgerEntry>, RunLogError> {
    let io = |source| RunLogError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io(e)),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |message: String| RunLogError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
        match value.get("schema_version") {
            Some(v) if v.as_u64() == Some(u64::from(SCHEMA_VERSION)) => {}
            other => {
                return Err(RunLogError::SchemaMismatch {
                    path: path.to_path_buf(),
                    line: i + 1,
                    found: other.map_or("missing".to_string(), |v| v.to_string()),
                })
            }
        }
        out.push(serde_json::from_value(value).map_err(|e| parse(e.to_string()))?);
    }
    Ok(out)
}

/// Appends entries, one flushed line each.
pub struct LedgerWriter {
    path: PathBuf,
    file: File,
}

impl LedgerWriter {
    pub fn open(path: &Path) -> Result<Self, RunLogError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|source| RunLogError::Io {
                path: dir.to_path_buf(),
                source,
            })?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| RunLogError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn append(&mut self, entry: &RunLedgerEntry) -> Result<(), RunLogError> {
        let mut line = entry.to_line();
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|source| RunLogError::Io {
                path: self.path.clone(),
                source,
            })
    }
}
