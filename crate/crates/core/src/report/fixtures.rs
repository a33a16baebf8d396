//! Transcribed result tables.
//!
//! A fixture directory holds:
//!
//! * `<task>__<criterion>.csv` with columns `model,epochs,acc,watt_sum,eff,anomaly`
//!   (`model` is `Arch-<size>`; a bare `Arch` is a published aggregate and is
//!   read as size 1). `eff` may be blank, in which case `acc / watt_sum` is used.
//! * optional `overtraining.csv` with columns
//!   `task,model,train_short,test_short,train_long,test_long,printed_a,printed_b,printed_verdict`.
//! * optional `printed_means.csv`, `printed_overall.csv`, `printed_ratios.csv`
//!   holding the published aggregates for comparison.
//! * optional `tables.txt` listing table files one per line. Tables are read
//!   in that order, which fixes first-seen order of tasks and architectures;
//!   without it tables are read in file-name order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Deserialize;
use thiserror::Error;

use super::{EfficiencyReport, OvertrainingRow, ReportRun};
use crate::metrics::{overtraining_analysis, AccuracyPair, MetricsError, OvertrainingRule};

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}:{line}: {message}")]
    Row {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Deserialize)]
struct FixtureRow {
    model: String,
    epochs: usize,
    acc: Option<f64>,
    watt_sum: Option<f64>,
    eff: Option<f64>,
    anomaly: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct OvertrainingInput {
    pub task: String,
    pub model: String,
    pub train_short: f64,
    pub test_short: f64,
    pub train_long: f64,
    pub test_long: f64,
    pub printed_a: Option<f64>,
    pub printed_b: Option<f64>,
    pub printed_verdict: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PrintedMean {
    pub task: String,
    pub criterion: String,
    pub architecture: String,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PrintedOverall {
    pub task: String,
    pub architecture: String,
    pub overall: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PrintedRatio {
    pub subject: String,
    pub numerator: String,
    pub denominator: String,
    pub ratio: f64,
}

#[derive(Debug, Clone, Default)]
pub struct FixtureSet {
    pub runs: Vec<ReportRun>,
    pub overtraining: Vec<OvertrainingInput>,
    pub printed_means: Vec<PrintedMean>,
    pub printed_overall: Vec<PrintedOverall>,
    pub printed_ratios: Vec<PrintedRatio>,
    /// Every file read, in read order.
    pub files: Vec<PathBuf>,
}

/// Splits `LeNet-3` into `("LeNet", 3)`; a bare name is size 1.
pub fn parse_model(model: &str) -> Result<(String, u32), String> {
    match model.rsplit_once('-') {
        Some((arch, size)) if !arch.is_empty() => match size.parse::<u32>() {
            Ok(s) if s >= 1 => Ok((arch.to_string(), s)),
            _ => Err(format!("bad size suffix in model `{model}`")),
        },
        _ if !model.is_empty() && !model.contains('-') => Ok((model.to_string(), 1)),
        _ => Err(format!("bad model name `{model}`")),
    }
}

fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<(u64, T)>, FixtureError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|source| FixtureError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
    let headers = reader
        .headers()
        .map_err(|source| FixtureError::Csv {
            path: path.to_path_buf(),
            source,
        })?
        .clone();
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|source| FixtureError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row = record
            .deserialize(Some(&headers))
            .map_err(|e| FixtureError::Row {
                path: path.to_path_buf(),
                line,
                message: e.to_string(),
            })?;
        out.push((line, row));
    }
    Ok(out)
}

fn table_runs(path: &Path, task: &str, criterion: &str) -> Result<Vec<ReportRun>, FixtureError> {
    let stem = path
        .file_stem()
        .unwrap_or_default()
        .to_string_lossy()
        .into_owned();
    let mut runs = Vec::new();
    for (line, row) in read_rows::<FixtureRow>(path)? {
        let bad = |message: String| FixtureError::Row {
            path: path.to_path_buf(),
            line,
            message,
        };
        let (architecture, size) = parse_model(&row.model).map_err(bad)?;
        let eff = match (row.eff, row.acc, row.watt_sum) {
            (Some(e), _, _) => e,
            (None, Some(a), Some(w)) if w > 0.0 => a / w,
            _ => return Err(bad("need eff, or acc and a positive watt_sum".into())),
        };
        if !(eff.is_finite() && eff >= 0.0) {
            return Err(bad(format!(
                "efficiency {eff} is not finite and non-negative"
            )));
        }
        runs.push(ReportRun {
            run_id: format!("{stem}/{}", row.model),
            task: task.to_string(),
            architecture,
            size_multiplier: size,
            criterion_label: criterion.to_string(),
            include_in_overall: true,
            epochs: row.epochs,
            acc: row.acc,
            watt_sum: row.watt_sum,
            eff,
            anomaly: row.anomaly.filter(|a| !a.is_empty()),
            curve: Vec::new(),
        });
    }
    Ok(runs)
}

/// Reads every recognised file in `dir`, in file-name order.
pub fn load_fixture_dir(dir: &Path) -> Result<FixtureSet, FixtureError> {
    let io = |source| FixtureError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io)?;
    paths.sort();
    let listing = dir.join("tables.txt");
    if listing.exists() {
        let text = fs::read_to_string(&listing).map_err(|source| FixtureError::Io {
            path: listing.clone(),
            source,
        })?;
        let listed: Vec<PathBuf> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| dir.join(l))
            .collect();
        for (i, p) in listed.iter().enumerate() {
            if !p.exists() {
                return Err(FixtureError::Row {
                    path: listing.clone(),
                    line: i as u64 + 1,
                    message: format!("listed table {} does not exist", p.display()),
                });
            }
        }
        // listed tables first, in listed order, then everything else
        paths.retain(|p| !listed.contains(p));
        paths.splice(0..0, listed);
    }

    let mut set = FixtureSet::default();
    for path in paths {
        if path.extension().and_then(|e| e.to_str()) != Some("csv") {
            continue;
        }
        let stem = path
            .file_stem()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        match stem.as_str() {
            "overtraining" => {
                set.overtraining = read_rows(&path)?.into_iter().map(|r| r.1).collect()
            }
            "printed_means" => {
                set.printed_means = read_rows(&path)?.into_iter().map(|r| r.1).collect()
            }
            "printed_overall" => {
                set.printed_overall = read_rows(&path)?.into_iter().map(|r| r.1).collect()
            }
            "printed_ratios" => {
                set.printed_ratios = read_rows(&path)?.into_iter().map(|r| r.1).collect()
            }
            _ => match stem.split_once("__") {
                Some((task, criterion)) if !task.is_empty() && !criterion.is_empty() => {
                    set.runs.extend(table_runs(&path, task, criterion)?)
                }
                _ => continue,
            },
        }
        set.files.push(path);
    }
    Ok(set)
}

impl FixtureSet {
    /// Overtraining rows for every transcribed model pair.
    pub fn overtraining_rows(
        &self,
        rule: &OvertrainingRule,
    ) -> Result<Vec<OvertrainingRow>, FixtureError> {
        self.overtraining
            .iter()
            .map(|o| {
                let (arch, size) = parse_model(&o.model).map_err(|message| FixtureError::Row {
                    path: PathBuf::from("overtraining.csv"),
                    line: 0,
                    message,
                })?;
                let short = AccuracyPair::new(o.train_short, o.test_short);
                let long = AccuracyPair::new(o.train_long, o.test_long);
                Ok(OvertrainingRow {
                    task: o.task.clone(),
                    short,
                    long,
                    verdict: overtraining_analysis(&arch, size, short, long, rule)?,
                    run_ids: vec![format!("overtraining/{}/{}", o.task, o.model)],
                })
            })
            .collect()
    }

    pub fn report(&self, rule: &OvertrainingRule) -> Result<EfficiencyReport, FixtureError> {
        let overtraining = self.overtraining_rows(rule)?;
        let mut warnings = Vec::new();
        if self.runs.is_empty() && overtraining.is_empty() {
            warnings.push("no fixture tables found".to_string());
        }
        Ok(EfficiencyReport::build(
            self.runs.clone(),
            overtraining,
            warnings,
        )?)
    }
}
