//! Writes an [`EfficiencyReport`] as a directory of CSV files plus a manifest.
//!
//! Efficiencies in human-facing tables use three significant digits with a
//! `_full` column carrying the unrounded value; curve and distribution series
//! are written at full precision. Output is a pure function of the report.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use super::{format_full, format_ratio, format_sci, EfficiencyReport};
use crate::HARNESS_VERSION;

pub const BUNDLE_FILES: [&str; 9] = [
    "per_run.csv",
    "per_size.csv",
    "overall.csv",
    "per_architecture.csv",
    "ratios.csv",
    "efficiency_curves.csv",
    "distributions.csv",
    "overtraining.csv",
    "manifest.json",
];

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

/// Provenance recorded in `manifest.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ManifestInfo {
    /// `ledger` or `fixtures`.
    pub source: String,
    pub input_sha256: Option<String>,
    pub config_sha256: Option<String>,
}

#[derive(Serialize)]
struct Anomaly<'a> {
    run_id: &'a str,
    note: &'a str,
}

#[derive(Serialize)]
struct Manifest<'a> {
    harness_version: &'a str,
    #[serde(flatten)]
    info: &'a ManifestInfo,
    files: &'a [&'a str],
    run_ids: Vec<&'a str>,
    anomalies: Vec<Anomaly<'a>>,
    warnings: &'a [String],
}

fn opt(v: Option<f64>, f: fn(f64) -> String) -> String {
    v.map(f).unwrap_or_default()
}

fn plain(v: f64) -> String {
    v.to_string()
}

fn write_csv(
    dir: &Path,
    name: &str,
    header: &[&str],
    rows: Vec<Vec<String>>,
) -> Result<(), BundleError> {
    let path = dir.join(name);
    let err = |source| BundleError::Csv {
        path: path.clone(),
        source,
    };
    let mut w = csv::Writer::from_path(&path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|source| BundleError::Io {
        path: path.clone(),
        source,
    })
}

/// Summary layout: one row per architecture with a column per task and a
/// column per cross-task ratio, followed by one row per architecture pair.
fn per_architecture(report: &EfficiencyReport) -> (Vec<String>, Vec<Vec<String>>) {
    let tasks = report.tasks();
    let archs = report.architectures();
    let mut task_pairs: Vec<(String, String)> = Vec::new();
    for r in &report.ratios.cross_task {
        let key = (r.numerator.clone(), r.denominator.clone());
        if !task_pairs.contains(&key) {
            task_pairs.push(key);
        }
    }
    let mut header = vec!["architecture".to_string()];
    header.extend(tasks.iter().cloned());
    header.extend(task_pairs.iter().map(|(n, d)| format!("{n}/{d}")));

    let mut rows = Vec::new();
    for arch in &archs {
        let mut row = vec![arch.clone()];
        row.extend(
            tasks
                .iter()
                .map(|t| opt(report.overall_for(t, arch), format_sci)),
        );
        row.extend(task_pairs.iter().map(|(n, d)| {
            report
                .ratios
                .cross_task
                .iter()
                .find(|r| &r.subject == arch && &r.numerator == n && &r.denominator == d)
                .map(|r| format_ratio(r.value))
                .unwrap_or_default()
        }));
        rows.push(row);
    }
    let mut arch_pairs: Vec<(String, String)> = Vec::new();
    for r in &report.ratios.cross_architecture {
        let key = (r.numerator.clone(), r.denominator.clone());
        if !arch_pairs.contains(&key) {
            arch_pairs.push(key);
        }
    }
    for (n, d) in arch_pairs {
        let mut row = vec![format!("{n}/{d}")];
        row.extend(tasks.iter().map(|t| {
            report
                .ratios
                .cross_architecture
                .iter()
                .find(|r| &r.subject == t && r.numerator == n && r.denominator == d)
                .map(|r| format_ratio(r.value))
                .unwrap_or_default()
        }));
        row.extend(task_pairs.iter().map(|_| String::new()));
        rows.push(row);
    }
    (header, rows)
}

pub fn write_bundle(
    report: &EfficiencyReport,
    dir: &Path,
    info: &ManifestInfo,
) -> Result<(), BundleError> {
    fs::create_dir_all(dir).map_err(|source| BundleError::Io {
        path: dir.to_path_buf(),
        source,
    })?;

    write_csv(
        dir,
        "per_run.csv",
        &[
            "run_id",
            "task",
            "criterion",
            "model",
            "epochs",
            "acc",
            "watt_sum",
            "eff",
            "eff_full",
            "anomaly",
        ],
        report
            .runs
            .iter()
            .map(|r| {
                vec![
                    r.run_id.clone(),
                    r.task.clone(),
                    r.criterion_label.clone(),
                    r.model_name(),
                    r.epochs.to_string(),
                    opt(r.acc, plain),
                    opt(r.watt_sum, format_sci),
                    format_sci(r.eff),
                    format_full(r.eff),
                    r.anomaly.clone().unwrap_or_default(),
                ]
            })
            .collect(),
    )?;

    write_csv(
        dir,
        "per_size.csv",
        &[
            "task",
            "architecture",
            "criterion",
            "sizes",
            "eff",
            "eff_full",
            "run_ids",
        ],
        report
            .per_size
            .iter()
            .map(|r| {
                vec![
                    r.task.clone(),
                    r.architecture.clone(),
                    r.criterion_label.clone(),
                    r.sizes
                        .iter()
                        .map(u32::to_string)
                        .collect::<Vec<_>>()
                        .join(";"),
                    format_sci(r.value),
                    format_full(r.value),
                    r.run_ids.join(";"),
                ]
            })
            .collect(),
    )?;

    write_csv(
        dir,
        "overall.csv",
        &["task", "architecture", "criteria", "eff", "eff_full"],
        report
            .overall
            .iter()
            .map(|o| {
                vec![
                    o.task.clone(),
                    o.architecture.clone(),
                    o.criteria.join(";"),
                    format_sci(o.value),
                    format_full(o.value),
                ]
            })
            .collect(),
    )?;

    let (header, rows) = per_architecture(report);
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(dir, "per_architecture.csv", &header, rows)?;

    let ratio_rows = report
        .ratios
        .cross_task
        .iter()
        .map(|r| ("cross_task", r))
        .chain(
            report
                .ratios
                .cross_architecture
                .iter()
                .map(|r| ("cross_architecture", r)),
        )
        .map(|(kind, r)| {
            vec![
                kind.to_string(),
                r.subject.clone(),
                r.numerator.clone(),
                r.denominator.clone(),
                format_ratio(r.value),
                format_full(r.value),
            ]
        })
        .collect();
    write_csv(
        dir,
        "ratios.csv",
        &[
            "kind",
            "subject",
            "numerator",
            "denominator",
            "ratio",
            "ratio_full",
        ],
        ratio_rows,
    )?;

    write_csv(
        dir,
        "efficiency_curves.csv",
        &[
            "run_id",
            "task",
            "criterion",
            "model",
            "epoch",
            "efficiency",
        ],
        report
            .runs
            .iter()
            .flat_map(|r| {
                r.curve.iter().map(move |(epoch, eff)| {
                    vec![
                        r.run_id.clone(),
                        r.task.clone(),
                        r.criterion_label.clone(),
                        r.model_name(),
                        epoch.to_string(),
                        format_full(*eff),
                    ]
                })
            })
            .collect(),
    )?;

    write_csv(
        dir,
        "distributions.csv",
        &[
            "task",
            "criterion",
            "architecture",
            "size",
            "efficiency",
            "run_id",
        ],
        report
            .runs
            .iter()
            .map(|r| {
                vec![
                    r.task.clone(),
                    r.criterion_label.clone(),
                    r.architecture.clone(),
                    r.size_multiplier.to_string(),
                    format_full(r.eff),
                    r.run_id.clone(),
                ]
            })
            .collect(),
    )?;

    write_csv(
        dir,
        "overtraining.csv",
        &[
            "task",
            "model",
            "train_short",
            "test_short",
            "train_long",
            "test_long",
            "A",
            "B",
            "verdict",
            "run_ids",
        ],
        report
            .overtraining
            .iter()
            .map(|o| {
                let v = &o.verdict;
                vec![
                    o.task.clone(),
                    format!("{}-{}", v.architecture, v.size_multiplier),
                    plain(o.short.train),
                    plain(o.short.test),
                    plain(o.long.train),
                    plain(o.long.test),
                    format!("{:.2}", v.gain_a),
                    format!("{:.2}", v.divergence_b),
                    v.verdict.as_str().to_string(),
                    o.run_ids.join(";"),
                ]
            })
            .collect(),
    )?;

    let mut run_ids: Vec<&str> = report.runs.iter().map(|r| r.run_id.as_str()).collect();
    run_ids.extend(
        report
            .overtraining
            .iter()
            .flat_map(|o| o.run_ids.iter().map(String::as_str)),
    );
    let mut seen = std::collections::BTreeSet::new();
    run_ids.retain(|id| seen.insert(*id));
    let manifest = Manifest {
        harness_version: HARNESS_VERSION,
        info,
        files: &BUNDLE_FILES,
        run_ids,
        anomalies: report
            .runs
            .iter()
            .filter_map(|r| {
                Some(Anomaly {
                    run_id: &r.run_id,
                    note: r.anomaly.as_deref()?,
                })
            })
            .collect(),
        warnings: &report.warnings,
    };
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    text.push('\n');
    fs::write(&path, text).map_err(|source| BundleError::Io { path, source })
}
