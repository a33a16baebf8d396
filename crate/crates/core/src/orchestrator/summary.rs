//! Turns run-ledger entries into an [`EfficiencyReport`].

use std::collections::BTreeMap;

use super::config::OvertrainingConfig;
use super::runlog::{RunLedgerEntry, RunStatus};
use crate::criteria::StoppingCriterion;
use crate::metrics::{
    efficiency_curve, overtraining_analysis, AccuracyPair, MetricsError, RunEfficiency,
};
use crate::report::{EfficiencyReport, OvertrainingRow, ReportRun};
use crate::RunRecord;

/// Latest attempt of every cell, in first-seen cell order.
pub fn latest_attempts(entries: &[RunLedgerEntry]) -> Vec<&RunLedgerEntry> {
    let mut order: Vec<&str> = Vec::new();
    let mut latest: BTreeMap<&str, &RunLedgerEntry> = BTreeMap::new();
    for e in entries {
        match latest.get(e.cell_id.as_str()) {
            None => {
                order.push(&e.cell_id);
                latest.insert(&e.cell_id, e);
            }
            Some(prev) if e.attempt >= prev.attempt => {
                latest.insert(&e.cell_id, e);
            }
            Some(_) => {}
        }
    }
    order.into_iter().map(|id| latest[id]).collect()
}

fn fixed_epochs(entry: &RunLedgerEntry) -> Option<usize> {
    match entry.cell.criterion {
        StoppingCriterion::FixedEpochs { max_epochs } => Some(max_epochs),
        _ => None,
    }
}

fn pair_at(entry: &RunLedgerEntry, epochs: usize) -> Option<AccuracyPair> {
    let rec = entry.epochs.get(epochs.checked_sub(1)?)?;
    Some(AccuracyPair::new(rec.train_acc, rec.eval_acc))
}

fn overtraining_rows(
    runs: &[(&RunLedgerEntry, RunRecord)],
    cfg: &OvertrainingConfig,
    warnings: &mut Vec<String>,
) -> Result<Vec<OvertrainingRow>, MetricsError> {
    let rule = cfg.rule();
    let mut rows = Vec::new();
    for (long, _) in runs
        .iter()
        .filter(|(e, _)| fixed_epochs(e) == Some(cfg.long_epochs))
    {
        let key = |e: &RunLedgerEntry| {
            (
                e.cell.task.clone(),
                e.cell.trainer.architecture.clone(),
                e.cell.size_multiplier,
            )
        };
        let Some(long_pair) = pair_at(long, cfg.long_epochs) else {
            continue;
        };
        let separate = runs
            .iter()
            .find(|(e, _)| fixed_epochs(e) == Some(cfg.short_epochs) && key(e) == key(long));
        let (short_pair, mut run_ids) = match separate {
            Some((short, _)) => match pair_at(short, cfg.short_epochs) {
                Some(p) => (p, vec![short.run_id.clone()]),
                None => continue,
            },
            None => match pair_at(long, cfg.short_epochs) {
                Some(p) => (p, Vec::new()),
                None => {
                    warnings.push(format!(
                        "{}: too short for the {}-epoch overtraining horizon",
                        long.run_id, cfg.short_epochs
                    ));
                    continue;
                }
            },
        };
        run_ids.push(long.run_id.clone());
        let verdict = overtraining_analysis(
            &long.cell.trainer.architecture,
            long.cell.size_multiplier,
            short_pair,
            long_pair,
            &rule,
        )?;
        rows.push(OvertrainingRow {
            task: long.cell.task.clone(),
            short: short_pair,
            long: long_pair,
            verdict,
            run_ids,
        });
    }
    Ok(rows)
}

/// Builds the report from the latest attempt of each cell. Only complete runs
/// enter the aggregates; every other run is reported as a warning.
pub fn summarize(
    entries: &[RunLedgerEntry],
    overtraining: &OvertrainingConfig,
) -> Result<EfficiencyReport, MetricsError> {
    let mut warnings = Vec::new();
    if entries.is_empty() {
        warnings.push("the run ledger is empty".to_string());
    }
    let mut sealed = Vec::new();
    for entry in latest_attempts(entries) {
        if entry.status != RunStatus::Complete {
            warnings.push(format!(
                "{} excluded ({}): {}",
                entry.run_id,
                entry.status.as_str(),
                entry.error.as_deref().unwrap_or("no reason recorded")
            ));
            continue;
        }
        match entry.run_record() {
            Some(record) => sealed.push((entry, record)),
            None => warnings.push(format!(
                "{} excluded: record does not validate",
                entry.run_id
            )),
        }
    }

    let mut runs = Vec::new();
    for (entry, record) in &sealed {
        let eff = match RunEfficiency::from_run(record) {
            Ok(e) => e.value,
            Err(e) => {
                warnings.push(format!("{} excluded: {e}", entry.run_id));
                continue;
            }
        };
        let last = record.epochs.last().expect("validated runs have epochs");
        runs.push(ReportRun {
            run_id: entry.run_id.clone(),
            task: record.task.clone(),
            architecture: record.architecture.clone(),
            size_multiplier: record.size_multiplier,
            criterion_label: record.criterion_label.clone(),
            include_in_overall: entry.cell.include_in_overall,
            epochs: record.epochs.len(),
            acc: Some(last.eval_acc),
            watt_sum: Some(last.energy_up_to),
            eff,
            anomaly: None,
            curve: efficiency_curve(record),
        });
    }
    let rows = overtraining_rows(&sealed, overtraining, &mut warnings)?;
    EfficiencyReport::build(runs, rows, warnings)
}
