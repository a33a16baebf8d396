//! Report assembly and serialisation.
//!
//! An [`EfficiencyReport`] is built from per-run final efficiencies, whether
//! those come from a run ledger or from transcribed result tables
//! ([`fixtures`]), and written out as a CSV bundle by [`bundle`].

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::metrics::{
    efficiency_overall, efficiency_per_size, efficiency_ratios, AccuracyPair, ArchTaskEfficiency,
    MetricsError, RatioTable, RunEfficiency,
};
use crate::OvertrainingVerdict;

pub mod bundle;
pub mod fixtures;

pub use bundle::{write_bundle, BundleError, ManifestInfo, BUNDLE_FILES};
pub use fixtures::{load_fixture_dir, FixtureError, FixtureSet};

/// Three significant digits in scientific notation, e.g. `1.29e-5`.
pub fn format_sci(value: f64) -> String {
    format!("{value:.2e}")
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_full(value: f64) -> String {
    format!("{value:e}")
}

/// Ratios are printed with two decimals.
pub fn format_ratio(value: f64) -> String {
    format!("{value:.2}")
}

/// One run as seen by the report: its keys and final-epoch values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRun {
    pub run_id: String,
    pub task: String,
    pub architecture: String,
    pub size_multiplier: u32,
    pub criterion_label: String,
    pub include_in_overall: bool,
    pub epochs: usize,
    /// Final eval accuracy, when known.
    pub acc: Option<f64>,
    /// Watt-sum up to the final epoch, when known.
    pub watt_sum: Option<f64>,
    pub eff: f64,
    pub anomaly: Option<String>,
    /// Per-epoch efficiency series `(epoch, eff)`.
    pub curve: Vec<(usize, f64)>,
}

impl ReportRun {
    pub fn model_name(&self) -> String {
        format!("{}-{}", self.architecture, self.size_multiplier)
    }

    fn efficiency(&self) -> RunEfficiency {
        RunEfficiency {
            architecture: self.architecture.clone(),
            size_multiplier: self.size_multiplier,
            criterion_label: self.criterion_label.clone(),
            task: self.task.clone(),
            value: self.eff,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvertrainingRow {
    pub task: String,
    pub short: AccuracyPair,
    pub long: AccuracyPair,
    pub verdict: OvertrainingVerdict,
    /// Runs the two horizons came from.
    pub run_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerSizeRow {
    pub task: String,
    pub architecture: String,
    pub criterion_label: String,
    pub sizes: Vec<u32>,
    pub value: f64,
    pub run_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallRow {
    pub task: String,
    pub architecture: String,
    pub criteria: Vec<String>,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub runs: Vec<ReportRun>,
    pub per_size: Vec<PerSizeRow>,
    pub overall: Vec<OverallRow>,
    pub ratios: RatioTable,
    pub overtraining: Vec<OvertrainingRow>,
    pub warnings: Vec<String>,
}

fn first_seen<T: PartialEq + Clone>(items: impl Iterator<Item = T>) -> Vec<T> {
    let mut out = Vec::new();
    for item in items {
        if !out.contains(&item) {
            out.push(item);
        }
    }
    out
}

impl EfficiencyReport {
    /// Groups runs by (task, architecture, criterion), averages over sizes,
    /// then over criteria, then forms ratios. Groups are kept in first-seen
    /// order so output follows input order.
    pub fn build(
        runs: Vec<ReportRun>,
        overtraining: Vec<OvertrainingRow>,
        mut warnings: Vec<String>,
    ) -> Result<Self, MetricsError> {
        let groups = first_seen(runs.iter().map(|r| {
            (
                r.task.clone(),
                r.architecture.clone(),
                r.criterion_label.clone(),
            )
        }));
        let all_sizes: BTreeSet<u32> = runs.iter().map(|r| r.size_multiplier).collect();

        let mut per_size = Vec::new();
        for (task, arch, crit) in &groups {
            let members: Vec<&ReportRun> = runs
                .iter()
                .filter(|r| {
                    &r.task == task && &r.architecture == arch && &r.criterion_label == crit
                })
                .collect();
            let effs: Vec<RunEfficiency> = members.iter().map(|r| r.efficiency()).collect();
            let value = efficiency_per_size(&effs)?.value;
            let mut sizes: Vec<u32> = members.iter().map(|r| r.size_multiplier).collect();
            sizes.sort_unstable();
            if sizes.iter().copied().collect::<BTreeSet<_>>() != all_sizes {
                warnings.push(format!(
                    "{task}/{arch}/{crit}: sizes {sizes:?} do not cover all sizes {:?}",
                    all_sizes.iter().collect::<Vec<_>>()
                ));
            }
            per_size.push(PerSizeRow {
                task: task.clone(),
                architecture: arch.clone(),
                criterion_label: crit.clone(),
                sizes,
                value,
                run_ids: members.iter().map(|r| r.run_id.clone()).collect(),
            });
        }

        let in_overall = |row: &PerSizeRow| {
            runs.iter()
                .filter(|r| row.run_ids.contains(&r.run_id))
                .all(|r| r.include_in_overall)
        };
        let pairs = first_seen(groups.iter().map(|(t, a, _)| (t.clone(), a.clone())));
        let all_criteria: BTreeSet<&str> = per_size
            .iter()
            .filter(|r| in_overall(r))
            .map(|r| r.criterion_label.as_str())
            .collect();
        let mut overall = Vec::new();
        for (task, arch) in &pairs {
            let chosen: Vec<&PerSizeRow> = per_size
                .iter()
                .filter(|r| &r.task == task && &r.architecture == arch && in_overall(r))
                .collect();
            if chosen.is_empty() {
                continue;
            }
            let map = chosen
                .iter()
                .map(|r| {
                    (
                        r.criterion_label.clone(),
                        crate::metrics::EfficiencyValue::new(
                            r.value,
                            crate::metrics::EfficiencyLevel::PerSizeMean,
                        ),
                    )
                })
                .collect();
            let criteria: Vec<String> = chosen.iter().map(|r| r.criterion_label.clone()).collect();
            if criteria.iter().map(String::as_str).collect::<BTreeSet<_>>() != all_criteria {
                warnings.push(format!(
                    "{task}/{arch}: overall covers criteria {criteria:?} only"
                ));
            }
            overall.push(OverallRow {
                task: task.clone(),
                architecture: arch.clone(),
                criteria,
                value: efficiency_overall(&map)?.value,
            });
        }

        let summary: Vec<ArchTaskEfficiency> = overall
            .iter()
            .map(|o| ArchTaskEfficiency::new(&o.architecture, &o.task, o.value))
            .collect();
        let ratios = match efficiency_ratios(&summary) {
            Ok(t) => t,
            Err(MetricsError::NotEnoughForRatios) => RatioTable::default(),
            Err(MetricsError::ZeroDenominator(what)) => {
                warnings.push(format!("ratio skipped, zero efficiency for {what}"));
                RatioTable::default()
            }
            Err(e) => return Err(e),
        };

        Ok(Self {
            runs,
            per_size,
            overall,
            ratios,
            overtraining,
            warnings,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty() && self.overtraining.is_empty()
    }

    pub fn overall_for(&self, task: &str, architecture: &str) -> Option<f64> {
        self.overall
            .iter()
            .find(|o| o.task == task && o.architecture == architecture)
            .map(|o| o.value)
    }

    pub fn per_size_for(&self, task: &str, architecture: &str, criterion: &str) -> Option<f64> {
        self.per_size
            .iter()
            .find(|r| {
                r.task == task && r.architecture == architecture && r.criterion_label == criterion
            })
            .map(|r| r.value)
    }

    /// `(run_id, note)` for every annotated run.
    pub fn anomalies(&self) -> Vec<(String, String)> {
        self.runs
            .iter()
            .filter_map(|r| Some((r.run_id.clone(), r.anomaly.clone()?)))
            .collect()
    }

    pub fn tasks(&self) -> Vec<String> {
        first_seen(self.overall.iter().map(|o| o.task.clone()))
    }

    pub fn architectures(&self) -> Vec<String> {
        first_seen(self.overall.iter().map(|o| o.architecture.clone()))
    }
}
