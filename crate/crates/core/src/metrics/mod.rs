//! Training-efficiency metrics.
//!
//! Three aggregation levels, all plain arithmetic on accuracy / watt-sum:
//!
//! * per epoch: `eval_acc_i / watt_sum_up_to_i`
//! * per size: unweighted mean over model sizes of each run's final-epoch value
//! * per criterion: mean of the per-size means across stopping criteria
//!
//! Values stay at full precision; rounding happens only when reports are
//! serialized.

mod overtraining;
mod ratios;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::criteria::{StopReason, StoppingCriterion};
use crate::scalar::{in_unit_interval, mean};
use crate::telemetry::Component;
use crate::Scalar;

pub use overtraining::{
    overtraining_analysis, AccuracyPair, OvertrainingRule, OvertrainingVerdict, Verdict,
};
pub use ratios::{efficiency_ratios, ArchTaskEfficiency, Ratio, RatioTable};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("efficiency undefined at epoch {epoch}: no energy recorded")]
    ZeroEnergy { epoch: usize },
    #[error("epoch {0} not present in run")]
    MissingEpoch(usize),
    #[error("invalid run record: {0}")]
    InvalidRun(String),
    #[error("no runs to aggregate")]
    Empty,
    #[error("runs mix {field}: {first:?} vs {other:?}")]
    Mixed {
        field: &'static str,
        first: String,
        other: String,
    },
    #[error("duplicate size multiplier {0}")]
    DuplicateSize(u32),
    #[error("duplicate entry for {0}")]
    DuplicateEntry(String),
    #[error("ratio needs at least two architectures or two tasks")]
    NotEnoughForRatios,
    #[error("zero efficiency in ratio denominator ({0})")]
    ZeroDenominator(String),
    #[error("accuracy {0} outside [0, 1]")]
    AccuracyOutOfRange(f64),
    #[error("criterion weights must be finite, non-negative and not all zero")]
    BadWeights,
}

/// One epoch of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord<S = f64> {
    pub epoch: usize,
    pub train_acc: S,
    pub eval_acc: S,
    /// Watt-sum of every sample recorded up to this epoch's end.
    pub energy_up_to: S,
}

/// One (architecture, size, criterion, task) training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "S: Scalar + Deserialize<'de>"))]
pub struct RunRecord<S = f64> {
    pub architecture: String,
    pub size_multiplier: u32,
    /// Label of the criterion within its experiment (usually the canonical name).
    pub criterion_label: String,
    pub criterion: StoppingCriterion<S>,
    pub task: String,
    pub epochs: Vec<EpochRecord<S>>,
    pub stop: StopReason<S>,
    pub component_set: BTreeSet<Component>,
}

impl<S: Scalar> RunRecord<S> {
    /// Checks the structural invariants: non-empty contiguous epochs from 0,
    /// accuracies in range, non-decreasing energy, final epoch = stop epoch.
    pub fn validate(&self) -> Result<(), MetricsError> {
        let invalid = |msg: String| Err(MetricsError::InvalidRun(msg));
        if self.epochs.is_empty() {
            return invalid("no epochs".into());
        }
        let mut previous = S::zero();
        for (i, rec) in self.epochs.iter().enumerate() {
            if rec.epoch != i {
                return invalid(format!("epoch index {} at position {i}", rec.epoch));
            }
            if !in_unit_interval(rec.train_acc) || !in_unit_interval(rec.eval_acc) {
                return invalid(format!("accuracy out of range at epoch {i}"));
            }
            if rec.energy_up_to.is_nan() || rec.energy_up_to < previous {
                return invalid(format!("energy decreased at epoch {i}"));
            }
            previous = rec.energy_up_to;
        }
        let last = self.epochs.len() - 1;
        if self.stop.at_epoch != last {
            return invalid(format!(
                "stop at epoch {} but final epoch is {last}",
                self.stop.at_epoch
            ));
        }
        Ok(())
    }

    pub fn final_epoch(&self) -> &EpochRecord<S> {
        self.epochs.last().expect("validated run has epochs")
    }

    /// Display model name, e.g. `LeNet-3`.
    pub fn model_name(&self) -> String {
        format!("{}-{}", self.architecture, self.size_multiplier)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EfficiencyLevel {
    PerEpoch,
    PerSizeMean,
    PerCriterionMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyValue<S = f64> {
    pub value: S,
    pub level: EfficiencyLevel,
}

impl<S: Scalar> EfficiencyValue<S> {
    pub fn new(value: S, level: EfficiencyLevel) -> Self {
        Self { value, level }
    }

    /// Scales the value by `factor` (used when expressing results in 1e-6 units).
    pub fn scaled(self, factor: S) -> S {
        self.value * factor
    }
}

/// Accuracy per watt-sum at one epoch boundary.
pub fn efficiency_from_parts<S: Scalar>(
    accuracy: S,
    watt_sum: S,
    epoch: usize,
) -> Result<EfficiencyValue<S>, MetricsError> {
    if !in_unit_interval(accuracy) {
        return Err(MetricsError::AccuracyOutOfRange(accuracy.to_f64_lossy()));
    }
    if !(watt_sum > S::zero()) || !watt_sum.is_finite() {
        return Err(MetricsError::ZeroEnergy { epoch });
    }
    Ok(EfficiencyValue::new(
        accuracy / watt_sum,
        EfficiencyLevel::PerEpoch,
    ))
}

/// Eval accuracy at `epoch` divided by the cumulative watt-sum at that epoch.
pub fn efficiency_at_epoch<S: Scalar>(
    run: &RunRecord<S>,
    epoch: usize,
) -> Result<EfficiencyValue<S>, MetricsError> {
    let rec = run
        .epochs
        .get(epoch)
        .filter(|r| r.epoch == epoch)
        .ok_or(MetricsError::MissingEpoch(epoch))?;
    efficiency_from_parts(rec.eval_acc, rec.energy_up_to, epoch)
}

/// Per-epoch efficiency series for a run; epochs with no energy are skipped.
pub fn efficiency_curve<S: Scalar>(run: &RunRecord<S>) -> Vec<(usize, S)> {
    run.epochs
        .iter()
        .filter_map(|r| {
            efficiency_from_parts(r.eval_acc, r.energy_up_to, r.epoch)
                .ok()
                .map(|v| (r.epoch, v.value))
        })
        .collect()
}

/// A run's final-epoch efficiency together with its grouping keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEfficiency<S = f64> {
    pub architecture: String,
    pub size_multiplier: u32,
    pub criterion_label: String,
    pub task: String,
    pub value: S,
}

impl<S: Scalar> RunEfficiency<S> {
    pub fn from_run(run: &RunRecord<S>) -> Result<Self, MetricsError> {
        let value = efficiency_at_epoch(run, run.stop.at_epoch)?.value;
        Ok(Self {
            architecture: run.architecture.clone(),
            size_multiplier: run.size_multiplier,
            criterion_label: run.criterion_label.clone(),
            task: run.task.clone(),
            value,
        })
    }
}

fn check_same(field: &'static str, first: &str, other: &str) -> Result<(), MetricsError> {
    if first == other {
        Ok(())
    } else {
        Err(MetricsError::Mixed {
            field,
            first: first.to_string(),
            other: other.to_string(),
        })
    }
}

/// Unweighted mean over model sizes of each run's final efficiency.
pub fn efficiency_per_size<S: Scalar>(
    runs: &[RunEfficiency<S>],
) -> Result<EfficiencyValue<S>, MetricsError> {
    let first = runs.first().ok_or(MetricsError::Empty)?;
    let mut sizes = BTreeSet::new();
    for run in runs {
        check_same("architectures", &first.architecture, &run.architecture)?;
        check_same("criteria", &first.criterion_label, &run.criterion_label)?;
        check_same("tasks", &first.task, &run.task)?;
        if !sizes.insert(run.size_multiplier) {
            return Err(MetricsError::DuplicateSize(run.size_multiplier));
        }
    }
    let values: Vec<S> = runs.iter().map(|r| r.value).collect();
    let value = mean(&values).ok_or(MetricsError::Empty)?;
    Ok(EfficiencyValue::new(value, EfficiencyLevel::PerSizeMean))
}

/// Convenience wrapper: per-size mean straight from run records.
pub fn efficiency_per_size_of_runs<S: Scalar>(
    runs: &[RunRecord<S>],
) -> Result<EfficiencyValue<S>, MetricsError> {
    let effs = runs
        .iter()
        .map(RunEfficiency::from_run)
        .collect::<Result<Vec<_>, _>>()?;
    efficiency_per_size(&effs)
}

/// Uniform mean of the per-size means across criteria.
pub fn efficiency_overall<S: Scalar>(
    per_criterion: &BTreeMap<String, EfficiencyValue<S>>,
) -> Result<EfficiencyValue<S>, MetricsError> {
    let values: Vec<S> = per_criterion.values().map(|v| v.value).collect();
    let value = mean(&values).ok_or(MetricsError::Empty)?;
    Ok(EfficiencyValue::new(
        value,
        EfficiencyLevel::PerCriterionMean,
    ))
}

/// Weighted variant of [`efficiency_overall`]; criteria missing from
/// `weights` get weight 1.
pub fn efficiency_overall_weighted<S: Scalar>(
    per_criterion: &BTreeMap<String, EfficiencyValue<S>>,
    weights: &BTreeMap<String, S>,
) -> Result<EfficiencyValue<S>, MetricsError> {
    if per_criterion.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut total = S::zero();
    let mut weight_sum = S::zero();
    for (label, v) in per_criterion {
        let w = weights.get(label).copied().unwrap_or_else(S::one);
        if !w.is_finite() || w < S::zero() {
            return Err(MetricsError::BadWeights);
        }
        total = total + w * v.value;
        weight_sum = weight_sum + w;
    }
    if !(weight_sum > S::zero()) {
        return Err(MetricsError::BadWeights);
    }
    Ok(EfficiencyValue::new(
        total / weight_sum,
        EfficiencyLevel::PerCriterionMean,
    ))
}
