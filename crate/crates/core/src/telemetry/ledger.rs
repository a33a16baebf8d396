use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use super::{Component, PowerSample};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LedgerError {
    #[error("power sample must be finite and non-negative, got {0} W")]
    InvalidWatts(f64),
    #[error("epoch {epoch} must be greater than the last marked epoch {last}")]
    NonIncreasingEpoch { epoch: usize, last: usize },
    #[error("epoch {0} has not been marked")]
    UnmarkedEpoch(usize),
}

/// Ordered concatenation of every power sample of one run, with epoch marks.
///
/// `cumulative[k]` is the running sum of the first `k + 1` samples, summed in
/// arrival order. An epoch mark records how many samples had arrived when the
/// epoch ended; the watt-sum up to that epoch is frozen from then on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger<S = f64> {
    samples: Vec<PowerSample<S>>,
    cumulative: Vec<S>,
    epoch_marks: BTreeMap<usize, usize>,
    components: BTreeSet<Component>,
}

impl<S: Scalar> Default for EnergyLedger<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> EnergyLedger<S> {
    pub fn new() -> Self {
        Self {
            samples: Vec::new(),
            cumulative: Vec::new(),
            epoch_marks: BTreeMap::new(),
            components: BTreeSet::new(),
        }
    }

    pub fn append(&mut self, sample: PowerSample<S>) -> Result<(), LedgerError> {
        if !sample.watts.is_finite() || sample.watts < S::zero() {
            return Err(LedgerError::InvalidWatts(sample.watts.to_f64_lossy()));
        }
        let next = self.total() + sample.watts;
        self.samples.push(sample);
        self.cumulative.push(next);
        self.components.insert(sample.component);
        Ok(())
    }

    /// Records that `epoch` ended after the samples received so far.
    /// Returns the sample count stored in the mark.
    pub fn mark_epoch(&mut self, epoch: usize) -> Result<usize, LedgerError> {
        if let Some((&last, _)) = self.epoch_marks.last_key_value() {
            if epoch <= last {
                return Err(LedgerError::NonIncreasingEpoch { epoch, last });
            }
        }
        let count = self.samples.len();
        self.epoch_marks.insert(epoch, count);
        Ok(count)
    }

    /// Watt-sum of every sample recorded up to and including `epoch`'s mark.
    pub fn energy_up_to(&self, epoch: usize) -> Result<S, LedgerError> {
        let count = *self
            .epoch_marks
            .get(&epoch)
            .ok_or(LedgerError::UnmarkedEpoch(epoch))?;
        Ok(self.cumulative_at(count))
    }

    /// Watt-sum of the first `count` samples.
    pub fn cumulative_at(&self, count: usize) -> S {
        match count {
            0 => S::zero(),
            n => self.cumulative[n.min(self.cumulative.len()) - 1],
        }
    }

    pub fn total(&self) -> S {
        self.cumulative.last().copied().unwrap_or_else(S::zero)
    }

    /// Watt-sum of the samples that arrived after the last epoch mark.
    pub fn unmarked_tail(&self) -> S {
        let marked = self.epoch_marks.values().last().copied().unwrap_or(0);
        self.total() - self.cumulative_at(marked)
    }

    pub fn samples(&self) -> &[PowerSample<S>] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn epoch_marks(&self) -> &BTreeMap<usize, usize> {
        &self.epoch_marks
    }

    pub fn last_marked_epoch(&self) -> Option<usize> {
        self.epoch_marks.keys().next_back().copied()
    }

    /// The set of components that contributed at least one sample.
    pub fn components(&self) -> &BTreeSet<Component> {
        &self.components
    }
}

/// Converts a watt-sum into joules assuming every sample covers `interval_ms`.
pub fn watt_sum_to_joules<S: Scalar>(watt_sum: S, interval_ms: u64) -> S {
    watt_sum * S::lit(interval_ms as f64) / S::lit(1000.0)
}

/// Single-writer ledger handle that can be cloned for concurrent snapshot reads.
#[derive(Debug, Clone, Default)]
pub struct SharedLedger<S: Scalar = f64> {
    inner: Arc<RwLock<EnergyLedger<S>>>,
}

impl<S: Scalar> SharedLedger<S> {
    pub fn new() -> Self {
        Self {
            inner: Arc::new(RwLock::new(EnergyLedger::new())),
        }
    }

    pub fn append(&self, sample: PowerSample<S>) -> Result<(), LedgerError> {
        self.inner
            .write()
            .expect("ledger lock poisoned")
            .append(sample)
    }

    pub fn mark_epoch(&self, epoch: usize) -> Result<usize, LedgerError> {
        self.inner
            .write()
            .expect("ledger lock poisoned")
            .mark_epoch(epoch)
    }

    pub fn energy_up_to(&self, epoch: usize) -> Result<S, LedgerError> {
        self.inner
            .read()
            .expect("ledger lock poisoned")
            .energy_up_to(epoch)
    }

    pub fn snapshot(&self) -> EnergyLedger<S> {
        self.inner.read().expect("ledger lock poisoned").clone()
    }
}
