//! The four stopping criteria as replayable per-epoch state machines.
//!
//! Each criterion is checked once per epoch boundary. The energy budget is
//! therefore allowed to be overshot by up to one epoch's worth of energy.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::scalar::in_unit_interval;
use crate::Scalar;

pub const DEFAULT_MAX_EPOCHS: usize = 50;
pub const DEFAULT_PATIENCE: usize = 3;
pub const DEFAULT_BUDGET_WATT_SUM: f64 = 100_000.0;
pub const DEFAULT_TARGET_ACCURACY: f64 = 0.99;
pub const DEFAULT_SAFETY_CAP: usize = 1000;

/// Which accuracy stream an accuracy bound watches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyStream {
    #[default]
    Train,
    Eval,
}

fn default_max_epochs() -> usize {
    DEFAULT_MAX_EPOCHS
}

fn default_patience() -> usize {
    DEFAULT_PATIENCE
}

fn default_budget<S: Scalar>() -> S {
    S::lit(DEFAULT_BUDGET_WATT_SUM)
}

fn default_target<S: Scalar>() -> S {
    S::lit(DEFAULT_TARGET_ACCURACY)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[serde(bound(deserialize = "S: Scalar + Deserialize<'de>"))]
pub enum StoppingCriterion<S = f64> {
    FixedEpochs {
        #[serde(default = "default_max_epochs")]
        max_epochs: usize,
    },
    AccuracyBound {
        #[serde(default = "default_target")]
        target_accuracy: S,
        #[serde(default)]
        watch: AccuracyStream,
    },
    EarlyStopping {
        #[serde(default = "default_patience")]
        patience: usize,
    },
    EnergyBudget {
        #[serde(default = "default_budget")]
        budget_watt_sum: S,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopKind {
    FixedEpochs,
    AccuracyBound,
    EarlyStopping,
    EnergyBudget,
    /// The hard epoch cap fired before the criterion itself did.
    SafetyCap,
}

impl StopKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StopKind::FixedEpochs => "fixed_epochs",
            StopKind::AccuracyBound => "accuracy_bound",
            StopKind::EarlyStopping => "early_stopping",
            StopKind::EnergyBudget => "energy_budget",
            StopKind::SafetyCap => "safety_cap",
        }
    }
}

impl fmt::Display for StopKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CriterionError {
    #[error("invalid criterion: {0}")]
    Invalid(String),
    #[error("epoch {got} arrived out of order (expected {expected})")]
    OutOfOrder { expected: usize, got: usize },
    #[error("{stream} accuracy {value} is outside [0, 1]")]
    AccuracyOutOfRange { stream: &'static str, value: f64 },
    #[error("energy decreased from {previous} to {current}")]
    EnergyDecreased { previous: f64, current: f64 },
    #[error("criterion already stopped at epoch {0}")]
    AlreadyStopped(usize),
}

impl<S: Scalar> StoppingCriterion<S> {
    pub fn fixed_epochs(max_epochs: usize) -> Self {
        Self::FixedEpochs { max_epochs }
    }

    pub fn accuracy_bound(target_accuracy: S, watch: AccuracyStream) -> Self {
        Self::AccuracyBound {
            target_accuracy,
            watch,
        }
    }

    pub fn early_stopping(patience: usize) -> Self {
        Self::EarlyStopping { patience }
    }

    pub fn energy_budget(budget_watt_sum: S) -> Self {
        Self::EnergyBudget { budget_watt_sum }
    }

    /// 50 epochs, 99 % training accuracy, patience 3, 100 000 W budget.
    pub fn standard_suite() -> Vec<Self> {
        vec![
            Self::fixed_epochs(DEFAULT_MAX_EPOCHS),
            Self::accuracy_bound(S::lit(DEFAULT_TARGET_ACCURACY), AccuracyStream::Train),
            Self::early_stopping(DEFAULT_PATIENCE),
            Self::energy_budget(S::lit(DEFAULT_BUDGET_WATT_SUM)),
        ]
    }

    pub fn kind(&self) -> StopKind {
        match self {
            Self::FixedEpochs { .. } => StopKind::FixedEpochs,
            Self::AccuracyBound { .. } => StopKind::AccuracyBound,
            Self::EarlyStopping { .. } => StopKind::EarlyStopping,
            Self::EnergyBudget { .. } => StopKind::EnergyBudget,
        }
    }

    /// Canonical configuration name (`fixed_epochs`, `accuracy_bound`, ...).
    pub fn name(&self) -> &'static str {
        self.kind().as_str()
    }

    pub fn validate(&self) -> Result<(), CriterionError> {
        match *self {
            Self::FixedEpochs { max_epochs } if max_epochs < 1 => {
                Err(CriterionError::Invalid("max_epochs must be >= 1".into()))
            }
            Self::AccuracyBound {
                target_accuracy, ..
            } if !(target_accuracy > S::zero() && target_accuracy <= S::one()) => {
                Err(CriterionError::Invalid(format!(
                    "target_accuracy must be in (0, 1], got {target_accuracy}"
                )))
            }
            Self::EarlyStopping { patience } if patience < 1 => {
                Err(CriterionError::Invalid("patience must be >= 1".into()))
            }
            Self::EnergyBudget { budget_watt_sum }
                if !(budget_watt_sum > S::zero() && budget_watt_sum.is_finite()) =>
            {
                Err(CriterionError::Invalid(format!(
                    "budget_watt_sum must be > 0, got {budget_watt_sum}"
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Why and when a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopReason<S = f64> {
    pub kind: StopKind,
    pub at_epoch: usize,
    /// Accuracy reached, watt-sum reached, or epochs completed.
    pub trigger_value: S,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decision<S = f64> {
    Continue,
    Stop(StopReason<S>),
}

impl<S> Decision<S> {
    pub fn is_stop(&self) -> bool {
        matches!(self, Decision::Stop(_))
    }
}

/// What to do with epoch events that arrive after the stop decision.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AfterStop {
    #[default]
    Reject,
    Ignore,
}

/// One epoch-boundary observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochObservation<S = f64> {
    pub epoch: usize,
    pub train_acc: S,
    pub eval_acc: S,
    pub energy_so_far: S,
}

impl<S> EpochObservation<S> {
    pub fn new(epoch: usize, train_acc: S, eval_acc: S, energy_so_far: S) -> Self {
        Self {
            epoch,
            train_acc,
            eval_acc,
            energy_so_far,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionState<S = f64> {
    pub epochs_seen: usize,
    pub best_accuracy_so_far: Option<S>,
    pub epochs_since_improvement: usize,
    pub last_energy: Option<S>,
    pub decided: Option<StopReason<S>>,
}

impl<S> Default for CriterionState<S> {
    fn default() -> Self {
        Self {
            epochs_seen: 0,
            best_accuracy_so_far: None,
            epochs_since_improvement: 0,
            last_energy: None,
            decided: None,
        }
    }
}

/// A criterion plus the operational policy around it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppingRule<S = f64> {
    pub criterion: StoppingCriterion<S>,
    pub safety_cap: Option<usize>,
    pub after_stop: AfterStop,
}

impl<S: Scalar> StoppingRule<S> {
    pub fn new(criterion: StoppingCriterion<S>) -> Self {
        Self {
            criterion,
            safety_cap: Some(DEFAULT_SAFETY_CAP),
            after_stop: AfterStop::Reject,
        }
    }

    pub fn with_safety_cap(mut self, cap: Option<usize>) -> Self {
        self.safety_cap = cap;
        self
    }

    pub fn with_after_stop(mut self, policy: AfterStop) -> Self {
        self.after_stop = policy;
        self
    }

    pub fn validate(&self) -> Result<(), CriterionError> {
        self.criterion.validate()?;
        match (self.safety_cap, self.criterion) {
            (Some(0), _) => Err(CriterionError::Invalid("safety_cap must be >= 1".into())),
            (Some(cap), StoppingCriterion::FixedEpochs { max_epochs }) if cap < max_epochs => {
                Err(CriterionError::Invalid(format!(
                    "safety_cap {cap} is below max_epochs {max_epochs}"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Feeds one epoch-end event into `state` and returns the decision.
    ///
    /// On error the state is left untouched.
    pub fn observe(
        &self,
        state: &mut CriterionState<S>,
        obs: &EpochObservation<S>,
    ) -> Result<Decision<S>, CriterionError> {
        if let Some(reason) = state.decided {
            return match self.after_stop {
                AfterStop::Reject => Err(CriterionError::AlreadyStopped(reason.at_epoch)),
                AfterStop::Ignore => Ok(Decision::Stop(reason)),
            };
        }
        if obs.epoch != state.epochs_seen {
            return Err(CriterionError::OutOfOrder {
                expected: state.epochs_seen,
                got: obs.epoch,
            });
        }
        for (stream, value) in [("train", obs.train_acc), ("eval", obs.eval_acc)] {
            if !in_unit_interval(value) {
                return Err(CriterionError::AccuracyOutOfRange {
                    stream,
                    value: value.to_f64_lossy(),
                });
            }
        }
        if obs.energy_so_far.is_nan() {
            return Err(CriterionError::Invalid("energy_so_far is NaN".into()));
        }
        if let Some(previous) = state.last_energy {
            if obs.energy_so_far < previous {
                return Err(CriterionError::EnergyDecreased {
                    previous: previous.to_f64_lossy(),
                    current: obs.energy_so_far.to_f64_lossy(),
                });
            }
        }

        state.epochs_seen += 1;
        state.last_energy = Some(obs.energy_so_far);
        match state.best_accuracy_so_far {
            Some(best) if obs.eval_acc <= best => state.epochs_since_improvement += 1,
            _ => {
                state.best_accuracy_so_far = Some(obs.eval_acc);
                state.epochs_since_improvement = 0;
            }
        }

        let stop = |kind, trigger_value| {
            Some(StopReason {
                kind,
                at_epoch: obs.epoch,
                trigger_value,
            })
        };
        let mut reason = match self.criterion {
            StoppingCriterion::FixedEpochs { max_epochs } if state.epochs_seen >= max_epochs => {
                stop(StopKind::FixedEpochs, S::from_count(state.epochs_seen))
            }
            StoppingCriterion::AccuracyBound {
                target_accuracy,
                watch,
            } => {
                let watched = match watch {
                    AccuracyStream::Train => obs.train_acc,
                    AccuracyStream::Eval => obs.eval_acc,
                };
                if watched >= target_accuracy {
                    stop(StopKind::AccuracyBound, watched)
                } else {
                    None
                }
            }
            StoppingCriterion::EarlyStopping { patience }
                if state.epochs_since_improvement >= patience =>
            {
                stop(
                    StopKind::EarlyStopping,
                    state.best_accuracy_so_far.unwrap_or(obs.eval_acc),
                )
            }
            StoppingCriterion::EnergyBudget { budget_watt_sum }
                if obs.energy_so_far >= budget_watt_sum =>
            {
                stop(StopKind::EnergyBudget, obs.energy_so_far)
            }
            _ => None,
        };
        if reason.is_none() && self.safety_cap.is_some_and(|cap| state.epochs_seen >= cap) {
            reason = stop(StopKind::SafetyCap, S::from_count(state.epochs_seen));
        }
        state.decided = reason;
        Ok(reason.map_or(Decision::Continue, Decision::Stop))
    }
}

/// Drives `rule` over a whole event sequence; returns the stop, if any.
pub fn replay<S: Scalar>(
    rule: &StoppingRule<S>,
    events: &[EpochObservation<S>],
) -> Result<Option<StopReason<S>>, CriterionError> {
    let mut state = CriterionState::default();
    for obs in events {
        if let Decision::Stop(reason) = rule.observe(&mut state, obs)? {
            return Ok(Some(reason));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(epoch: usize, train: f64, eval: f64, energy: f64) -> EpochObservation<f64> {
        EpochObservation::new(epoch, train, eval, energy)
    }

    /// Brute-force oracle: first index whose last `patience` eval accuracies
    /// all fail to exceed the maximum of everything before them.
    fn early_stop_oracle(eval: &[f64], patience: usize) -> Option<usize> {
        (patience..eval.len()).find(|&i| {
            let window = &eval[i + 1 - patience..=i];
            let before = eval[..i + 1 - patience]
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            window.iter().all(|&a| a <= before)
        })
    }

    #[test]
    fn fixed_epochs_stops_on_the_fiftieth() {
        let rule = StoppingRule::new(StoppingCriterion::fixed_epochs(50));
        let mut state = CriterionState::default();
        for e in 0..49 {
            assert_eq!(
                rule.observe(&mut state, &obs(e, 0.5, 0.5, e as f64)),
                Ok(Decision::Continue)
            );
        }
        assert_eq!(
            rule.observe(&mut state, &obs(49, 0.5, 0.5, 49.0)),
            Ok(Decision::Stop(StopReason {
                kind: StopKind::FixedEpochs,
                at_epoch: 49,
                trigger_value: 50.0
            }))
        );
    }

    #[test]
    fn energy_budget_checks_at_epoch_end() {
        let rule = StoppingRule::new(StoppingCriterion::energy_budget(100_000.0));
        let events = [
            obs(0, 0.1, 0.1, 60_000.0),
            obs(1, 0.2, 0.2, 99_999.0),
            obs(2, 0.3, 0.3, 123_000.0),
        ];
        let reason = replay(&rule, &events).unwrap().unwrap();
        assert_eq!(reason.kind, StopKind::EnergyBudget);
        assert_eq!(reason.at_epoch, 2);
        assert_eq!(reason.trigger_value, 123_000.0);
    }

    #[test]
    fn early_stopping_example() {
        let eval = [0.5, 0.6, 0.6, 0.6, 0.6];
        assert_eq!(early_stop_oracle(&eval, 3), Some(4));
        let rule = StoppingRule::new(StoppingCriterion::early_stopping(3));
        let events: Vec<_> = eval
            .iter()
            .enumerate()
            .map(|(i, &a)| obs(i, a, a, i as f64))
            .collect();
        let reason = replay(&rule, &events).unwrap().unwrap();
        assert_eq!((reason.kind, reason.at_epoch), (StopKind::EarlyStopping, 4));
        assert_eq!(reason.trigger_value, 0.6);
    }

    #[test]
    fn accuracy_bound_watches_train_by_default() {
        let rule = StoppingRule::new(StoppingCriterion::accuracy_bound(
            0.99,
            AccuracyStream::Train,
        ));
        let events = [obs(0, 0.95, 0.2, 1.0), obs(1, 0.991, 0.2, 2.0)];
        let reason = replay(&rule, &events).unwrap().unwrap();
        assert_eq!((reason.at_epoch, reason.trigger_value), (1, 0.991));

        let eval_rule = StoppingRule::new(StoppingCriterion::accuracy_bound(
            0.99,
            AccuracyStream::Eval,
        ));
        assert_eq!(replay(&eval_rule, &events).unwrap(), None);
    }

    #[test]
    fn rejects_bad_events() {
        let rule = StoppingRule::new(StoppingCriterion::<f64>::early_stopping(3));
        let mut state = CriterionState::default();
        assert!(matches!(
            rule.observe(&mut state, &obs(1, 0.5, 0.5, 0.0)),
            Err(CriterionError::OutOfOrder {
                expected: 0,
                got: 1
            })
        ));
        assert!(matches!(
            rule.observe(&mut state, &obs(0, 1.5, 0.5, 0.0)),
            Err(CriterionError::AccuracyOutOfRange {
                stream: "train",
                ..
            })
        ));
        assert!(rule
            .observe(&mut state, &obs(0, 0.5, f64::NAN, 0.0))
            .is_err());
        rule.observe(&mut state, &obs(0, 0.5, 0.5, 10.0)).unwrap();
        assert!(matches!(
            rule.observe(&mut state, &obs(1, 0.5, 0.5, 9.0)),
            Err(CriterionError::EnergyDecreased { .. })
        ));
        assert_eq!(state.epochs_seen, 1);
    }

    #[test]
    fn decisions_are_stable_after_stop() {
        let rule = StoppingRule::new(StoppingCriterion::<f64>::fixed_epochs(1));
        let mut state = CriterionState::default();
        let first = rule.observe(&mut state, &obs(0, 0.5, 0.5, 1.0)).unwrap();
        assert!(first.is_stop());
        assert_eq!(
            rule.observe(&mut state, &obs(1, 0.9, 0.9, 2.0)),
            Err(CriterionError::AlreadyStopped(0))
        );
        let lenient = rule.with_after_stop(AfterStop::Ignore);
        assert_eq!(
            lenient.observe(&mut state, &obs(1, 0.9, 0.9, 2.0)),
            Ok(first)
        );
        assert_eq!(state.epochs_seen, 1);
    }

    #[test]
    fn safety_cap_is_distinct() {
        let rule =
            StoppingRule::new(StoppingCriterion::<f64>::early_stopping(3)).with_safety_cap(Some(5));
        let events: Vec<_> = (0..10)
            .map(|i| obs(i, 0.1, 0.1 + i as f64 * 0.01, i as f64))
            .collect();
        let reason = replay(&rule, &events).unwrap().unwrap();
        assert_eq!((reason.kind, reason.at_epoch), (StopKind::SafetyCap, 4));
    }

    #[test]
    fn validation() {
        assert!(StoppingCriterion::<f64>::fixed_epochs(0)
            .validate()
            .is_err());
        assert!(StoppingCriterion::<f64>::early_stopping(0)
            .validate()
            .is_err());
        assert!(
            StoppingCriterion::accuracy_bound(0.0, AccuracyStream::Train)
                .validate()
                .is_err()
        );
        assert!(StoppingCriterion::accuracy_bound(1.0, AccuracyStream::Eval)
            .validate()
            .is_ok());
        assert!(StoppingCriterion::energy_budget(0.0).validate().is_err());
        assert!(
            StoppingRule::new(StoppingCriterion::<f64>::fixed_epochs(100))
                .with_safety_cap(Some(50))
                .validate()
                .is_err()
        );
        for c in StoppingCriterion::<f64>::standard_suite() {
            c.validate().unwrap();
        }
    }

    #[test]
    fn config_defaults_from_toml() {
        let c: StoppingCriterion<f64> = toml::from_str("kind = \"energy_budget\"").unwrap();
        assert_eq!(c, StoppingCriterion::energy_budget(100_000.0));
        let c: StoppingCriterion<f64> =
            toml::from_str("kind = \"accuracy_bound\"\ntarget_accuracy = 0.5\nwatch = \"eval\"")
                .unwrap();
        assert_eq!(
            c,
            StoppingCriterion::accuracy_bound(0.5, AccuracyStream::Eval)
        );
        let c: StoppingCriterion<f32> = toml::from_str("kind = \"fixed_epochs\"").unwrap();
        assert_eq!(c, StoppingCriterion::fixed_epochs(50));
    }

    #[test]
    fn f32_machine() {
        let rule = StoppingRule::new(StoppingCriterion::<f32>::energy_budget(10.0));
        let events = [EpochObservation::new(0, 0.5f32, 0.5, 12.0)];
        assert_eq!(
            replay(&rule, &events).unwrap().unwrap().trigger_value,
            12.0f32
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn accuracies() -> impl Strategy<Value = Vec<f64>> {
            prop::collection::vec(prop_oneof![0.0f64..=1.0, Just(0.5), Just(0.75)], 1..80)
        }

        proptest! {
            #[test]
            fn early_stop_matches_oracle(eval in accuracies(), patience in 1usize..6) {
                let rule = StoppingRule::new(StoppingCriterion::early_stopping(patience)).with_safety_cap(None);
                let events: Vec<_> = eval.iter().enumerate().map(|(i, &a)| obs(i, a, a, i as f64)).collect();
                let got = replay(&rule, &events).unwrap().map(|r| r.at_epoch);
                prop_assert_eq!(got, early_stop_oracle(&eval, patience));
                if let Some(at) = got {
                    prop_assert!(at >= patience);
                }
            }
        }
    }
}
