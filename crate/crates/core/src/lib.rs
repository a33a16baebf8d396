//! Measurement harness for the training efficiency of neural architectures.
//!
//! Efficiency is accuracy divided by the cumulative sum of instantaneous power
//! samples recorded while training. The crate is organised bottom-up:
//!
//! * [`telemetry`] samples power from one or more component sources and keeps
//!   the per-run energy ledger.
//! * [`criteria`] holds the four stopping rules as replayable state machines.
//! * [`metrics`] computes per-epoch, per-size and per-criterion efficiencies,
//!   architecture/task ratios and the overtraining A/B analysis.
//! * [`orchestrator`] supervises trainer processes over an experiment grid and
//!   persists an append-only run ledger.
//! * [`trainers`] implements the builtin surrogate, tiny-net and fault trainers.
//! * [`report`] turns ledgers or transcribed fixture tables into CSV bundles.
//!
//! The metric and criterion types are generic over [`Scalar`] (`f32`/`f64`);
//! the aliases below pin the `f64` instantiation used by the file formats.

pub mod criteria;
pub mod metrics;
pub mod orchestrator;
pub mod report;
pub mod scalar;
pub mod telemetry;
pub mod trainers;

pub use scalar::Scalar;

/// Harness version recorded in ledgers and manifests.
pub const HARNESS_VERSION: &str = env!("CARGO_PKG_VERSION");

pub type PowerSample = telemetry::PowerSample<f64>;
pub type EnergyLedger = telemetry::EnergyLedger<f64>;
pub type StoppingCriterion = criteria::StoppingCriterion<f64>;
pub type StoppingRule = criteria::StoppingRule<f64>;
pub type CriterionState = criteria::CriterionState<f64>;
pub type StopReason = criteria::StopReason<f64>;
pub type EpochRecord = metrics::EpochRecord<f64>;
pub type RunRecord = metrics::RunRecord<f64>;
pub type EfficiencyValue = metrics::EfficiencyValue<f64>;
pub type RunEfficiency = metrics::RunEfficiency<f64>;
pub type OvertrainingVerdict = metrics::OvertrainingVerdict<f64>;
pub type RatioTable = metrics::RatioTable<f64>;

pub type EnergyLedgerF32 = telemetry::EnergyLedger<f32>;
pub type RunRecordF32 = metrics::RunRecord<f32>;
pub type EfficiencyValueF32 = metrics::EfficiencyValue<f32>;
