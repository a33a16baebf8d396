//! Power sampling and the per-run energy ledger.
//!
//! The canonical energy quantity is the *watt-sum*: the plain sum of the
//! instantaneous power readings recorded during a run. Streams from different
//! components are concatenated, never averaged, so the total is independent
//! of the order in which samples from different sources arrive.

mod ledger;
mod source;
mod trace;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use ledger::{watt_sum_to_joules, EnergyLedger, LedgerError, SharedLedger};
pub use source::{
    open_source, spawn_pump, ConstantSource, GpuHwmonCounter, PowerSource, PumpEvent, PumpHandle,
    RaplCounter, SourceConfig, TelemetrySourceConfig, DEFAULT_RAPL_PATH,
};
pub use trace::{parse_trace, read_trace, TraceReplay};

/// A hardware component whose power draw is sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Component {
    #[serde(rename = "GPU")]
    Gpu,
    #[serde(rename = "CPU")]
    Cpu,
    #[serde(rename = "RAM")]
    Ram,
}

impl Component {
    pub fn as_str(self) -> &'static str {
        match self {
            Component::Gpu => "GPU",
            Component::Cpu => "CPU",
            Component::Ram => "RAM",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Component {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "GPU" => Ok(Component::Gpu),
            "CPU" => Ok(Component::Cpu),
            "RAM" => Ok(Component::Ram),
            other => Err(format!(
                "unknown component {other:?} (expected GPU, CPU or RAM)"
            )),
        }
    }
}

/// One timestamped instantaneous power reading from one component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSample<S = f64> {
    /// Milliseconds since the run started (per-run monotonic clock).
    pub timestamp_ms: u64,
    pub component: Component,
    pub watts: S,
}

impl<S> PowerSample<S> {
    pub fn new(timestamp_ms: u64, component: Component, watts: S) -> Self {
        Self {
            timestamp_ms,
            component,
            watts,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TelemetryError {
    #[error("sample_interval_ms must be > 0")]
    ZeroInterval,
    #[error("invalid source parameter: {0}")]
    InvalidParameter(String),
    #[error("cannot read trace file {path}: {source}")]
    TraceIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    TraceParse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("counter unavailable: {0}")]
    CounterUnavailable(String),
    #[error("counter read failed: {0}")]
    CounterRead(String),
}
