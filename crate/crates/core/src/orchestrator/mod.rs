//! Experiment configuration, trainer supervision and the run ledger.

pub mod cell;
pub mod config;
pub mod grid;
pub mod protocol;
pub mod runlog;
pub mod summary;

pub use cell::{enumerate_cells, run_cell, BuiltinLaunch, Cell, CellContext};
pub use config::{ExperimentConfig, LoadedConfig};
pub use grid::{run_grid, GridError, GridOptions, GridOutcome, LEDGER_FILE};
pub use runlog::{read_ledger, RunLedgerEntry, RunStatus};
pub use summary::summarize;
