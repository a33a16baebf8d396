//! Builtin trainers that speak the wire protocol.
//!
//! * `surrogate` produces closed-form saturating accuracy curves.
//! * `tinynet` trains a small ReLU MLP with Adam on the bundled blobs data.
//! * `fault` behaves like the surrogate until a configured epoch, then
//!   crashes, prints garbage, skips an epoch index or ignores the stop command.
//!
//! [`drive`] runs any [`Trainer`] against an output stream and a [`StopSignal`].

use std::io::{self, BufRead, Write};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use thiserror::Error;

use crate::orchestrator::protocol::{parse_command, HarnessCommand, TrainerEvent};

pub mod dataset;
pub mod fault;
pub mod surrogate;
pub mod tinynet;

pub use dataset::Dataset;
pub use fault::{FaultMode, FaultSpec, FaultTrainer};
pub use surrogate::{SurrogateSpec, SurrogateTrainer};
pub use tinynet::{TinyNetSpec, TinyNetTrainer};

/// Names accepted by [`build_trainer`].
pub const BUILTIN_TRAINERS: [&str; 3] = ["surrogate", "tinynet", "fault"];

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("unknown builtin trainer `{0}` (expected one of surrogate, tinynet, fault)")]
    UnknownTrainer(String),
    #[error("bad task label `{label}`: {message}")]
    BadTask { label: String, message: String },
    #[error("invalid trainer parameter: {0}")]
    Invalid(String),
    #[error("dataset line {line}: {message}")]
    Dataset { line: usize, message: String },
}

/// What a trainer does for one epoch slot.
#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    /// Normal epoch with its accuracies.
    Epoch { train_acc: f64, eval_acc: f64 },
    /// Emit this raw line verbatim and carry on with the same epoch index.
    Raw(String),
    /// Report the given epoch index instead of the expected one.
    Jump {
        epoch: usize,
        train_acc: f64,
        eval_acc: f64,
    },
    /// Exit immediately with this status, without a final event.
    Crash(i32),
    /// Stop listening to the harness and block forever.
    Hang,
}

pub trait Trainer: Send {
    fn step(&mut self, epoch: usize) -> Step;
}

/// Builds a builtin trainer from its name and the protocol arguments.
pub fn build_trainer(
    name: &str,
    size: u32,
    task: &str,
    seed: u64,
) -> Result<Box<dyn Trainer>, TrainerError> {
    if size == 0 {
        return Err(TrainerError::Invalid("size multiplier must be >= 1".into()));
    }
    match name {
        "surrogate" => Ok(Box::new(SurrogateTrainer::new(
            SurrogateSpec::from_task(task)?,
            size,
            seed,
        ))),
        "tinynet" => Ok(Box::new(TinyNetTrainer::from_task(task, size, seed)?)),
        "fault" => Ok(Box::new(FaultTrainer::new(
            FaultSpec::from_task(task)?,
            size,
            seed,
        ))),
        other => Err(TrainerError::UnknownTrainer(other.to_string())),
    }
}

/// Stop flag shared between the stdin watcher and the training loop.
#[derive(Debug, Clone, Default)]
pub struct StopSignal(Arc<AtomicBool>);

impl StopSignal {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn request(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_requested(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }

    /// Spawns a thread that reads harness commands from `reader`. Malformed
    /// lines go to stderr and are otherwise ignored. When `stop_on_eof` is
    /// set, a closed input also counts as a stop (the harness went away).
    pub fn watch<R: BufRead + Send + 'static>(reader: R, stop_on_eof: bool) -> Self {
        let signal = StopSignal::new();
        let flag = signal.clone();
        thread::spawn(move || {
            for line in reader.lines() {
                let Ok(line) = line else { break };
                if line.trim().is_empty() {
                    continue;
                }
                match parse_command(&line) {
                    Some(HarnessCommand::Stop) => {
                        flag.request();
                        return;
                    }
                    None => eprintln!("ignoring malformed command: {line}"),
                }
            }
            if stop_on_eof {
                flag.request();
            }
        });
        signal
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DriveOptions {
    /// Pause after each epoch; stands in for real training time.
    pub epoch_delay: Duration,
    /// Hard upper bound on emitted epochs, for callers without a harness.
    pub max_epochs: Option<usize>,
}

impl Default for DriveOptions {
    fn default() -> Self {
        Self {
            epoch_delay: Duration::ZERO,
            max_epochs: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DriveOutcome {
    /// Final event written after this many epochs.
    Finished { epochs: usize },
    /// Trainer asked to die with this exit status.
    Crashed(i32),
}

fn emit<W: Write>(out: &mut W, line: &str) -> io::Result<()> {
    out.write_all(line.as_bytes())?;
    out.write_all(b"\n")?;
    out.flush()
}

/// Runs `trainer` until the stop signal (checked between epochs), the epoch
/// limit, or a crash step.
pub fn drive<T: Trainer + ?Sized, W: Write>(
    trainer: &mut T,
    stop: &StopSignal,
    out: &mut W,
    options: DriveOptions,
) -> io::Result<DriveOutcome> {
    let mut epoch = 0usize;
    let mut last = (0.0, 0.0);
    loop {
        if stop.is_requested() || options.max_epochs.is_some_and(|m| epoch >= m) {
            break;
        }
        match trainer.step(epoch) {
            Step::Epoch {
                train_acc,
                eval_acc,
            } => {
                emit(
                    out,
                    &TrainerEvent::epoch_end(epoch, train_acc, eval_acc).to_line(),
                )?;
                last = (train_acc, eval_acc);
                epoch += 1;
            }
            Step::Raw(line) => {
                emit(out, &line)?;
                continue;
            }
            Step::Jump {
                epoch: reported,
                train_acc,
                eval_acc,
            } => {
                emit(
                    out,
                    &TrainerEvent::epoch_end(reported, train_acc, eval_acc).to_line(),
                )?;
                last = (train_acc, eval_acc);
                epoch = reported + 1;
            }
            Step::Crash(code) => return Ok(DriveOutcome::Crashed(code)),
            Step::Hang => loop {
                thread::sleep(Duration::from_secs(3600));
            },
        }
        if !options.epoch_delay.is_zero() {
            thread::sleep(options.epoch_delay);
        }
    }
    emit(
        out,
        &TrainerEvent::Final {
            train_acc: last.0,
            eval_acc: last.1,
        }
        .to_line(),
    )?;
    Ok(DriveOutcome::Finished { epochs: epoch })
}

/// Entry point used by the `trainer` subcommand: wires stdin/stdout and
/// returns the process exit status.
pub fn run_stdio(name: &str, size: u32, task: &str, seed: u64, options: DriveOptions) -> i32 {
    let mut trainer = match build_trainer(name, size, task, seed) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("{e}");
            return 64;
        }
    };
    let stop = StopSignal::watch(io::BufReader::new(io::stdin()), true);
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match drive(trainer.as_mut(), &stop, &mut out, options) {
        Ok(DriveOutcome::Finished { .. }) => 0,
        Ok(DriveOutcome::Crashed(code)) => code,
        // broken pipe: the harness is gone
        Err(_) => 0,
    }
}

pub(crate) fn split_task(label: &str) -> (&str, Option<&str>) {
    match label.split_once(':') {
        Some((head, rest)) => (head, Some(rest)),
        None => (label, None),
    }
}
