//! Trainer wire protocol: newline-delimited JSON on the child's stdio.
//!
//! Trainer → harness (stdout):
//!
//! ```text
//! {"event":"epoch_end","epoch":0,"train_acc":0.8,"eval_acc":0.75}
//! {"event":"log","message":"..."}
//! {"event":"final","train_acc":0.9,"eval_acc":0.85}
//! ```
//!
//! Harness → trainer (stdin): a single `{"cmd":"stop"}` line.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TrainerEvent {
    EpochEnd {
        epoch: usize,
        train_acc: f64,
        eval_acc: f64,
    },
    Log {
        message: String,
    },
    Final {
        train_acc: f64,
        eval_acc: f64,
    },
}

impl TrainerEvent {
    pub fn epoch_end(epoch: usize, train_acc: f64, eval_acc: f64) -> Self {
        TrainerEvent::EpochEnd {
            epoch,
            train_acc,
            eval_acc,
        }
    }

    pub fn log(message: impl Into<String>) -> Self {
        TrainerEvent::Log {
            message: message.into(),
        }
    }

    /// Serialised form without the trailing newline.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("trainer events always serialise")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
pub enum HarnessCommand {
    Stop,
}

impl HarnessCommand {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("commands always serialise")
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("line {line}: not a protocol event: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: accuracy {value} outside [0, 1]")]
    AccuracyOutOfRange { line: usize, value: f64 },
    #[error("line {line}: expected epoch {expected}, got {got}")]
    OutOfOrder {
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("line {line}: event after final")]
    AfterFinal { line: usize },
}

/// Parses one stdout line. `line` is the 1-based line number used in errors.
pub fn parse_event(text: &str, line: usize) -> Result<TrainerEvent, ProtocolError> {
    let event: TrainerEvent = serde_json::from_str(text.trim_end_matches('\r')).map_err(|e| {
        ProtocolError::Malformed {
            line,
            reason: e.to_string(),
        }
    })?;
    let accs = match &event {
        TrainerEvent::EpochEnd {
            train_acc,
            eval_acc,
            ..
        }
        | TrainerEvent::Final {
            train_acc,
            eval_acc,
        } => [*train_acc, *eval_acc],
        TrainerEvent::Log { .. } => return Ok(event),
    };
    for value in accs {
        if !(value.is_finite() && (0.0..=1.0).contains(&value)) {
            return Err(ProtocolError::AccuracyOutOfRange { line, value });
        }
    }
    Ok(event)
}

/// Parses a line the harness sent. Unknown or malformed commands yield `None`.
pub fn parse_command(text: &str) -> Option<HarnessCommand> {
    serde_json::from_str(text.trim()).ok()
}

/// Stateful checker for a whole event stream: contiguous epochs from 0 and
/// nothing after `final`.
#[derive(Debug, Default, Clone)]
pub struct StreamValidator {
    lines: usize,
    next_epoch: usize,
    finished: bool,
}

impl StreamValidator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn epochs_seen(&self) -> usize {
        self.next_epoch
    }

    pub fn finished(&self) -> bool {
        self.finished
    }

    pub fn accept(&mut self, text: &str) -> Result<TrainerEvent, ProtocolError> {
        self.lines += 1;
        let line = self.lines;
        let event = parse_event(text, line)?;
        if self.finished {
            return Err(ProtocolError::AfterFinal { line });
        }
        match &event {
            TrainerEvent::EpochEnd { epoch, .. } => {
                if *epoch != self.next_epoch {
                    return Err(ProtocolError::OutOfOrder {
                        line,
                        expected: self.next_epoch,
                        got: *epoch,
                    });
                }
                self.next_epoch += 1;
            }
            TrainerEvent::Final { .. } => self.finished = true,
            TrainerEvent::Log { .. } => {}
        }
        Ok(event)
    }
}
