//! Surrogate trainer that misbehaves at a chosen epoch.
//!
//! Task label: `fault:<mode>@<epoch>` with mode one of `crash`, `malformed`,
//! `skip` or `hang`.

use super::{split_task, Step, SurrogateSpec, SurrogateTrainer, Trainer, TrainerError};

/// Exit status used by the `crash` mode.
pub const CRASH_EXIT_CODE: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultMode {
    /// Exit without a final event.
    Crash,
    /// Print a non-JSON line in place of the epoch event.
    Malformed,
    /// Report epoch `n + 1` where `n` was expected.
    Skip,
    /// Stop reading stdin and never exit on its own.
    Hang,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaultSpec {
    pub mode: FaultMode,
    pub at_epoch: usize,
}

impl FaultSpec {
    pub fn from_task(label: &str) -> Result<Self, TrainerError> {
        let bad = |message: &str| TrainerError::BadTask {
            label: label.to_string(),
            message: message.to_string(),
        };
        let (head, params) = split_task(label);
        let (mode, at) = match (head, params.and_then(|p| p.split_once('@'))) {
            ("fault", Some(pair)) => pair,
            _ => return Err(bad("expected `fault:<crash|malformed|skip|hang>@<epoch>`")),
        };
        let mode = match mode {
            "crash" => FaultMode::Crash,
            "malformed" => FaultMode::Malformed,
            "skip" => FaultMode::Skip,
            "hang" => FaultMode::Hang,
            _ => return Err(bad("unknown fault mode")),
        };
        let at_epoch = at
            .parse()
            .map_err(|_| bad("fault epoch is not an integer"))?;
        Ok(Self { mode, at_epoch })
    }
}

pub struct FaultTrainer {
    spec: FaultSpec,
    inner: SurrogateTrainer,
    fired: bool,
}

impl FaultTrainer {
    pub fn new(spec: FaultSpec, size: u32, seed: u64) -> Self {
        Self {
            spec,
            inner: SurrogateTrainer::new(SurrogateSpec::default(), size, seed),
            fired: false,
        }
    }
}

impl Trainer for FaultTrainer {
    fn step(&mut self, epoch: usize) -> Step {
        if self.fired || epoch != self.spec.at_epoch {
            return self.inner.step(epoch);
        }
        self.fired = true;
        match self.spec.mode {
            FaultMode::Crash => Step::Crash(CRASH_EXIT_CODE),
            FaultMode::Malformed => Step::Raw(format!("epoch {epoch}: loss=nan (not json)")),
            FaultMode::Skip => {
                let (train_acc, eval_acc) = self.inner.accuracies(epoch);
                Step::Jump {
                    epoch: epoch + 1,
                    train_acc,
                    eval_acc,
                }
            }
            FaultMode::Hang => Step::Hang,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::protocol::{ProtocolError, StreamValidator};
    use crate::trainers::{drive, DriveOptions, DriveOutcome, StopSignal};

    fn run(task: &str) -> (DriveOutcome, Vec<String>) {
        let mut t = FaultTrainer::new(FaultSpec::from_task(task).unwrap(), 1, 0);
        let mut buf = Vec::new();
        let outcome = drive(
            &mut t,
            &StopSignal::new(),
            &mut buf,
            DriveOptions {
                max_epochs: Some(5),
                ..Default::default()
            },
        )
        .unwrap();
        let lines = String::from_utf8(buf)
            .unwrap()
            .lines()
            .map(String::from)
            .collect();
        (outcome, lines)
    }

    #[test]
    fn crash_stops_without_final() {
        let (outcome, lines) = run("fault:crash@2");
        assert_eq!(outcome, DriveOutcome::Crashed(CRASH_EXIT_CODE));
        assert_eq!(lines.len(), 2);
    }

    #[test]
    fn malformed_and_skip_violate_the_stream() {
        let (_, lines) = run("fault:malformed@1");
        let mut v = StreamValidator::new();
        v.accept(&lines[0]).unwrap();
        assert!(matches!(
            v.accept(&lines[1]),
            Err(ProtocolError::Malformed { .. })
        ));

        let (_, lines) = run("fault:skip@1");
        let mut v = StreamValidator::new();
        v.accept(&lines[0]).unwrap();
        assert!(matches!(
            v.accept(&lines[1]),
            Err(ProtocolError::OutOfOrder {
                expected: 1,
                got: 2,
                ..
            })
        ));
    }

    #[test]
    fn labels() {
        assert_eq!(
            FaultSpec::from_task("fault:hang@0").unwrap(),
            FaultSpec {
                mode: FaultMode::Hang,
                at_epoch: 0
            }
        );
        for bad in [
            "fault",
            "fault:crash",
            "fault:explode@1",
            "fault:crash@x",
            "crash@1",
        ] {
            assert!(FaultSpec::from_task(bad).is_err(), "{bad}");
        }
    }
}
