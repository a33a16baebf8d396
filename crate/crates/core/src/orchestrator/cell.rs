//! Runs one grid cell: launches the trainer, samples power, marks epochs,
//! applies the stopping rule, and seals a ledger entry.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::config::{resolve_program, ExperimentConfig, TrainerSpec};
use super::protocol::{HarnessCommand, StreamValidator, TrainerEvent};
use super::runlog::{
    cell_id, run_id, CellSnapshot, EnergySummary, RunLedgerEntry, RunStatus, Runtime,
    SCHEMA_VERSION,
};
use crate::criteria::{CriterionState, Decision, EpochObservation, StoppingRule};
use crate::telemetry::{open_source, spawn_pump, PowerSource, PumpEvent, PumpHandle};
use crate::trainers::{build_trainer, drive, DriveOptions, DriveOutcome, StopSignal};
use crate::{EnergyLedger, EpochRecord, PowerSample, StopReason, HARNESS_VERSION};

/// Environment variable read by builtin trainers: pause after each epoch (ms).
pub const EPOCH_DELAY_ENV: &str = "EFFMETER_TRAINER_EPOCH_MS";

const TICK: Duration = Duration::from_millis(50);

/// How builtin trainers are started.
#[derive(Debug, Clone, PartialEq)]
pub enum BuiltinLaunch {
    /// On a thread of this process, talking through an in-memory pipe.
    /// A trainer that ignores the stop command cannot be killed in this mode.
    InProcess,
    /// As `<program> <args..> <builtin> --size .. --task .. --seed ..`.
    Subprocess { program: PathBuf, args: Vec<String> },
}

/// Everything a cell needs besides its coordinates.
#[derive(Debug, Clone)]
pub struct CellContext<'a> {
    pub config: &'a ExperimentConfig,
    /// Working directory of external trainers and base for relative programs.
    pub base_dir: &'a Path,
    pub builtin: &'a BuiltinLaunch,
    /// Where trainer stderr goes; discarded when `None`.
    pub logs_dir: Option<&'a Path>,
    /// Fails a run that produces no stdout line for this long.
    pub idle_timeout: Option<Duration>,
}

/// Indices into the config lists plus the size multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub task: usize,
    pub architecture: usize,
    pub criterion: usize,
    pub size: u32,
}

/// Every cell in execution order: task, architecture, criterion, size.
pub fn enumerate_cells(config: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::with_capacity(config.cell_count());
    for task in 0..config.tasks.len() {
        for architecture in 0..config.architectures.len() {
            for criterion in 0..config.criteria.len() {
                for &size in &config.sizes {
                    out.push(Cell {
                        task,
                        architecture,
                        criterion,
                        size,
                    });
                }
            }
        }
    }
    out
}

impl Cell {
    pub fn id(&self, config: &ExperimentConfig) -> String {
        cell_id(
            &config.tasks[self.task].label,
            &config.architectures[self.architecture].architecture,
            &config.criteria[self.criterion].label(),
            self.size,
        )
    }

    pub fn snapshot(&self, config: &ExperimentConfig) -> CellSnapshot {
        let task = &config.tasks[self.task];
        let trainer = &config.architectures[self.architecture];
        let criterion = &config.criteria[self.criterion];
        let det = &config.deterministic;
        CellSnapshot {
            task: task.label.clone(),
            task_arg: task.arg_for(&trainer.architecture).to_string(),
            trainer: trainer.clone(),
            size_multiplier: self.size,
            criterion_label: criterion.label(),
            criterion: criterion.criterion,
            safety_cap: criterion.safety_cap,
            include_in_overall: criterion.include_in_overall,
            seed: config.seed,
            telemetry: config.telemetry.clone(),
            virtual_epoch_ms: det.enabled.then(|| det.epoch_end_ms(0, self.size)),
        }
    }
}

enum Msg {
    Line(String),
    BadLine(String),
    Closed,
    Samples {
        interval_ms: u64,
        samples: Vec<PowerSample>,
    },
    SourceFailed(String),
    SourceExhausted,
}

enum TrainerHandle {
    Process {
        child: Child,
        stdin: Option<ChildStdin>,
    },
    Thread {
        stop: StopSignal,
        join: Option<JoinHandle<i32>>,
    },
}

impl TrainerHandle {
    fn request_stop(&mut self) {
        match self {
            TrainerHandle::Process { stdin, .. } => {
                if let Some(mut pipe) = stdin.take() {
                    let _ = writeln!(pipe, "{}", HarnessCommand::Stop.to_line());
                    let _ = pipe.flush();
                    // dropping closes stdin, a second hint for trainers that watch EOF
                }
            }
            TrainerHandle::Thread { stop, .. } => stop.request(),
        }
    }

    /// `Some(exit code)` once the trainer has exited.
    fn try_exit(&mut self) -> Option<Option<i32>> {
        match self {
            TrainerHandle::Process { child, .. } => {
                child.try_wait().ok().flatten().map(|s| s.code())
            }
            TrainerHandle::Thread { join, .. } => {
                if join.as_ref().is_some_and(|j| j.is_finished()) {
                    Some(join.take().and_then(|j| j.join().ok()))
                } else if join.is_none() {
                    Some(None)
                } else {
                    None
                }
            }
        }
    }

    /// Returns false when the trainer cannot be killed (in-process threads).
    fn kill(&mut self) -> bool {
        match self {
            TrainerHandle::Process { child, stdin } => {
                stdin.take();
                let _ = child.kill();
                let _ = child.wait();
                true
            }
            TrainerHandle::Thread { stop, .. } => {
                stop.request();
                false
            }
        }
    }
}

fn epoch_delay(spec: &TrainerSpec) -> Duration {
    spec.env
        .get(EPOCH_DELAY_ENV)
        .and_then(|v| v.parse().ok())
        .map_or(Duration::ZERO, Duration::from_millis)
}

fn launch(
    ctx: &CellContext<'_>,
    snap: &CellSnapshot,
    stderr: Option<&Path>,
) -> io::Result<(TrainerHandle, Box<dyn Read + Send>)> {
    let spec = &snap.trainer;
    let protocol_args = [
        "--size".to_string(),
        snap.size_multiplier.to_string(),
        "--task".to_string(),
        snap.task_arg.clone(),
        "--seed".to_string(),
        snap.seed.to_string(),
    ];
    let (program, mut args): (PathBuf, Vec<String>) = match (&spec.builtin, &spec.command) {
        (Some(name), _) => match ctx.builtin {
            BuiltinLaunch::InProcess => {
                let mut trainer =
                    build_trainer(name, snap.size_multiplier, &snap.task_arg, snap.seed)
                        .map_err(io::Error::other)?;
                let (reader, mut writer) = io::pipe()?;
                let stop = StopSignal::new();
                let signal = stop.clone();
                let options = DriveOptions {
                    epoch_delay: epoch_delay(spec),
                    max_epochs: None,
                };
                let join = thread::spawn(move || {
                    let outcome = drive(trainer.as_mut(), &signal, &mut writer, options);
                    match outcome {
                        Ok(DriveOutcome::Crashed(code)) => code,
                        _ => 0,
                    }
                });
                return Ok((
                    TrainerHandle::Thread {
                        stop,
                        join: Some(join),
                    },
                    Box::new(reader),
                ));
            }
            BuiltinLaunch::Subprocess { program, args } => {
                let mut a = args.clone();
                a.push(name.clone());
                (program.clone(), a)
            }
        },
        (None, Some(cmd)) if !cmd.is_empty() => {
            let program =
                resolve_program(&cmd[0], ctx.base_dir).unwrap_or_else(|| PathBuf::from(&cmd[0]));
            (program, cmd[1..].to_vec())
        }
        _ => {
            return Err(io::Error::other(
                "trainer spec has neither builtin nor command",
            ))
        }
    };
    args.extend(protocol_args);
    let stderr = match stderr {
        Some(p) => Stdio::from(File::create(p)?),
        None => Stdio::null(),
    };
    let mut child = Command::new(&program)
        .args(&args)
        .current_dir(ctx.base_dir)
        .envs(&spec.env)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(stderr)
        .spawn()
        .map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", program.display())))?;
    let stdout = child.stdout.take().expect("stdout is piped");
    let stdin = child.stdin.take();
    Ok((TrainerHandle::Process { child, stdin }, Box::new(stdout)))
}

fn spawn_reader(stdout: Box<dyn Read + Send>, tx: Sender<Msg>) {
    thread::spawn(move || {
        let mut reader = BufReader::new(stdout);
        let mut buf = Vec::new();
        loop {
            buf.clear();
            match reader.read_until(b'\n', &mut buf) {
                Ok(0) | Err(_) => break,
                Ok(_) => {
                    while matches!(buf.last(), Some(b'\n' | b'\r')) {
                        buf.pop();
                    }
                    let msg = match String::from_utf8(buf.clone()) {
                        Ok(s) => Msg::Line(s),
                        Err(_) => Msg::BadLine(String::from_utf8_lossy(&buf).into_owned()),
                    };
                    if tx.send(msg).is_err() {
                        return;
                    }
                }
            }
        }
        let _ = tx.send(Msg::Closed);
    });
}

enum Flow {
    Continue,
    SendStop,
    Abort,
}

/// Sampling sources polled synchronously on the virtual clock.
struct VirtualSource {
    source: Box<dyn PowerSource>,
    dead: bool,
}

struct Supervisor {
    rule: StoppingRule,
    state: CriterionState,
    validator: StreamValidator,
    ledger: EnergyLedger,
    joules: f64,
    joules_at_mark: f64,
    epochs: Vec<EpochRecord>,
    stop: Option<StopReason>,
    samples_at_stop: usize,
    failure: Option<String>,
    degraded: Vec<String>,
    trailing: usize,
    size: u32,
    virtual_sources: Option<Vec<VirtualSource>>,
    virtual_clock: super::config::DeterministicConfig,
}

impl Supervisor {
    fn record(&mut self, interval_ms: u64, samples: Vec<PowerSample>) {
        for s in samples {
            let watts = s.watts;
            match self.ledger.append(s) {
                Ok(()) => self.joules += watts * interval_ms as f64 / 1000.0,
                Err(e) => {
                    self.degrade(format!("telemetry sample rejected: {e}"));
                }
            }
        }
    }

    fn degrade(&mut self, why: String) {
        if !self.degraded.contains(&why) {
            self.degraded.push(why);
        }
    }

    fn advance_virtual_clock(&mut self, epoch: usize) {
        let now = self.virtual_clock.epoch_end_ms(epoch, self.size);
        let Some(sources) = self.virtual_sources.as_mut() else {
            return;
        };
        let mut batches = Vec::new();
        let mut problems = Vec::new();
        for vs in sources.iter_mut().filter(|v| !v.dead) {
            match vs.source.poll(now) {
                Ok(samples) => batches.push((vs.source.interval_ms(), samples)),
                Err(e) => {
                    vs.dead = true;
                    problems.push(format!(
                        "telemetry source failed: {}: {e}",
                        vs.source.describe()
                    ));
                }
            }
            if vs.source.is_exhausted() {
                vs.dead = true;
                problems.push(format!(
                    "telemetry source ran out of samples by {now} ms: {}",
                    vs.source.describe()
                ));
            }
        }
        for (interval, samples) in batches {
            self.record(interval, samples);
        }
        for p in problems {
            self.degrade(p);
        }
    }

    fn handle_line(&mut self, line: &str) -> Flow {
        let event = match self.validator.accept(line) {
            Ok(e) => e,
            Err(e) if self.stop.is_some() => {
                self.degrade(format!("protocol violation after stop: {e}"));
                return Flow::Continue;
            }
            Err(e) => {
                self.failure = Some(format!("protocol violation: {e}"));
                return Flow::Abort;
            }
        };
        match event {
            TrainerEvent::EpochEnd {
                epoch,
                train_acc,
                eval_acc,
            } => {
                if self.stop.is_some() {
                    self.trailing += 1;
                    return Flow::Continue;
                }
                self.advance_virtual_clock(epoch);
                let energy = match self
                    .ledger
                    .mark_epoch(epoch)
                    .and_then(|_| self.ledger.energy_up_to(epoch))
                {
                    Ok(e) => e,
                    Err(e) => {
                        self.failure = Some(format!("energy ledger: {e}"));
                        return Flow::Abort;
                    }
                };
                self.joules_at_mark = self.joules;
                self.epochs.push(EpochRecord {
                    epoch,
                    train_acc,
                    eval_acc,
                    energy_up_to: energy,
                });
                let obs = EpochObservation::new(epoch, train_acc, eval_acc, energy);
                match self.rule.observe(&mut self.state, &obs) {
                    Ok(Decision::Continue) => Flow::Continue,
                    Ok(Decision::Stop(reason)) => {
                        self.stop = Some(reason);
                        self.samples_at_stop = self.ledger.len();
                        Flow::SendStop
                    }
                    Err(e) => {
                        self.failure = Some(format!("stopping rule: {e}"));
                        Flow::Abort
                    }
                }
            }
            TrainerEvent::Log { .. } => Flow::Continue,
            TrainerEvent::Final { .. } if self.stop.is_none() => {
                self.failure = Some("trainer sent its final event before the stop decision".into());
                Flow::Abort
            }
            TrainerEvent::Final { .. } => Flow::Continue,
        }
    }
}

fn log_name(run_id: &str) -> String {
    let safe: String = run_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{safe}.stderr")
}

/// Runs one cell to completion and returns its sealed ledger entry. Never
/// panics on trainer or telemetry misbehaviour; those become the entry status.
pub fn run_cell(ctx: &CellContext<'_>, cell: &Cell, attempt: u32) -> RunLedgerEntry {
    let config = ctx.config;
    let started_at = chrono::Utc::now().to_rfc3339();
    let wall = Instant::now();
    let snap = cell.snapshot(config);
    let cid = cell.id(config);
    let rid = run_id(&cid, attempt);
    let det = config.deterministic.clone();
    let grace = Duration::from_millis(config.supervision.grace_ms);

    let mut notes = Vec::new();
    if det.enabled {
        notes.push(format!(
            "virtual clock: epoch e ends at (e+1)*{} ms",
            det.epoch_end_ms(0, cell.size)
        ));
    } else {
        notes
            .push("sampling starts before trainer launch; epoch 0 energy includes start-up".into());
    }

    let mut sup = Supervisor {
        rule: config.criteria[cell.criterion].rule(),
        state: CriterionState::default(),
        validator: StreamValidator::new(),
        ledger: EnergyLedger::new(),
        joules: 0.0,
        joules_at_mark: 0.0,
        epochs: Vec::new(),
        stop: None,
        samples_at_stop: 0,
        failure: None,
        degraded: Vec::new(),
        trailing: 0,
        size: cell.size,
        virtual_sources: None,
        virtual_clock: det.clone(),
    };

    let (tx, rx) = mpsc::channel::<Msg>();
    let mut pumps: Vec<PumpHandle> = Vec::new();
    let mut exit_code = None;
    let clock_start = Instant::now();

    let opened: Result<Vec<Box<dyn PowerSource>>, String> = config
        .telemetry
        .iter()
        .map(|t| open_source(t).map_err(|e| format!("telemetry: {e}")))
        .collect();
    match opened {
        Err(e) => sup.failure = Some(e),
        Ok(sources) if det.enabled => {
            sup.virtual_sources = Some(
                sources
                    .into_iter()
                    .map(|source| VirtualSource {
                        source,
                        dead: false,
                    })
                    .collect(),
            );
        }
        Ok(sources) => {
            for source in sources {
                let interval = source.interval_ms();
                let tx = tx.clone();
                pumps.push(spawn_pump(source, clock_start, move |ev| {
                    let msg = match ev {
                        PumpEvent::Samples(samples) => Msg::Samples {
                            interval_ms: interval,
                            samples,
                        },
                        PumpEvent::Failed(m) => Msg::SourceFailed(m),
                        PumpEvent::Exhausted => Msg::SourceExhausted,
                    };
                    tx.send(msg).is_ok()
                }));
            }
        }
    }

    let stderr_path = ctx.logs_dir.map(|d| d.join(log_name(&rid)));
    let mut killed_after_grace = false;
    if sup.failure.is_none() {
        match launch(ctx, &snap, stderr_path.as_deref()) {
            Err(e) => sup.failure = Some(format!("failed to launch trainer: {e}")),
            Ok((mut handle, stdout)) => {
                spawn_reader(stdout, tx.clone());
                let mut stop_sent_at: Option<Instant> = None;
                let mut last_line = Instant::now();
                let mut abort = false;
                loop {
                    match rx.recv_timeout(TICK) {
                        Ok(Msg::Line(line)) => {
                            last_line = Instant::now();
                            match sup.handle_line(&line) {
                                Flow::Continue => {}
                                Flow::SendStop => {
                                    handle.request_stop();
                                    stop_sent_at = Some(Instant::now());
                                }
                                Flow::Abort => {
                                    abort = true;
                                    break;
                                }
                            }
                        }
                        Ok(Msg::BadLine(line)) => {
                            let why =
                                format!("protocol violation: stdout line is not UTF-8: {line:?}");
                            if sup.stop.is_some() {
                                sup.degrade(why);
                            } else {
                                sup.failure = Some(why);
                                abort = true;
                                break;
                            }
                        }
                        Ok(Msg::Closed) => break,
                        Ok(Msg::Samples {
                            interval_ms,
                            samples,
                        }) => sup.record(interval_ms, samples),
                        Ok(Msg::SourceFailed(m)) => {
                            sup.degrade(format!("telemetry source failed: {m}"))
                        }
                        Ok(Msg::SourceExhausted) => {
                            sup.degrade("telemetry source ran out of samples".into())
                        }
                        Err(RecvTimeoutError::Timeout) => {}
                        Err(RecvTimeoutError::Disconnected) => break,
                    }
                    if stop_sent_at.is_some_and(|t| t.elapsed() > grace) {
                        killed_after_grace = true;
                        break;
                    }
                    if stop_sent_at.is_none()
                        && ctx
                            .idle_timeout
                            .is_some_and(|limit| last_line.elapsed() > limit)
                    {
                        sup.failure = Some(format!(
                            "no trainer output for {} ms",
                            ctx.idle_timeout.unwrap().as_millis()
                        ));
                        abort = true;
                        break;
                    }
                }

                if abort || killed_after_grace {
                    if !handle.kill() {
                        notes
                            .push("in-process trainer could not be killed and was detached".into());
                    }
                    exit_code = handle.try_exit().flatten();
                } else {
                    // stdout closed: give the process the grace period to exit
                    let deadline = Instant::now() + grace;
                    loop {
                        if let Some(code) = handle.try_exit() {
                            exit_code = code;
                            break;
                        }
                        if Instant::now() > deadline {
                            killed_after_grace = true;
                            handle.kill();
                            break;
                        }
                        thread::sleep(Duration::from_millis(5));
                    }
                }
            }
        }
    }

    drop(pumps);
    drop(tx);
    while let Ok(msg) = rx.try_recv() {
        if let Msg::Samples {
            interval_ms,
            samples,
        } = msg
        {
            sup.record(interval_ms, samples);
        }
    }

    if killed_after_grace {
        sup.degrade(format!(
            "trainer did not exit within {} ms of the stop command and was killed",
            grace.as_millis()
        ));
    }
    let (status, error) = match (&sup.failure, &sup.stop) {
        (Some(f), _) => (RunStatus::Failed, Some(f.clone())),
        (None, None) => (
            RunStatus::Failed,
            Some(match exit_code {
                Some(code) => format!("trainer exited with status {code} before the stop decision"),
                None => "trainer exited before the stop decision".to_string(),
            }),
        ),
        (None, Some(_)) if !sup.degraded.is_empty() => {
            (RunStatus::Degraded, Some(sup.degraded[0].clone()))
        }
        (None, Some(_)) => (RunStatus::Complete, None),
    };
    if let (Some(_), Some(code)) = (&sup.stop, exit_code) {
        if code != 0 {
            notes.push(format!(
                "trainer exited with status {code} after the stop command"
            ));
        }
    }
    notes.extend(sup.degraded.iter().cloned());

    let marked = sup.ledger.last_marked_epoch();
    let watt_sum_at_stop = marked
        .and_then(|e| sup.ledger.energy_up_to(e).ok())
        .unwrap_or(0.0);
    let samples_at_mark = marked
        .and_then(|e| sup.ledger.epoch_marks().get(&e).copied())
        .unwrap_or(0);
    let finished_at = chrono::Utc::now().to_rfc3339();

    RunLedgerEntry {
        schema_version: SCHEMA_VERSION,
        run_id: rid,
        cell_id: cid,
        attempt,
        status,
        error,
        notes,
        cell: snap,
        epochs: sup.epochs,
        stop: sup.stop,
        component_set: sup.ledger.components().clone(),
        energy: EnergySummary {
            samples_at_stop: samples_at_mark,
            watt_sum_at_stop,
            joules_at_stop: sup.joules_at_mark,
        },
        runtime: Runtime {
            started_at,
            finished_at,
            wall_ms: wall.elapsed().as_millis() as u64,
            exit_code,
            trailing_events: sup.trailing,
            samples_after_stop: sup.ledger.len() - samples_at_mark,
            watt_sum_after_stop: sup.ledger.total() - watt_sum_at_stop,
        },
        harness_version: HARNESS_VERSION.to_string(),
    }
}
