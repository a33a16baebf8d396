use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use effmeter_core::orchestrator::config::{
    has_errors, hex_sha256, Diagnostic, Level, OvertrainingConfig,
};
use effmeter_core::orchestrator::{
    read_ledger, run_grid, summarize, BuiltinLaunch, ExperimentConfig, GridOptions, LoadedConfig,
    RunLedgerEntry, RunStatus, LEDGER_FILE,
};
use effmeter_core::report::{
    format_sci, load_fixture_dir, write_bundle, EfficiencyReport, ManifestInfo,
};
use effmeter_core::trainers::{run_stdio, DriveOptions};

/// Measure how efficiently neural architectures turn energy into accuracy.
#[derive(Debug, Parser)]
#[command(name = "effmeter", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Override the output directory of the experiment.
    #[arg(long, global = true, env = "EFFMETER_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    /// Override the experiment seed.
    #[arg(long, global = true, env = "EFFMETER_SEED")]
    seed: Option<u64>,
    /// Force the virtual clock on (trace-replay or constant telemetry only).
    #[arg(long, global = true, env = "EFFMETER_DETERMINISTIC")]
    deterministic: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment grid, append to its run ledger and write the report bundle.
    Run {
        config: PathBuf,
        /// Continue an existing ledger, skipping cells that already completed.
        #[arg(long)]
        resume: bool,
        /// Run builtin trainers on threads instead of child processes.
        #[arg(long)]
        in_process: bool,
        /// Fail a run whose trainer prints nothing for this long.
        #[arg(long, value_name = "MS")]
        idle_timeout_ms: Option<u64>,
        /// Where to write the report bundle (default: <output_dir>/report).
        #[arg(long)]
        report_dir: Option<PathBuf>,
    },
    /// Rebuild the report bundle from a run ledger or a directory of result tables.
    Recompute {
        /// A ledger file, an output directory holding ledger.jsonl, or a fixture directory.
        path: PathBuf,
        /// Bundle directory (default: <dir>/report for ledgers, ./effmeter-report for fixtures).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Take the overtraining horizons and rule from this experiment config.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Check a config file and probe its telemetry sources and trainers.
    Validate {
        config: PathBuf,
        /// Skip opening sources and resolving trainer programs.
        #[arg(long)]
        no_probe: bool,
    },
    /// Run a builtin trainer speaking the harness protocol on stdio.
    #[command(hide = true)]
    Trainer {
        name: String,
        #[arg(long)]
        size: u32,
        #[arg(long)]
        task: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, env = "EFFMETER_TRAINER_EPOCH_MS", default_value_t = 0)]
        epoch_ms: u64,
        #[arg(long)]
        max_epochs: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run {
            ref config,
            resume,
            in_process,
            idle_timeout_ms,
            ref report_dir,
        } => run(
            &cli.global,
            config,
            resume,
            in_process,
            idle_timeout_ms,
            report_dir.as_deref(),
        ),
        Command::Recompute {
            ref path,
            ref out,
            ref config,
        } => recompute(path, out.as_deref(), config.as_deref()),
        Command::Validate {
            ref config,
            no_probe,
        } => validate(&cli.global, config, no_probe),
        Command::Trainer {
            name,
            size,
            task,
            seed,
            epoch_ms,
            max_epochs,
        } => {
            let options = DriveOptions {
                epoch_delay: Duration::from_millis(epoch_ms),
                max_epochs,
            };
            let code = run_stdio(&name, size, &task, seed, options);
            Ok(ExitCode::from(code.clamp(0, 255) as u8))
        }
    }
}

fn load(global: &Global, path: &Path) -> Result<LoadedConfig> {
    let mut loaded = ExperimentConfig::load(path)?;
    let cfg = &mut loaded.config;
    if let Some(dir) = &global.output_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if global.deterministic {
        cfg.deterministic.enabled = true;
    }
    Ok(loaded)
}

fn print_diagnostics(diags: &[Diagnostic]) {
    for d in diags {
        eprintln!("{d}");
    }
}

fn check(loaded: &LoadedConfig, probe: bool) -> Result<()> {
    let mut diags = loaded.config.validate();
    if probe && !has_errors(&diags) {
        diags.extend(loaded.config.probe(&loaded.base_dir()));
    }
    print_diagnostics(&diags);
    if has_errors(&diags) {
        let n = diags.iter().filter(|d| d.level == Level::Error).count();
        bail!("{}: {n} configuration error(s)", loaded.path.display());
    }
    Ok(())
}

fn validate(global: &Global, path: &Path, no_probe: bool) -> Result<ExitCode> {
    let loaded = load(global, path)?;
    check(&loaded, !no_probe)?;
    println!("ok: {} cells", loaded.config.cell_count());
    Ok(ExitCode::SUCCESS)
}

fn progress(entry: &RunLedgerEntry, done: usize, total: usize) {
    let detail = match (&entry.status, entry.epochs.last()) {
        (RunStatus::Complete, Some(last)) if last.energy_up_to > 0.0 => {
            format!("eff {}", format_sci(last.eval_acc / last.energy_up_to))
        }
        _ => entry.error.clone().unwrap_or_default(),
    };
    eprintln!(
        "[{done}/{total}] {} {} after {} epochs {detail}",
        entry.run_id,
        entry.status.as_str(),
        entry.epochs.len()
    );
}

fn print_warnings(report: &EfficiencyReport) {
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
}

fn run(
    global: &Global,
    path: &Path,
    resume: bool,
    in_process: bool,
    idle_timeout_ms: Option<u64>,
    report_dir: Option<&Path>,
) -> Result<ExitCode> {
    let loaded = load(global, path)?;
    check(&loaded, true)?;
    let builtin = if in_process {
        BuiltinLaunch::InProcess
    } else {
        BuiltinLaunch::Subprocess {
            program: std::env::current_exe().context("locating the effmeter executable")?,
            args: vec!["trainer".to_string()],
        }
    };
    let options = GridOptions {
        resume,
        builtin,
        idle_timeout: idle_timeout_ms.map(Duration::from_millis),
    };
    let outcome = run_grid(&loaded.config, &loaded.base_dir(), &options, &progress)?;
    if outcome.skipped > 0 {
        eprintln!("skipped {} cells with complete runs", outcome.skipped);
    }

    let entries = read_ledger(&outcome.ledger_path)?;
    let report = summarize(&entries, &loaded.config.overtraining)?;
    let bundle = report_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| loaded.config.output_dir.join("report"));
    let info = ManifestInfo {
        source: "ledger".into(),
        input_sha256: Some(hex_sha256(&std::fs::read(&outcome.ledger_path)?)),
        config_sha256: Some(loaded.sha256.clone()),
    };
    write_bundle(&report, &bundle, &info)?;
    print_warnings(&report);
    println!("ledger: {}", outcome.ledger_path.display());
    println!("report: {}", bundle.display());

    let bad = outcome
        .new_entries
        .iter()
        .filter(|e| e.status != RunStatus::Complete)
        .count();
    if bad > 0 {
        eprintln!(
            "{bad} of {} runs did not complete",
            outcome.new_entries.len()
        );
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn recompute(path: &Path, out: Option<&Path>, config: Option<&Path>) -> Result<ExitCode> {
    let overtraining = match config {
        Some(c) => ExperimentConfig::load(c)?.config.overtraining,
        None => OvertrainingConfig::default(),
    };
    let ledger = if path.is_dir() {
        let candidate = path.join(LEDGER_FILE);
        candidate.is_file().then_some(candidate)
    } else {
        Some(path.to_path_buf())
    };

    let (report, info, default_out) = match ledger {
        Some(ledger) => {
            let bytes = std::fs::read(&ledger).with_context(|| ledger.display().to_string())?;
            let entries = read_ledger(&ledger)?;
            let report = summarize(&entries, &overtraining)?;
            let info = ManifestInfo {
                source: "ledger".into(),
                input_sha256: Some(hex_sha256(&bytes)),
                config_sha256: None,
            };
            let parent = ledger.parent().filter(|p| !p.as_os_str().is_empty());
            let default_out = parent.unwrap_or(Path::new(".")).join("report");
            (report, info, default_out)
        }
        None => {
            let set = load_fixture_dir(path)?;
            if set.files.is_empty() {
                bail!(
                    "{}: no {LEDGER_FILE} and no result tables found",
                    path.display()
                );
            }
            let mut hashed = Vec::new();
            for f in &set.files {
                hashed.extend(f.file_name().unwrap_or_default().as_encoded_bytes());
                hashed.push(0);
                hashed.extend(std::fs::read(f)?);
            }
            let report = set.report(&overtraining.rule())?;
            let info = ManifestInfo {
                source: "fixtures".into(),
                input_sha256: Some(hex_sha256(&hashed)),
                config_sha256: None,
            };
            (report, info, PathBuf::from("effmeter-report"))
        }
    };
    let out = out.map(Path::to_path_buf).unwrap_or(default_out);
    write_bundle(&report, &out, &info)?;
    print_warnings(&report);
    println!("report: {}", out.display());
    Ok(ExitCode::SUCCESS)
}
