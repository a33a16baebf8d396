//! Experiment configuration (TOML) and its static validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::criteria::{StoppingCriterion, StoppingRule, DEFAULT_SAFETY_CAP};
use crate::metrics::OvertrainingRule;
use crate::telemetry::{open_source, SourceConfig, TelemetrySourceConfig};
use crate::trainers::{build_trainer, BUILTIN_TRAINERS};

/// How to launch the trainer for one architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerSpec {
    pub architecture: String,
    /// One of the builtin trainers (`surrogate`, `tinynet`, `fault`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    /// External program and leading arguments; `--size/--task/--seed` are appended.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub env: BTreeMap<String, String>,
}

fn default_safety_cap() -> usize {
    DEFAULT_SAFETY_CAP
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionConfig {
    #[serde(flatten)]
    pub criterion: StoppingCriterion,
    /// Defaults to the criterion kind, e.g. `early_stopping`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default = "default_safety_cap")]
    pub safety_cap: usize,
    /// Whether the criterion takes part in the per-architecture mean.
    #[serde(default = "yes")]
    pub include_in_overall: bool,
}

impl CriterionConfig {
    pub fn new(criterion: StoppingCriterion) -> Self {
        Self {
            criterion,
            label: None,
            safety_cap: DEFAULT_SAFETY_CAP,
            include_in_overall: true,
        }
    }

    pub fn label(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| self.criterion.name().to_string())
    }

    pub fn rule(&self) -> StoppingRule {
        StoppingRule::new(self.criterion).with_safety_cap(Some(self.safety_cap))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub label: String,
    /// Per-architecture value passed as `--task`; the label is used otherwise.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub trainer_args: BTreeMap<String, String>,
}

impl TaskSpec {
    pub fn new(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            trainer_args: BTreeMap::new(),
        }
    }

    pub fn arg_for(&self, architecture: &str) -> &str {
        self.trainer_args
            .get(architecture)
            .map_or(self.label.as_str(), String::as_str)
    }
}

fn default_epoch_ms() -> u64 {
    100
}

/// Virtual-clock pacing: epoch `e` of a size-`j` model ends at
/// `(e + 1) * epoch_ms` (times `j` when `scale_with_size`), and every source
/// is polled up to that instant before the epoch is marked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeterministicConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_epoch_ms")]
    pub epoch_ms: u64,
    #[serde(default)]
    pub scale_with_size: bool,
}

impl Default for DeterministicConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            epoch_ms: default_epoch_ms(),
            scale_with_size: false,
        }
    }
}

impl DeterministicConfig {
    pub fn epoch_end_ms(&self, epoch: usize, size: u32) -> u64 {
        let per_epoch = if self.scale_with_size {
            self.epoch_ms * u64::from(size)
        } else {
            self.epoch_ms
        };
        (epoch as u64 + 1) * per_epoch
    }
}

fn default_grace_ms() -> u64 {
    5000
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupervisionConfig {
    /// Time a trainer gets to exit after the stop command.
    #[serde(default = "default_grace_ms")]
    pub grace_ms: u64,
    /// Cells run concurrently; above 1 only with non-physical sources.
    #[serde(default = "one")]
    pub parallel_cells: usize,
}

impl Default for SupervisionConfig {
    fn default() -> Self {
        Self {
            grace_ms: default_grace_ms(),
            parallel_cells: 1,
        }
    }
}

fn default_short() -> usize {
    50
}

fn default_long() -> usize {
    100
}

fn default_decimals() -> u32 {
    OvertrainingRule::default().decimals
}

fn default_fraction() -> f64 {
    OvertrainingRule::default().comparable_fraction
}

/// Which fixed-epoch horizons are compared for overtraining, and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OvertrainingConfig {
    #[serde(default = "default_short")]
    pub short_epochs: usize,
    #[serde(default = "default_long")]
    pub long_epochs: usize,
    #[serde(default = "default_decimals")]
    pub decimals: u32,
    #[serde(default = "default_fraction")]
    pub comparable_fraction: f64,
}

impl Default for OvertrainingConfig {
    fn default() -> Self {
        Self {
            short_epochs: default_short(),
            long_epochs: default_long(),
            decimals: default_decimals(),
            comparable_fraction: default_fraction(),
        }
    }
}

impl OvertrainingConfig {
    pub fn rule(&self) -> OvertrainingRule {
        OvertrainingRule {
            decimals: self.decimals,
            comparable_fraction: self.comparable_fraction,
        }
    }
}

fn default_sizes() -> Vec<u32> {
    (1..=5).collect()
}

fn default_criteria() -> Vec<CriterionConfig> {
    StoppingCriterion::standard_suite()
        .into_iter()
        .map(CriterionConfig::new)
        .collect()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("effmeter-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub architectures: Vec<TrainerSpec>,
    #[serde(default = "default_sizes")]
    pub sizes: Vec<u32>,
    #[serde(default = "default_criteria")]
    pub criteria: Vec<CriterionConfig>,
    pub tasks: Vec<TaskSpec>,
    pub telemetry: Vec<TelemetrySourceConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub deterministic: DeterministicConfig,
    #[serde(default)]
    pub supervision: SupervisionConfig,
    #[serde(default)]
    pub overtraining: OvertrainingConfig,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Warning,
    Error,
}

/// One validation finding, addressed by a dotted field path such as
/// `criteria[2].budget_watt_sum`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub level: Level,
    pub field: String,
    pub message: String,
}

impl Diagnostic {
    pub fn error(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            level: Level::Error,
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn warning(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            level: Level::Warning,
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let level = match self.level {
            Level::Error => "error",
            Level::Warning => "warning",
        };
        write!(f, "{level}: {}: {}", self.field, self.message)
    }
}

pub fn has_errors(diagnostics: &[Diagnostic]) -> bool {
    diagnostics.iter().any(|d| d.level == Level::Error)
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before
        .rfind('\n')
        .map_or(before.len(), |i| before.len() - i - 1)
        + 1;
    (line, column)
}

/// A parsed config together with where it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub path: PathBuf,
    /// Hex SHA-256 of the file bytes.
    pub sha256: String,
}

impl ExperimentConfig {
    /// Parses TOML text. Relative trace, counter and output paths are resolved
    /// against `base_dir`.
    pub fn from_toml_str(text: &str, path: &Path, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut config: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
            ConfigError::Parse {
                path: path.to_path_buf(),
                line,
                column,
                message: e.message().trim().to_string(),
            }
        })?;
        config.resolve_paths(base_dir);
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<LoadedConfig, ConfigError> {
        let bytes = fs::read(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let text = String::from_utf8_lossy(&bytes);
        let config = Self::from_toml_str(&text, path, &parent_dir(path))?;
        Ok(LoadedConfig {
            config,
            path: path.to_path_buf(),
            sha256: hex_sha256(&bytes),
        })
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for t in &mut self.telemetry {
            match &mut t.source {
                SourceConfig::TraceReplay { path, .. } => fix(path),
                SourceConfig::OsCpuCounter { path: Some(p), .. }
                | SourceConfig::GpuCounter { path: Some(p), .. } => fix(p),
                _ => {}
            }
        }
    }

    pub fn cell_count(&self) -> usize {
        self.tasks.len() * self.architectures.len() * self.criteria.len() * self.sizes.len()
    }

    /// Static checks that need no I/O.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        let mut non_empty = |field: &str, len: usize| {
            if len == 0 {
                out.push(Diagnostic::error(field, "must not be empty"));
            }
        };
        non_empty("architectures", self.architectures.len());
        non_empty("sizes", self.sizes.len());
        non_empty("criteria", self.criteria.len());
        non_empty("tasks", self.tasks.len());
        non_empty("telemetry", self.telemetry.len());

        let mut seen = BTreeSet::new();
        for (i, a) in self.architectures.iter().enumerate() {
            let field = format!("architectures[{i}]");
            if a.architecture.trim().is_empty() {
                out.push(Diagnostic::error(
                    format!("{field}.architecture"),
                    "must not be empty",
                ));
            }
            if !seen.insert(a.architecture.as_str()) {
                out.push(Diagnostic::error(
                    format!("{field}.architecture"),
                    format!("duplicate architecture `{}`", a.architecture),
                ));
            }
            match (&a.builtin, &a.command) {
                (Some(_), Some(_)) => out.push(Diagnostic::error(
                    field,
                    "set exactly one of `builtin` or `command`, not both",
                )),
                (None, None) => out.push(Diagnostic::error(
                    field,
                    "set one of `builtin` or `command`",
                )),
                (Some(b), None) if !BUILTIN_TRAINERS.contains(&b.as_str()) => {
                    out.push(Diagnostic::error(
                        format!("{field}.builtin"),
                        format!(
                            "unknown builtin `{b}` (expected one of {})",
                            BUILTIN_TRAINERS.join(", ")
                        ),
                    ))
                }
                (None, Some(c)) if c.is_empty() || c[0].trim().is_empty() => out.push(
                    Diagnostic::error(format!("{field}.command"), "must name a program"),
                ),
                _ => {}
            }
        }

        let mut sizes = BTreeSet::new();
        for (i, s) in self.sizes.iter().enumerate() {
            if *s == 0 {
                out.push(Diagnostic::error(
                    format!("sizes[{i}]"),
                    "size multipliers must be >= 1",
                ));
            }
            if !sizes.insert(*s) {
                out.push(Diagnostic::error(
                    format!("sizes[{i}]"),
                    format!("duplicate size {s}"),
                ));
            }
        }

        let mut labels = BTreeSet::new();
        for (i, c) in self.criteria.iter().enumerate() {
            let field = format!("criteria[{i}]");
            if let Err(e) = c.rule().validate() {
                out.push(Diagnostic::error(&field, e.to_string()));
            }
            let label = c.label();
            if !labels.insert(label.clone()) {
                out.push(Diagnostic::error(
                    format!("{field}.label"),
                    format!("duplicate criterion name `{label}`; set distinct `label`s"),
                ));
            }
        }

        let mut tasks = BTreeSet::new();
        for (i, t) in self.tasks.iter().enumerate() {
            let field = format!("tasks[{i}]");
            if !tasks.insert(t.label.as_str()) {
                out.push(Diagnostic::error(
                    format!("{field}.label"),
                    format!("duplicate task `{}`", t.label),
                ));
            }
            for arch in t.trainer_args.keys() {
                if !self.architectures.iter().any(|a| &a.architecture == arch) {
                    out.push(Diagnostic::warning(
                        format!("{field}.trainer_args.{arch}"),
                        "no architecture with this name",
                    ));
                }
            }
        }

        for (i, t) in self.telemetry.iter().enumerate() {
            if let Err(e) = t.validate() {
                out.push(Diagnostic::error(format!("telemetry[{i}]"), e.to_string()));
            }
            if self.deterministic.enabled && t.is_physical() {
                out.push(Diagnostic::error(
                    format!("telemetry[{i}].kind"),
                    format!(
                        "deterministic mode needs trace_replay or constant sources, not {}",
                        t.kind_name()
                    ),
                ));
            }
            if self.supervision.parallel_cells > 1 && t.is_physical() {
                out.push(Diagnostic::error(
                    "supervision.parallel_cells",
                    format!(
                        "parallel cells would share the physical counter telemetry[{i}] ({})",
                        t.kind_name()
                    ),
                ));
            }
        }
        if self.deterministic.enabled && self.deterministic.epoch_ms == 0 {
            out.push(Diagnostic::error("deterministic.epoch_ms", "must be >= 1"));
        }
        if self.supervision.parallel_cells == 0 {
            out.push(Diagnostic::error(
                "supervision.parallel_cells",
                "must be >= 1",
            ));
        }
        let ot = &self.overtraining;
        if ot.short_epochs == 0 || ot.short_epochs >= ot.long_epochs {
            out.push(Diagnostic::error(
                "overtraining",
                "need 1 <= short_epochs < long_epochs",
            ));
        }
        if !(ot.comparable_fraction >= 0.0 && ot.comparable_fraction.is_finite()) {
            out.push(Diagnostic::error(
                "overtraining.comparable_fraction",
                "must be >= 0",
            ));
        }
        out
    }

    /// Checks with side-effect-free I/O: opens every telemetry source once and
    /// dry-runs trainer construction (builtins) or program lookup (commands).
    pub fn probe(&self, base_dir: &Path) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        for (i, t) in self.telemetry.iter().enumerate() {
            if t.validate().is_err() {
                continue;
            }
            if let Err(e) = open_source(t) {
                out.push(Diagnostic::error(format!("telemetry[{i}]"), e.to_string()));
            }
        }
        for (i, a) in self.architectures.iter().enumerate() {
            match (&a.builtin, &a.command) {
                (Some(name), None) if BUILTIN_TRAINERS.contains(&name.as_str()) => {
                    for task in &self.tasks {
                        for &size in self.sizes.iter().filter(|s| **s > 0) {
                            if let Err(e) =
                                build_trainer(name, size, task.arg_for(&a.architecture), self.seed)
                            {
                                out.push(Diagnostic::error(
                                    format!("tasks.{}.trainer_args.{}", task.label, a.architecture),
                                    e.to_string(),
                                ));
                                break;
                            }
                        }
                    }
                }
                (None, Some(cmd))
                    if !cmd.is_empty() && resolve_program(&cmd[0], base_dir).is_none() =>
                {
                    out.push(Diagnostic::error(
                        format!("architectures[{i}].command"),
                        format!("program `{}` not found", cmd[0]),
                    ));
                }
                _ => {}
            }
        }
        out
    }
}

/// Finds `program` the way a child process launch would: paths with a
/// separator are taken relative to `base_dir`, bare names are searched on PATH.
fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

impl LoadedConfig {
    /// Directory relative paths in the file are resolved against.
    pub fn base_dir(&self) -> PathBuf {
        parent_dir(&self.path)
    }
}

pub fn resolve_program(program: &str, base_dir: &Path) -> Option<PathBuf> {
    let p = Path::new(program);
    if p.components().count() > 1 || p.is_absolute() {
        let full = if p.is_absolute() {
            p.to_path_buf()
        } else {
            base_dir.join(p)
        };
        return full.is_file().then_some(full);
    }
    std::env::var_os("PATH").and_then(|paths| {
        std::env::split_paths(&paths)
            .map(|d| d.join(program))
            .find(|c| c.is_file())
    })
}

pub fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
