//! Acceptance suite. Runs every check and prints one PASS/FAIL line each;
//! exits non-zero if any check fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, ensure, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use effmeter_core::criteria::{
    AccuracyStream, AfterStop, CriterionState, Decision, EpochObservation,
};
use effmeter_core::metrics::{
    efficiency_at_epoch, efficiency_overall, efficiency_per_size, efficiency_ratios,
    ArchTaskEfficiency,
};
use effmeter_core::orchestrator::{read_ledger, RunLedgerEntry, RunStatus};
use effmeter_core::telemetry::Component;
use effmeter_core::{
    EnergyLedger, EpochRecord, PowerSample, RunEfficiency, RunRecord, StopReason,
    StoppingCriterion, StoppingRule,
};

type Check = fn() -> Result<String>;

fn main() {
    let checks: [(&str, Check); 8] = [
        (
            "overall efficiency and ratio regression",
            overall_regression,
        ),
        ("per-criterion means", per_criterion_means),
        ("overtraining reproduction", overtraining_reproduction),
        ("hundred-epoch ratio flip", hundred_epoch_flip),
        ("criterion state-machine properties", criterion_properties),
        ("metric oracle equivalence", metric_oracle),
        ("end-to-end determinism", end_to_end_determinism),
        ("protocol robustness", protocol_robustness),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} ({secs:.2} s)"),
            Err(e) => {
                failed += 1;
                println!("FAIL  {name}: {e:#} ({secs:.2} s)");
            }
        }
    }
    println!("{} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- helpers

fn workspace() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fixture_dir(name: &str) -> PathBuf {
    workspace().join("crates/core/fixtures").join(name)
}

fn effmeter(args: &[&str]) -> Result<(i32, String, Duration)> {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_effmeter"))
        .args(args)
        .output()
        .context("spawning effmeter")?;
    let elapsed = start.elapsed();
    let text = format!(
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    Ok((out.status.code().unwrap_or(-1), text, elapsed))
}

fn recompute(fixtures: &str, out: &Path) -> Result<Duration> {
    let dir = fixture_dir(fixtures);
    let (code, text, elapsed) = effmeter(&[
        "recompute",
        dir.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])?;
    ensure!(code == 0, "recompute exited {code}: {text}");
    Ok(elapsed)
}

/// Rows of a CSV file as header-keyed maps.
fn read_csv(path: &Path) -> Result<Vec<BTreeMap<String, String>>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| path.display().to_string())?;
    let headers = reader.headers()?.clone();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        rows.push(
            headers
                .iter()
                .zip(rec.iter())
                .map(|(h, v)| (h.to_string(), v.to_string()))
                .collect(),
        );
    }
    Ok(rows)
}

fn field<'a>(row: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    row.get(key)
        .map(String::as_str)
        .ok_or_else(|| anyhow!("missing column {key}"))
}

fn num(row: &BTreeMap<String, String>, key: &str) -> Result<f64> {
    let raw = field(row, key)?;
    raw.parse().with_context(|| format!("{key}={raw:?}"))
}

fn find_ratio(rows: &[BTreeMap<String, String>], subject: &str) -> Result<(String, String, f64)> {
    let row = rows
        .iter()
        .find(|r| r.get("subject").map(String::as_str) == Some(subject))
        .ok_or_else(|| anyhow!("no ratio for {subject}"))?;
    Ok((
        field(row, "numerator")?.to_string(),
        field(row, "denominator")?.to_string(),
        num(row, "ratio_full")?,
    ))
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}

/// Half a unit in the second significant digit of `v`.
fn two_sig_half_unit(v: f64) -> f64 {
    0.5 * 10f64.powi(v.abs().log10().floor() as i32 - 1)
}

/// Half a unit in the last printed place of a decimal literal like `0.97e5`.
fn half_ulp(literal: &str) -> f64 {
    let (mantissa, exp) = match literal.split_once('e') {
        Some((m, e)) => (m, e.parse::<i32>().unwrap_or(0)),
        None => (literal, 0),
    };
    let decimals = mantissa.split_once('.').map_or(0, |(_, f)| f.len()) as i32;
    0.5 * 10f64.powi(exp - decimals)
}

// ---------------------------------------------------------------- case-study tables

fn overall_regression() -> Result<String> {
    let tmp = tempfile::tempdir()?;
    let elapsed = recompute("case_study", tmp.path())?;
    ensure!(
        elapsed < Duration::from_secs(1),
        "recompute took {elapsed:?}"
    );

    let overall = read_csv(&tmp.path().join("overall.csv"))?;
    let expected = [
        ("MNIST", "LeNet", 12.86e-6),
        ("MNIST", "BCNN", 2.88e-6),
        ("CIFAR", "LeNet", 7.06e-6),
        ("CIFAR", "BCNN", 1.36e-6),
    ];
    let mut worst: f64 = 0.0;
    for (task, arch, want) in expected {
        let row = overall
            .iter()
            .find(|r| r["task"] == task && r["architecture"] == arch)
            .ok_or_else(|| anyhow!("no overall row for {arch} {task}"))?;
        let got = num(row, "eff_full")?;
        worst = worst.max((got - want).abs());
        ensure!(
            (got - want).abs() <= 0.01e-6,
            "{arch} {task}: {got:e} vs {want:e}"
        );
    }

    let ratios = read_csv(&tmp.path().join("ratios.csv"))?;
    let expected = [
        ("MNIST", "LeNet", "BCNN", 4.46),
        ("CIFAR", "LeNet", "BCNN", 5.18),
        ("LeNet", "MNIST", "CIFAR", 1.82),
        ("BCNN", "MNIST", "CIFAR", 2.11),
    ];
    let mut worst_ratio: f64 = 0.0;
    for (subject, n, d, want) in expected {
        let (num_, den, got) = find_ratio(&ratios, subject)?;
        ensure!(
            (num_.as_str(), den.as_str()) == (n, d),
            "{subject}: {num_}/{den}"
        );
        worst_ratio = worst_ratio.max((got - want).abs());
        ensure!(
            (got - want).abs() <= 0.01,
            "{subject} {n}/{d}: {got:.4} vs {want}"
        );
    }
    Ok(format!(
        "4 overall values within {:.4}e-6, 4 ratios within {worst_ratio:.4}, recompute {} ms",
        worst * 1e6,
        elapsed.as_millis()
    ))
}

fn per_criterion_means() -> Result<String> {
    let dir = fixture_dir("case_study");
    let tmp = tempfile::tempdir()?;
    recompute("case_study", tmp.path())?;
    let bundle = read_csv(&tmp.path().join("per_size.csv"))?;

    // independent means straight from the table rows
    let mut means: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
    let mut round_trips = 0;
    for entry in std::fs::read_dir(&dir)? {
        let path = entry?.path();
        let stem = path.file_stem().unwrap().to_string_lossy().to_string();
        let Some((task, criterion)) = stem.split_once("__") else {
            continue;
        };
        for row in read_csv(&path)? {
            let model = field(&row, "model")?;
            let arch = model.rsplit_once('-').map_or(model, |(a, _)| a).to_string();
            let (acc, watts, eff) = (
                field(&row, "acc")?,
                field(&row, "watt_sum")?,
                field(&row, "eff")?,
            );
            let e: f64 = eff.parse()?;
            means
                .entry((task.to_string(), criterion.to_string(), arch))
                .or_default()
                .push(e);
            if !field(&row, "anomaly")?.is_empty() {
                continue;
            }
            let (a, w): (f64, f64) = (acc.parse()?, watts.parse()?);
            let tol = half_ulp(acc) / a + half_ulp(watts) / w + two_sig_half_unit(e) / e;
            ensure!(
                ((a / w) - e).abs() / e <= tol,
                "{stem} {model}: acc/watt_sum {:e} vs printed eff {e:e}",
                a / w
            );
            round_trips += 1;
        }
    }

    let printed = read_csv(&dir.join("printed_means.csv"))?;
    ensure!(
        printed.len() == 16,
        "expected 16 printed means, found {}",
        printed.len()
    );
    for p in &printed {
        let key = (
            field(p, "task")?.to_string(),
            field(p, "criterion")?.to_string(),
            field(p, "architecture")?.to_string(),
        );
        let want = num(p, "mean")?;
        let values = means
            .get(&key)
            .ok_or_else(|| anyhow!("no rows for {key:?}"))?;
        let oracle = values.iter().sum::<f64>() / values.len() as f64;
        ensure!(
            (oracle - want).abs() <= two_sig_half_unit(want),
            "{key:?}: mean {oracle:e} vs printed {want:e}"
        );
        let row = bundle
            .iter()
            .find(|r| r["task"] == key.0 && r["criterion"] == key.1 && r["architecture"] == key.2)
            .ok_or_else(|| anyhow!("bundle has no per-size row for {key:?}"))?;
        let got = num(row, "eff_full")?;
        ensure!(
            rel_close(got, oracle, 1e-12),
            "{key:?}: bundle {got:e} vs oracle {oracle:e}"
        );
    }
    Ok(format!(
        "16 printed means matched, {round_trips} unflagged rows round-trip from acc/watt_sum"
    ))
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn overtraining_reproduction() -> Result<String> {
    let tmp = tempfile::tempdir()?;
    recompute("case_study", tmp.path())?;
    let got = read_csv(&tmp.path().join("overtraining.csv"))?;
    let printed = read_csv(&fixture_dir("case_study").join("overtraining.csv"))?;
    ensure!(
        got.len() == 20 && printed.len() == 20,
        "expected 20 rows, got {}",
        got.len()
    );
    for (g, p) in got.iter().zip(&printed) {
        let label = format!("{} {}", field(p, "task")?, field(p, "model")?);
        ensure!(
            field(g, "model")? == field(p, "model")?,
            "{label}: row order differs"
        );
        ensure!(
            field(g, "A")? == field(p, "printed_a")?,
            "{label}: A {} vs {}",
            g["A"],
            p["printed_a"]
        );
        ensure!(
            field(g, "B")? == field(p, "printed_b")?,
            "{label}: B {} vs {}",
            g["B"],
            p["printed_b"]
        );
        ensure!(
            field(g, "verdict")? == field(p, "printed_verdict")?,
            "{label}: verdict {}",
            g["verdict"]
        );

        // A and B straight from the raw accuracies
        let (ts, es, tl, el) = (
            num(p, "train_short")?,
            num(p, "test_short")?,
            num(p, "train_long")?,
            num(p, "test_long")?,
        );
        let a = round2(el - es);
        let b = round2((tl - el) - (ts - es));
        ensure!(format!("{a:.2}") == g["A"], "{label}: oracle A {a:.2}");
        ensure!(format!("{b:.2}") == g["B"], "{label}: oracle B {b:.2}");

        let expect_overtrained = !(p["task"] == "CIFAR" && p["model"].starts_with("BCNN"));
        let is_overtrained = g["verdict"] == "overtrained";
        ensure!(
            is_overtrained == expect_overtrained,
            "{label}: verdict {}",
            g["verdict"]
        );
    }
    Ok(
        "20 (A, B) pairs and verdicts exact; MNIST and LeNet-CIFAR overtrained, BCNN-CIFAR not"
            .into(),
    )
}

fn hundred_epoch_flip() -> Result<String> {
    let tmp50 = tempfile::tempdir()?;
    let tmp100 = tempfile::tempdir()?;
    recompute("case_study", tmp50.path())?;
    recompute("hundred_epochs", tmp100.path())?;
    let r50 = read_csv(&tmp50.path().join("ratios.csv"))?;
    let r100 = read_csv(&tmp100.path().join("ratios.csv"))?;

    let (_, _, mnist) = find_ratio(&r100, "MNIST")?;
    let (_, _, cifar) = find_ratio(&r100, "CIFAR")?;
    ensure!((mnist - 3.10).abs() <= 0.01, "MNIST LeNet/BCNN {mnist:.4}");
    ensure!((cifar - 1.09).abs() <= 0.01, "CIFAR LeNet/BCNN {cifar:.4}");
    let (_, _, mnist50) = find_ratio(&r50, "MNIST")?;
    let (_, _, cifar50) = find_ratio(&r50, "CIFAR")?;
    ensure!(
        mnist50 < cifar50 && mnist > cifar,
        "no flip: aggregate {mnist50:.2}/{cifar50:.2}, 100 epochs {mnist:.2}/{cifar:.2}"
    );
    Ok(format!(
        "LeNet/BCNN MNIST {mnist:.3} vs CIFAR {cifar:.3} at 100 epochs; {mnist50:.2} vs {cifar50:.2} aggregated"
    ))
}

// ---------------------------------------------------------------- criteria

struct Sequence {
    train: Vec<f64>,
    eval: Vec<f64>,
    energy: Vec<f64>,
}

impl Sequence {
    fn random(rng: &mut ChaCha8Rng, len: usize) -> Self {
        let walk = |rng: &mut ChaCha8Rng| {
            let mut v: f64 = rng.gen_range(0.0..0.6);
            (0..len)
                .map(|_| {
                    if rng.gen_bool(0.6) {
                        v = (v + rng.gen_range(-0.05..0.1)).clamp(0.0, 1.0);
                    }
                    // coarse grid so ties are common
                    (v * 50.0).round() / 50.0
                })
                .collect::<Vec<f64>>()
        };
        let train = walk(rng);
        let eval = walk(rng);
        let mut total = 0.0;
        let energy = (0..len)
            .map(|_| {
                if rng.gen_bool(0.9) {
                    total += rng.gen_range(0.0..500.0);
                }
                total
            })
            .collect();
        Self {
            train,
            eval,
            energy,
        }
    }

    fn obs(&self, i: usize) -> EpochObservation<f64> {
        EpochObservation::new(i, self.train[i], self.eval[i], self.energy[i])
    }

    /// Every decision the rule makes, up to and including the stop.
    fn drive(&self, rule: &StoppingRule) -> Result<(Vec<Decision<f64>>, CriterionState)> {
        let mut state = CriterionState::default();
        let mut decisions = Vec::new();
        for i in 0..self.train.len() {
            let d = rule
                .observe(&mut state, &self.obs(i))
                .map_err(|e| anyhow!("{e}"))?;
            decisions.push(d);
            if d.is_stop() {
                break;
            }
        }
        Ok((decisions, state))
    }
}

fn stop_of(decisions: &[Decision<f64>]) -> Option<StopReason> {
    match decisions.last() {
        Some(Decision::Stop(r)) => Some(*r),
        _ => None,
    }
}

/// First index whose trailing `patience` eval accuracies never exceed the
/// maximum of everything before them.
fn early_stop_oracle(eval: &[f64], patience: usize) -> Option<usize> {
    (patience..eval.len()).find(|&i| {
        let split = i + 1 - patience;
        let best = eval[..split].iter().cloned().fold(f64::MIN, f64::max);
        eval[split..=i].iter().all(|&v| v <= best)
    })
}

fn criterion_properties() -> Result<String> {
    const PER_KIND: usize = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_C0DE);
    let mut stops = [0usize; 4];
    for kind in 0..4 {
        for case in 0..PER_KIND {
            let len = rng.gen_range(1..=90);
            let seq = Sequence::random(&mut rng, len);
            let n = seq.train.len();
            let criterion = match kind {
                0 => StoppingCriterion::fixed_epochs(rng.gen_range(1..=n)),
                1 => StoppingCriterion::accuracy_bound(
                    rng.gen_range(0.05..=1.0),
                    if rng.gen_bool(0.5) {
                        AccuracyStream::Train
                    } else {
                        AccuracyStream::Eval
                    },
                ),
                2 => StoppingCriterion::early_stopping(rng.gen_range(1..=8)),
                _ => StoppingCriterion::energy_budget(
                    rng.gen_range(1.0..(seq.energy[n - 1] + 200.0).max(2.0)),
                ),
            };
            let rule = StoppingRule::new(criterion).with_safety_cap(None);
            let ctx = || format!("{} case {case}: {criterion:?}", criterion.name());

            // determinism and replay
            let (first, _) = seq.drive(&rule).with_context(ctx)?;
            let (second, _) = seq.drive(&rule).with_context(ctx)?;
            ensure!(first == second, "{}: replay differs", ctx());
            let stop = stop_of(&first);
            stops[kind] += stop.is_some() as usize;

            let oracle = match criterion {
                StoppingCriterion::FixedEpochs { max_epochs } => Some(max_epochs - 1),
                StoppingCriterion::AccuracyBound {
                    target_accuracy,
                    watch,
                } => {
                    let stream = match watch {
                        AccuracyStream::Train => &seq.train,
                        AccuracyStream::Eval => &seq.eval,
                    };
                    stream.iter().position(|&a| a >= target_accuracy)
                }
                StoppingCriterion::EarlyStopping { patience } => {
                    early_stop_oracle(&seq.eval, patience)
                }
                StoppingCriterion::EnergyBudget { budget_watt_sum } => {
                    seq.energy.iter().position(|&e| e >= budget_watt_sum)
                }
            };
            ensure!(
                stop.map(|s| s.at_epoch) == oracle,
                "{}: stopped at {:?}, oracle {oracle:?}",
                ctx(),
                stop.map(|s| s.at_epoch)
            );

            match criterion {
                StoppingCriterion::FixedEpochs { max_epochs } => {
                    ensure!(
                        first.len() == max_epochs,
                        "{}: observed {} epochs",
                        ctx(),
                        first.len()
                    );
                }
                StoppingCriterion::EarlyStopping { patience } => {
                    if let Some(s) = stop {
                        ensure!(
                            s.at_epoch >= patience,
                            "{}: stopped at {}",
                            ctx(),
                            s.at_epoch
                        );
                    }
                }
                StoppingCriterion::EnergyBudget { budget_watt_sum } => {
                    if let Some(s) = stop {
                        let i = s.at_epoch;
                        let last_epoch =
                            seq.energy[i] - if i == 0 { 0.0 } else { seq.energy[i - 1] };
                        ensure!(
                            s.trigger_value - budget_watt_sum <= last_epoch,
                            "{}: overshoot {} beyond one epoch ({last_epoch})",
                            ctx(),
                            s.trigger_value - budget_watt_sum
                        );
                    }
                    let lower = budget_watt_sum * rng.gen_range(0.01..1.0);
                    let (d, _) = seq
                        .drive(
                            &StoppingRule::new(StoppingCriterion::energy_budget(lower))
                                .with_safety_cap(None),
                        )
                        .with_context(ctx)?;
                    let at = |s: Option<StopReason>| s.map_or(usize::MAX, |s| s.at_epoch);
                    ensure!(
                        at(stop_of(&d)) <= at(stop),
                        "{}: lower budget {lower} stops later",
                        ctx()
                    );
                }
                StoppingCriterion::AccuracyBound { .. } => {}
            }

            // stability: later events are rejected or ignored, never re-decided
            if let Some(s) = stop {
                if s.at_epoch + 1 < n {
                    let (_, mut state) = seq.drive(&rule).with_context(ctx)?;
                    ensure!(
                        rule.observe(&mut state, &seq.obs(s.at_epoch + 1)).is_err(),
                        "{}: accepted event after stop",
                        ctx()
                    );
                    let ignoring = rule.with_after_stop(AfterStop::Ignore);
                    let (_, mut state) = seq.drive(&ignoring).with_context(ctx)?;
                    let d = ignoring
                        .observe(&mut state, &seq.obs(s.at_epoch + 1))
                        .map_err(|e| anyhow!("{e}"))?;
                    ensure!(d == Decision::Stop(s), "{}: stop reason changed", ctx());
                }
            }
        }
    }
    Ok(format!(
        "{PER_KIND} sequences per criterion; stops fixed {} / accuracy {} / early {} / budget {}",
        stops[0], stops[1], stops[2], stops[3]
    ))
}

// ---------------------------------------------------------------- metrics

const COMPONENTS: [Component; 3] = [Component::Gpu, Component::Cpu, Component::Ram];

/// A synthetic run: raw samples per epoch plus accuracies.
struct SyntheticRun {
    architecture: String,
    task: String,
    criterion: String,
    size: u32,
    eval: Vec<f64>,
    train: Vec<f64>,
    samples: Vec<Vec<(Component, f64)>>,
}

impl SyntheticRun {
    fn random(
        rng: &mut ChaCha8Rng,
        architecture: &str,
        task: &str,
        criterion: &str,
        size: u32,
    ) -> Self {
        let epochs = rng.gen_range(1..=100);
        let mut samples = Vec::with_capacity(epochs);
        for e in 0..epochs {
            let count = rng.gen_range(if e == 0 { 1 } else { 0 }..=5);
            let mut epoch = Vec::new();
            for k in 0..count {
                let watts = if rng.gen_bool(0.1) && !(e == 0 && k == 0) {
                    0.0
                } else {
                    rng.gen_range(0.5..400.0)
                };
                epoch.push((COMPONENTS[rng.gen_range(0..3)], watts));
            }
            samples.push(epoch);
        }
        let mut acc: f64 = rng.gen_range(0.05..0.5);
        let eval = (0..epochs)
            .map(|_| {
                if rng.gen_bool(0.5) {
                    acc = (acc + rng.gen_range(-0.05..0.08)).clamp(0.05, 1.0);
                }
                acc
            })
            .collect();
        let train = (0..epochs).map(|_| rng.gen_range(0.05..1.0)).collect();
        Self {
            architecture: architecture.into(),
            task: task.into(),
            criterion: criterion.into(),
            size,
            eval,
            train,
            samples,
        }
    }

    /// The run as the harness records it: samples through the energy ledger.
    fn record(&self, scale: f64) -> Result<RunRecord> {
        let mut ledger = EnergyLedger::new();
        let mut epochs = Vec::new();
        let mut t = 0;
        for (e, batch) in self.samples.iter().enumerate() {
            for &(component, watts) in batch {
                ledger.append(PowerSample::new(t, component, watts * scale))?;
                t += 10;
            }
            ledger.mark_epoch(e)?;
            epochs.push(EpochRecord {
                epoch: e,
                train_acc: self.train[e],
                eval_acc: self.eval[e],
                energy_up_to: ledger.energy_up_to(e)?,
            });
        }
        let last = epochs.len() - 1;
        Ok(RunRecord {
            architecture: self.architecture.clone(),
            size_multiplier: self.size,
            criterion_label: self.criterion.clone(),
            criterion: StoppingCriterion::fixed_epochs(last + 1),
            task: self.task.clone(),
            epochs,
            stop: StopReason {
                kind: effmeter_core::criteria::StopKind::FixedEpochs,
                at_epoch: last,
                trigger_value: (last + 1) as f64,
            },
            component_set: ledger.components().clone(),
        })
    }

    /// Brute force: per-epoch accuracy over the plain sum of raw watts.
    fn oracle_curve(&self) -> Vec<f64> {
        (0..self.eval.len())
            .map(|e| {
                let total: f64 = self.samples[..=e].iter().flatten().map(|&(_, w)| w).sum();
                self.eval[e] / total
            })
            .collect()
    }
}

struct Experiment {
    runs: Vec<SyntheticRun>,
}

/// Library results for one experiment: per-run curves, per-size means, overall
/// values and ratios.
struct Computed {
    curves: Vec<Vec<f64>>,
    per_size: BTreeMap<(String, String, String), f64>,
    overall: BTreeMap<(String, String), f64>,
    ratios: Vec<(String, String, String, f64)>,
}

impl Experiment {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let n_criteria = rng.gen_range(1..=4);
        let n_sizes = rng.gen_range(1..=5);
        let mut runs = Vec::new();
        for task in ["T1", "T2"] {
            for arch in ["A", "B"] {
                for c in 0..n_criteria {
                    for size in 1..=n_sizes {
                        runs.push(SyntheticRun::random(
                            rng,
                            arch,
                            task,
                            &format!("c{c}"),
                            size,
                        ));
                    }
                }
            }
        }
        Self { runs }
    }

    fn compute(&self, scale: f64) -> Result<Computed> {
        let mut curves = Vec::new();
        let mut groups: BTreeMap<(String, String, String), Vec<RunEfficiency>> = BTreeMap::new();
        for run in &self.runs {
            let record = run.record(scale)?;
            let curve = (0..record.epochs.len())
                .map(|e| efficiency_at_epoch(&record, e).map(|v| v.value))
                .collect::<Result<Vec<_>, _>>()?;
            curves.push(curve);
            groups
                .entry((
                    run.task.clone(),
                    run.architecture.clone(),
                    run.criterion.clone(),
                ))
                .or_default()
                .push(RunEfficiency::from_run(&record)?);
        }
        let mut per_size = BTreeMap::new();
        let mut by_arch_task: BTreeMap<(String, String), BTreeMap<String, _>> = BTreeMap::new();
        for (key, effs) in &groups {
            let v = efficiency_per_size(effs)?;
            per_size.insert(key.clone(), v.value);
            by_arch_task
                .entry((key.0.clone(), key.1.clone()))
                .or_default()
                .insert(key.2.clone(), v);
        }
        let mut overall = BTreeMap::new();
        let mut summary = Vec::new();
        for (key, per_criterion) in &by_arch_task {
            let v = efficiency_overall(per_criterion)?.value;
            overall.insert(key.clone(), v);
            summary.push(ArchTaskEfficiency::new(key.1.clone(), key.0.clone(), v));
        }
        let table = efficiency_ratios(&summary)?;
        let ratios = table
            .cross_task
            .iter()
            .map(|r| ("task", r))
            .chain(table.cross_architecture.iter().map(|r| ("arch", r)))
            .map(|(k, r)| {
                (
                    format!("{k}:{}", r.subject),
                    r.numerator.clone(),
                    r.denominator.clone(),
                    r.value,
                )
            })
            .collect();
        Ok(Computed {
            curves,
            per_size,
            overall,
            ratios,
        })
    }
}

fn metric_oracle() -> Result<String> {
    const LOGS: usize = 1000;
    const TOL: f64 = 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(0xE77_1C1E);
    let mut logs = 0;
    let mut plateau_checks = 0;
    let mut experiments = 0;
    while logs < LOGS {
        let exp = Experiment::random(&mut rng);
        let got = exp.compute(1.0)?;
        experiments += 1;
        logs += exp.runs.len();

        // per-epoch level and plateau decay
        let mut finals: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
        for (run, curve) in exp.runs.iter().zip(&got.curves) {
            let oracle = run.oracle_curve();
            for (e, (&g, &o)) in curve.iter().zip(&oracle).enumerate() {
                ensure!(rel_close(g, o, TOL), "epoch {e}: {g:e} vs oracle {o:e}");
            }
            for e in 0..curve.len() - 1 {
                let positive = run.samples[e + 1].iter().any(|&(_, w)| w > 0.0);
                if run.eval[e + 1] <= run.eval[e] && positive {
                    ensure!(
                        curve[e + 1] < curve[e],
                        "plateau decay fails at epoch {}",
                        e + 1
                    );
                    plateau_checks += 1;
                }
            }
            finals
                .entry((
                    run.task.clone(),
                    run.architecture.clone(),
                    run.criterion.clone(),
                ))
                .or_default()
                .push(*oracle.last().unwrap());
        }

        // per-size and overall levels
        let mut per_criterion: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
        for (key, values) in &finals {
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            ensure!(
                rel_close(got.per_size[key], mean, TOL),
                "{key:?}: per-size mean"
            );
            per_criterion
                .entry((key.0.clone(), key.1.clone()))
                .or_default()
                .push(mean);
        }
        for (key, values) in &per_criterion {
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            ensure!(rel_close(got.overall[key], mean, TOL), "{key:?}: overall");
        }

        // ratios divide the overall values, with the majority winner on top
        for (subject, n, d, value) in &got.ratios {
            let (kind, who) = subject.split_once(':').unwrap();
            let pick = |x: &str| -> (String, String) {
                if kind == "task" {
                    (x.to_string(), who.to_string())
                } else {
                    (who.to_string(), x.to_string())
                }
            };
            let oracle = got.overall[&pick(n)] / got.overall[&pick(d)];
            ensure!(
                rel_close(*value, oracle, TOL),
                "{subject}: ratio {value} vs {oracle}"
            );
            let wins = got
                .ratios
                .iter()
                .filter(|r| r.0.starts_with(kind))
                .filter(|r| r.1 == *n && r.3 >= 1.0 || r.2 == *n && r.3 <= 1.0)
                .count();
            let total = got.ratios.iter().filter(|r| r.0.starts_with(kind)).count();
            ensure!(
                2 * wins >= total,
                "{subject}: {n} is on top in only {wins} of {total}"
            );
        }

        // scale covariance
        let c = 10f64.powf(rng.gen_range(-3.0..3.0));
        let scaled = exp.compute(c)?;
        for (a, b) in got.curves.iter().zip(&scaled.curves) {
            for (&x, &y) in a.iter().zip(b) {
                ensure!(
                    rel_close(y * c, x, TOL),
                    "scaling by {c}: {y:e} * c vs {x:e}"
                );
            }
        }
        for (key, &v) in &got.overall {
            ensure!(
                rel_close(scaled.overall[key] * c, v, TOL),
                "scaling by {c}: overall {key:?}"
            );
        }
        for (a, b) in got.ratios.iter().zip(&scaled.ratios) {
            ensure!(
                a.0 == b.0 && a.1 == b.1 && a.2 == b.2,
                "scaling by {c} reorients {}",
                a.0
            );
            ensure!(
                rel_close(a.3, b.3, TOL),
                "scaling by {c} changes {}: {} vs {}",
                a.0,
                a.3,
                b.3
            );
        }
    }
    Ok(format!(
        "{logs} run logs in {experiments} experiments within {TOL:e}; {plateau_checks} plateau steps decay"
    ))
}

// ---------------------------------------------------------------- end to end

fn strip(entries: &[RunLedgerEntry]) -> Vec<RunLedgerEntry> {
    entries
        .iter()
        .map(RunLedgerEntry::without_runtime)
        .collect()
}

fn end_to_end_determinism() -> Result<String> {
    let config = workspace().join("crates/cli/configs/desk.toml");
    let tmp = tempfile::tempdir()?;
    let start = Instant::now();
    let mut ledgers = Vec::new();
    for name in ["first", "second"] {
        let out = tmp.path().join(name);
        let (code, text, _) = effmeter(&[
            "run",
            config.to_str().unwrap(),
            "--output-dir",
            out.to_str().unwrap(),
        ])?;
        ensure!(code == 0, "{name} run exited {code}: {text}");
        ensure!(
            out.join("report/efficiency_curves.csv").is_file(),
            "no curves exported"
        );
        ledgers.push(read_ledger(&out.join("ledger.jsonl"))?);
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(300), "grid took {elapsed:?}");

    let entries = &ledgers[0];
    ensure!(entries.len() == 16, "{} ledger entries", entries.len());
    let complete = entries
        .iter()
        .filter(|e| e.status == RunStatus::Complete)
        .count();
    ensure!(complete == 16, "{complete} complete entries");
    ensure!(
        strip(&ledgers[0]) == strip(&ledgers[1]),
        "re-run ledger differs"
    );

    let mut surrogate_runs = 0;
    for e in entries
        .iter()
        .filter(|e| e.cell.trainer.builtin.as_deref() == Some("surrogate"))
    {
        let evals: Vec<f64> = e.epochs.iter().map(|r| r.eval_acc).collect();
        let peak = evals
            .iter()
            .enumerate()
            .fold(0, |best, (i, &v)| if v > evals[best] { i } else { best });
        let curve: Vec<f64> = e
            .epochs
            .iter()
            .map(|r| r.eval_acc / r.energy_up_to)
            .collect();
        for w in curve[peak..].windows(2) {
            ensure!(
                w[1] < w[0],
                "{}: efficiency rises after the plateau at epoch {peak}",
                e.run_id
            );
        }
        surrogate_runs += 1;
    }
    ensure!(surrogate_runs == 8, "{surrogate_runs} surrogate runs");
    Ok(format!(
        "16/16 complete twice, ledgers identical without timestamps, {surrogate_runs} surrogate curves decay after plateau, {:.1} s for both grids",
        elapsed.as_secs_f64()
    ))
}

fn protocol_robustness() -> Result<String> {
    let tmp = tempfile::tempdir()?;
    std::fs::copy(
        workspace().join("crates/cli/configs/desk_trace.csv"),
        tmp.path().join("trace.csv"),
    )?;
    let faults = [
        ("Crash", "fault:crash@3"),
        ("Malformed", "fault:malformed@2"),
        ("Skip", "fault:skip@2"),
        ("Hang", "fault:hang@2"),
    ];
    let mut text = String::from(
        "seed = 1\nsizes = [1]\noutput_dir = \"out\"\n\n[[architectures]]\narchitecture = \"Surrogate\"\nbuiltin = \"surrogate\"\n",
    );
    let mut args = vec!["Surrogate = \"toy\"".to_string()];
    for (arch, task) in faults {
        text.push_str(&format!(
            "\n[[architectures]]\narchitecture = \"{arch}\"\nbuiltin = \"fault\"\n"
        ));
        args.push(format!("{arch} = \"{task}\""));
    }
    text.push_str(&format!(
        r#"
[[criteria]]
kind = "fixed_epochs"
max_epochs = 6

[[tasks]]
label = "toy"
trainer_args = {{ {} }}

[[telemetry]]
kind = "trace_replay"
path = "trace.csv"
loop = true

[deterministic]
enabled = true

[supervision]
grace_ms = 500
"#,
        args.join(", ")
    ));
    let config = tmp.path().join("faults.toml");
    std::fs::write(&config, text)?;

    let (code, output, _) =
        effmeter(&["run", config.to_str().unwrap(), "--idle-timeout-ms", "3000"])?;
    ensure!(
        code == 2,
        "expected exit code 2 for a partial grid, got {code}: {output}"
    );
    let entries = read_ledger(&tmp.path().join("out/ledger.jsonl"))?;
    ensure!(entries.len() == 5, "{} ledger entries", entries.len());
    let mut summary = Vec::new();
    for e in &entries {
        let arch = e.cell.trainer.architecture.as_str();
        let bad = entries
            .iter()
            .filter(|x| x.cell.trainer.architecture == arch && x.status != RunStatus::Complete)
            .count();
        if arch == "Surrogate" {
            ensure!(
                e.status == RunStatus::Complete,
                "clean run is {:?}: {:?}",
                e.status,
                e.error
            );
        } else {
            ensure!(bad == 1, "{arch}: {bad} failed/degraded entries");
            summary.push(format!("{arch} {}", e.status.as_str()));
        }
    }
    let manifest = std::fs::read_to_string(tmp.path().join("out/report/manifest.json"))?;
    let manifest: serde_json::Value = serde_json::from_str(&manifest)?;
    let warnings = manifest["warnings"].as_array().map_or(0, Vec::len);
    if warnings < faults.len() {
        bail!(
            "manifest lists {warnings} warnings for {} faults",
            faults.len()
        );
    }
    Ok(format!("clean run complete; {}", summary.join(", ")))
}
