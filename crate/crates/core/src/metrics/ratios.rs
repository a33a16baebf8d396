use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::Scalar;

/// Overall efficiency of one architecture on one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchTaskEfficiency<S = f64> {
    pub architecture: String,
    pub task: String,
    pub value: S,
}

impl<S> ArchTaskEfficiency<S> {
    pub fn new(architecture: impl Into<String>, task: impl Into<String>, value: S) -> Self {
        Self {
            architecture: architecture.into(),
            task: task.into(),
            value,
        }
    }
}

/// `numerator / denominator` for one subject (an architecture for cross-task
/// ratios, a task for cross-architecture ratios).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ratio<S = f64> {
    pub subject: String,
    pub numerator: String,
    pub denominator: String,
    pub value: S,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RatioTable<S = f64> {
    /// Same architecture, task vs task.
    pub cross_task: Vec<Ratio<S>>,
    /// Same task, architecture vs architecture.
    pub cross_architecture: Vec<Ratio<S>>,
}

impl<S: Scalar> RatioTable<S> {
    pub fn find_cross_task(&self, architecture: &str) -> Option<&Ratio<S>> {
        self.cross_task.iter().find(|r| r.subject == architecture)
    }

    pub fn find_cross_architecture(&self, task: &str) -> Option<&Ratio<S>> {
        self.cross_architecture.iter().find(|r| r.subject == task)
    }
}

fn first_seen<'a>(keys: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::new();
    for k in keys {
        if !out.contains(&k) {
            out.push(k);
        }
    }
    out
}

/// Builds cross-task and cross-architecture ratio tables.
///
/// For every pair the numerator is the side with the larger efficiency for
/// the majority of subjects; ties keep first-seen order. The orientation is
/// shared by all subjects of a pair, so one column of the table never mixes
/// directions.
pub fn efficiency_ratios<S: Scalar>(
    summary: &[ArchTaskEfficiency<S>],
) -> Result<RatioTable<S>, MetricsError> {
    let archs = first_seen(summary.iter().map(|e| e.architecture.as_str()));
    let tasks = first_seen(summary.iter().map(|e| e.task.as_str()));
    if archs.len() < 2 && tasks.len() < 2 {
        return Err(MetricsError::NotEnoughForRatios);
    }
    for (i, a) in summary.iter().enumerate() {
        if summary[..i]
            .iter()
            .any(|b| b.architecture == a.architecture && b.task == a.task)
        {
            return Err(MetricsError::DuplicateEntry(format!(
                "{}/{}",
                a.architecture, a.task
            )));
        }
    }
    let lookup = |arch: &str, task: &str| {
        summary
            .iter()
            .find(|e| e.architecture == arch && e.task == task)
            .map(|e| e.value)
    };

    let cross_task = pairwise(&tasks, &archs, |task, arch| lookup(arch, task))?;
    let cross_architecture = pairwise(&archs, &tasks, |arch, task| lookup(arch, task))?;
    Ok(RatioTable {
        cross_task,
        cross_architecture,
    })
}

/// Ratios between every pair of `sides` for each subject holding both.
fn pairwise<S: Scalar>(
    sides: &[&str],
    subjects: &[&str],
    value: impl Fn(&str, &str) -> Option<S>,
) -> Result<Vec<Ratio<S>>, MetricsError> {
    let mut out = Vec::new();
    for (i, &first) in sides.iter().enumerate() {
        for &second in &sides[i + 1..] {
            let pairs: Vec<(&str, S, S)> = subjects
                .iter()
                .filter_map(|&subj| Some((subj, value(first, subj)?, value(second, subj)?)))
                .collect();
            let first_wins = pairs.iter().filter(|(_, a, b)| a > b).count();
            let second_wins = pairs.iter().filter(|(_, a, b)| b > a).count();
            let flip = second_wins > first_wins;
            let (num, den) = if flip {
                (second, first)
            } else {
                (first, second)
            };
            for (subj, a, b) in pairs {
                let (n, d) = if flip { (b, a) } else { (a, b) };
                if d == S::zero() {
                    return Err(MetricsError::ZeroDenominator(format!("{subj}: {den}")));
                }
                out.push(Ratio {
                    subject: subj.to_string(),
                    numerator: num.to_string(),
                    denominator: den.to_string(),
                    value: n / d,
                });
            }
        }
    }
    Ok(out)
}
