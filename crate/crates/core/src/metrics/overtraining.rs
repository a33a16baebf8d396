use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::scalar::in_unit_interval;
use crate::Scalar;

/// Train and test accuracy at one training horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyPair<S = f64> {
    pub train: S,
    pub test: S,
}

impl<S: Scalar> AccuracyPair<S> {
    pub fn new(train: S, test: S) -> Self {
        Self { train, test }
    }

    fn gap(&self) -> S {
        self.train - self.test
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Overtrained,
    NotOvertrained,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Overtrained => "overtrained",
            Verdict::NotOvertrained => "not_overtrained",
        }
    }
}

/// Parameters of the overtraining decision.
///
/// `A` (test gain between horizons) and `B` (growth of the train/test gap)
/// are rounded to `decimals` places first. A run is overtrained when
/// `A <= 0`, or when `B >= comparable_fraction * A`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OvertrainingRule {
    pub decimals: u32,
    pub comparable_fraction: f64,
}

impl Default for OvertrainingRule {
    fn default() -> Self {
        Self {
            decimals: 2,
            comparable_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvertrainingVerdict<S = f64> {
    pub architecture: String,
    pub size_multiplier: u32,
    /// Rounded test gain from the short to the long horizon.
    pub gain_a: S,
    /// Rounded growth of the train/test gap from short to long horizon.
    pub divergence_b: S,
    pub verdict: Verdict,
}

fn rounded_units<S: Scalar>(value: S, decimals: u32) -> i64 {
    let scale = 10f64.powi(decimals as i32);
    (value.to_f64_lossy() * scale).round() as i64
}

fn from_units<S: Scalar>(units: i64, decimals: u32) -> S {
    // units / 10^d: keeps e.g. 9 -> 0.09 as the nearest representable value
    S::lit(units as f64 / 10f64.powi(decimals as i32))
}

/// Compares the short-horizon and long-horizon accuracies of one model.
pub fn overtraining_analysis<S: Scalar>(
    architecture: &str,
    size_multiplier: u32,
    short: AccuracyPair<S>,
    long: AccuracyPair<S>,
    rule: &OvertrainingRule,
) -> Result<OvertrainingVerdict<S>, MetricsError> {
    for v in [short.train, short.test, long.train, long.test] {
        if !in_unit_interval(v) {
            return Err(MetricsError::AccuracyOutOfRange(v.to_f64_lossy()));
        }
    }
    let a_units = rounded_units(long.test - short.test, rule.decimals);
    let b_units = rounded_units(long.gap() - short.gap(), rule.decimals);
    let verdict = if a_units <= 0 || b_units as f64 >= rule.comparable_fraction * a_units as f64 {
        Verdict::Overtrained
    } else {
        Verdict::NotOvertrained
    };
    Ok(OvertrainingVerdict {
        architecture: architecture.to_string(),
        size_multiplier,
        gain_a: from_units(a_units, rule.decimals),
        divergence_b: from_units(b_units, rule.decimals),
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(
        short: (f64, f64),
        long: (f64, f64),
        rule: &OvertrainingRule,
    ) -> OvertrainingVerdict<f64> {
        overtraining_analysis(
            "m",
            1,
            AccuracyPair::new(short.0, short.1),
            AccuracyPair::new(long.0, long.1),
            rule,
        )
        .unwrap()
    }

    #[test]
    fn lenet1_mnist_is_overtrained() {
        let v = run(
            (0.99071102, 0.98506103),
            (0.99524102, 0.98694648),
            &OvertrainingRule::default(),
        );
        assert_eq!((v.gain_a, v.divergence_b), (0.0, 0.0));
        assert_eq!(v.verdict, Verdict::Overtrained);
    }

    #[test]
    fn bcnn1_cifar_is_not_overtrained() {
        let v = run(
            (0.33502488, 0.33920898),
            (0.43809589, 0.43243262),
            &OvertrainingRule::default(),
        );
        assert_eq!((v.gain_a, v.divergence_b), (0.09, 0.01));
        assert_eq!(v.verdict, Verdict::NotOvertrained);
    }

    #[test]
    fn comparable_divergence_with_smaller_b() {
        // A 0.04, B 0.02: half the gain is still "comparable".
        let short = (0.59485669, 0.57332227);
        let long = (0.65716212, 0.61330469);
        let v = run(short, long, &OvertrainingRule::default());
        assert_eq!((v.gain_a, v.divergence_b), (0.04, 0.02));
        assert_eq!(v.verdict, Verdict::Overtrained);
        let strict = OvertrainingRule {
            comparable_fraction: 1.0,
            ..Default::default()
        };
        assert_eq!(run(short, long, &strict).verdict, Verdict::NotOvertrained);
    }

    #[test]
    fn identical_horizons_and_negative_gain() {
        let v = run((0.8, 0.7), (0.8, 0.7), &OvertrainingRule::default());
        assert_eq!(
            (v.gain_a, v.divergence_b, v.verdict),
            (0.0, 0.0, Verdict::Overtrained)
        );
        let v = run((0.8, 0.7), (0.9, 0.6), &OvertrainingRule::default());
        assert_eq!(v.verdict, Verdict::Overtrained);
        assert!(v.gain_a < 0.0);
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(overtraining_analysis(
            "m",
            1,
            AccuracyPair::new(1.2, 0.5),
            AccuracyPair::new(0.5, 0.5),
            &OvertrainingRule::default()
        )
        .is_err());
    }

    #[test]
    fn precision_is_configurable() {
        let rule = OvertrainingRule {
            decimals: 3,
            comparable_fraction: 1.0,
        };
        let v = run((0.99071102, 0.98506103), (0.99524102, 0.98694648), &rule);
        assert_eq!((v.gain_a, v.divergence_b), (0.002, 0.003));
        assert_eq!(v.verdict, Verdict::Overtrained);
    }
}
