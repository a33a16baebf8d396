//! Closed-form accuracy curves.
//!
//! `train(e) = clamp(a_max * (1 - exp(-(e + 1) / tau)) + noise)`. The eval
//! curve follows the same shape with independent noise until the overfit
//! onset, then falls linearly by `decay` per epoch from its onset value.
//!
//! Task label: `surrogate:<a_max>,<tau>,<noise>,<onset>,<decay>` where
//! `onset` may be `none`. A label without parameters (for example a plain
//! dataset name) uses [`SurrogateSpec::default`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{split_task, Step, Trainer, TrainerError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateSpec {
    pub a_max: f64,
    pub tau: f64,
    pub noise_sigma: f64,
    pub overfit_onset: Option<usize>,
    pub decay: f64,
}

impl Default for SurrogateSpec {
    fn default() -> Self {
        Self {
            a_max: 0.95,
            tau: 5.0,
            noise_sigma: 0.0,
            overfit_onset: None,
            decay: 0.0,
        }
    }
}

impl SurrogateSpec {
    pub fn validate(&self) -> Result<(), TrainerError> {
        if !(self.a_max > 0.0 && self.a_max <= 1.0) {
            return Err(TrainerError::Invalid(format!(
                "a_max must be in (0, 1], got {}",
                self.a_max
            )));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(TrainerError::Invalid(format!(
                "tau must be > 0, got {}",
                self.tau
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(TrainerError::Invalid(format!(
                "noise must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        if !(self.decay >= 0.0 && self.decay.is_finite()) {
            return Err(TrainerError::Invalid(format!(
                "decay must be >= 0, got {}",
                self.decay
            )));
        }
        Ok(())
    }

    pub fn from_task(label: &str) -> Result<Self, TrainerError> {
        let bad = |message: String| TrainerError::BadTask {
            label: label.to_string(),
            message,
        };
        let (head, params) = split_task(label);
        let Some(params) = params else {
            return Ok(Self::default());
        };
        if head != "surrogate" {
            return Err(bad(
                "expected `surrogate:<a_max>,<tau>,<noise>,<onset>,<decay>`".into(),
            ));
        }
        let fields: Vec<&str> = params.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(bad(format!(
                "expected 5 comma-separated values, got {}",
                fields.len()
            )));
        }
        let num = |i: usize, name: &str| {
            fields[i]
                .parse::<f64>()
                .map_err(|_| bad(format!("{name} `{}` is not a number", fields[i])))
        };
        let overfit_onset = match fields[3] {
            "none" | "-" | "" => None,
            s => Some(
                s.parse::<usize>()
                    .map_err(|_| bad(format!("onset `{s}` is not an epoch index or `none`")))?,
            ),
        };
        let spec = Self {
            a_max: num(0, "a_max")?,
            tau: num(1, "tau")?,
            noise_sigma: num(2, "noise")?,
            overfit_onset,
            decay: num(4, "decay")?,
        };
        spec.validate().map_err(|e| bad(e.to_string()))?;
        Ok(spec)
    }

    /// Noise-free train accuracy at `epoch`.
    pub fn curve(&self, epoch: usize) -> f64 {
        (self.a_max * (1.0 - (-((epoch + 1) as f64) / self.tau).exp())).clamp(0.0, 1.0)
    }
}

pub struct SurrogateTrainer {
    spec: SurrogateSpec,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
    eval_at_onset: Option<f64>,
}

impl SurrogateTrainer {
    pub fn new(spec: SurrogateSpec, size: u32, seed: u64) -> Self {
        let stream = seed ^ u64::from(size).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        Self {
            spec,
            rng: ChaCha8Rng::seed_from_u64(stream),
            noise: (spec.noise_sigma > 0.0).then(|| Normal::new(0.0, spec.noise_sigma).unwrap()),
            eval_at_onset: None,
        }
    }

    fn draw(&mut self) -> f64 {
        match &self.noise {
            Some(n) => n.sample(&mut self.rng),
            None => 0.0,
        }
    }

    pub fn accuracies(&mut self, epoch: usize) -> (f64, f64) {
        let base = self.spec.curve(epoch);
        // draw both every epoch so the stream doesn't depend on the onset
        let train_noise = self.draw();
        let eval_noise = self.draw();
        let train = (base + train_noise).clamp(0.0, 1.0);
        let fresh_eval = (base + eval_noise).clamp(0.0, 1.0);
        let eval = match self.spec.overfit_onset {
            Some(onset) if epoch == onset => {
                self.eval_at_onset = Some(fresh_eval);
                fresh_eval
            }
            Some(onset) if epoch > onset => {
                let anchor = *self
                    .eval_at_onset
                    .get_or_insert_with(|| self.spec.curve(onset));
                (anchor - self.spec.decay * (epoch - onset) as f64).clamp(0.0, 1.0)
            }
            _ => fresh_eval,
        };
        (train, eval)
    }
}

impl Trainer for SurrogateTrainer {
    fn step(&mut self, epoch: usize) -> Step {
        let (train_acc, eval_acc) = self.accuracies(epoch);
        Step::Epoch {
            train_acc,
            eval_acc,
        }
    }
}
