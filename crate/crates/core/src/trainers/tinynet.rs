//! A small fully connected ReLU classifier trained with Adam.
//!
//! Hidden widths are `base_widths * multiplier`. Task labels:
//! `blobs` (all four clusters) or `blobs2` (clusters 0 and 1), optionally
//! followed by `:lr=<f>,batch=<n>,widths=<a>x<b>..`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{split_task, Dataset, Step, Trainer, TrainerError};

const TRAIN_FRACTION: f64 = 0.7;
const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct TinyNetSpec {
    pub base_widths: Vec<usize>,
    pub multiplier: u32,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl TinyNetSpec {
    pub fn new(multiplier: u32, seed: u64) -> Self {
        Self {
            base_widths: vec![8, 8],
            multiplier,
            learning_rate: 0.01,
            batch_size: 32,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), TrainerError> {
        if self.multiplier == 0 {
            return Err(TrainerError::Invalid("multiplier must be >= 1".into()));
        }
        if self.base_widths.is_empty() || self.base_widths.contains(&0) {
            return Err(TrainerError::Invalid("widths must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainerError::Invalid("batch size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainerError::Invalid(format!(
                "learning rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.base_widths
            .iter()
            .map(|w| w * self.multiplier as usize)
            .collect()
    }

    /// Weights + biases per layer for the given input and output sizes.
    pub fn layer_param_counts(&self, inputs: usize, classes: usize) -> Vec<usize> {
        let mut dims = vec![inputs];
        dims.extend(self.hidden_widths());
        dims.push(classes);
        dims.windows(2).map(|w| w[0] * w[1] + w[1]).collect()
    }

    pub fn param_count(&self, inputs: usize, classes: usize) -> usize {
        self.layer_param_counts(inputs, classes).iter().sum()
    }
}

struct Dense {
    inputs: usize,
    outputs: usize,
    w: Vec<f64>,
    b: Vec<f64>,
    mw: Vec<f64>,
    vw: Vec<f64>,
    mb: Vec<f64>,
    vb: Vec<f64>,
}

impl Dense {
    fn new(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let init = Normal::new(0.0, (2.0 / inputs as f64).sqrt()).unwrap();
        Self {
            inputs,
            outputs,
            w: (0..inputs * outputs).map(|_| init.sample(rng)).collect(),
            b: vec![0.0; outputs],
            mw: vec![0.0; inputs * outputs],
            vw: vec![0.0; inputs * outputs],
            mb: vec![0.0; outputs],
            vb: vec![0.0; outputs],
        }
    }

    fn forward(&self, input: &[f64], out: &mut Vec<f64>, relu: bool) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.w[o * self.inputs..(o + 1) * self.inputs];
            let z = self.b[o] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
            out.push(if relu { z.max(0.0) } else { z });
        }
    }
}

pub struct TinyNetTrainer {
    spec: TinyNetSpec,
    layers: Vec<Dense>,
    train: Dataset,
    eval: Dataset,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    adam_step: i32,
}

impl TinyNetTrainer {
    pub fn new(spec: TinyNetSpec, data: &Dataset) -> Result<Self, TrainerError> {
        spec.validate()?;
        let (train, eval) = data.split(TRAIN_FRACTION);
        if train.is_empty() || eval.is_empty() {
            return Err(TrainerError::Invalid("dataset too small to split".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut dims = vec![data.features];
        dims.extend(spec.hidden_widths());
        dims.push(data.classes);
        let layers = dims
            .windows(2)
            .map(|w| Dense::new(w[0], w[1], &mut rng))
            .collect();
        let order = (0..train.len()).collect();
        Ok(Self {
            spec,
            layers,
            train,
            eval,
            rng,
            order,
            adam_step: 0,
        })
    }

    pub fn from_task(label: &str, size: u32, seed: u64) -> Result<Self, TrainerError> {
        let bad = |message: String| TrainerError::BadTask {
            label: label.to_string(),
            message,
        };
        let (head, params) = split_task(label);
        let data = match head {
            "blobs" => Dataset::bundled_blobs(),
            "blobs2" => Dataset::bundled_blobs().with_classes(&[0, 1]),
            other => {
                return Err(bad(format!(
                    "unknown dataset `{other}` (expected blobs or blobs2)"
                )))
            }
        };
        let mut spec = TinyNetSpec::new(size, seed);
        for kv in params
            .into_iter()
            .flat_map(|p| p.split(','))
            .filter(|s| !s.is_empty())
        {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, got `{kv}`")))?;
            match k.trim() {
                "lr" => spec.learning_rate = v.parse().map_err(|_| bad(format!("bad lr `{v}`")))?,
                "batch" => {
                    spec.batch_size = v.parse().map_err(|_| bad(format!("bad batch `{v}`")))?
                }
                "widths" => {
                    spec.base_widths = v
                        .split('x')
                        .map(|w| w.parse::<usize>())
                        .collect::<Result<_, _>>()
                        .map_err(|_| bad(format!("bad widths `{v}`")))?
                }
                other => return Err(bad(format!("unknown parameter `{other}`"))),
            }
        }
        Self::new(spec, &data).map_err(|e| bad(e.to_string()))
    }

    pub fn spec(&self) -> &TinyNetSpec {
        &self.spec
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Fills `acts` with the input followed by each layer's output.
    fn forward(&self, input: &[f64], acts: &mut Vec<Vec<f64>>) {
        acts.resize(self.layers.len() + 1, Vec::new());
        acts[0].clear();
        acts[0].extend_from_slice(input);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (done, rest) = acts.split_at_mut(l + 1);
            layer.forward(&done[l], &mut rest[0], l != last);
        }
    }

    fn accuracy(&self, data: &Dataset) -> f64 {
        let mut acts = Vec::new();
        let correct = (0..data.len())
            .filter(|&i| {
                self.forward(data.row(i), &mut acts);
                argmax(acts.last().unwrap()) == data.y[i]
            })
            .count();
        correct as f64 / data.len() as f64
    }

    fn train_batch(&mut self, batch: &[usize]) {
        let mut gw: Vec<Vec<f64>> = self.layers.iter().map(|l| vec![0.0; l.w.len()]).collect();
        let mut gb: Vec<Vec<f64>> = self.layers.iter().map(|l| vec![0.0; l.b.len()]).collect();
        let mut acts = Vec::new();
        for &i in batch {
            self.forward(self.train.row(i), &mut acts);
            // softmax cross-entropy gradient at the logits
            let mut delta = softmax(acts.last().unwrap());
            delta[self.train.y[i]] -= 1.0;
            for l in (0..self.layers.len()).rev() {
                let layer = &self.layers[l];
                let input = &acts[l];
                for o in 0..layer.outputs {
                    gb[l][o] += delta[o];
                    let row = &mut gw[l][o * layer.inputs..(o + 1) * layer.inputs];
                    for (g, x) in row.iter_mut().zip(input) {
                        *g += delta[o] * x;
                    }
                }
                if l > 0 {
                    let mut prev = vec![0.0; layer.inputs];
                    for (o, d) in delta.iter().enumerate() {
                        let row = &layer.w[o * layer.inputs..(o + 1) * layer.inputs];
                        for (p, w) in prev.iter_mut().zip(row) {
                            *p += w * d;
                        }
                    }
                    for (p, a) in prev.iter_mut().zip(input) {
                        if *a <= 0.0 {
                            *p = 0.0;
                        }
                    }
                    delta = prev;
                }
            }
        }
        self.adam_step += 1;
        let scale = 1.0 / batch.len() as f64;
        let lr = self.spec.learning_rate;
        let c1 = 1.0 - BETA1.powi(self.adam_step);
        let c2 = 1.0 - BETA2.powi(self.adam_step);
        for (l, layer) in self.layers.iter_mut().enumerate() {
            adam(
                &mut layer.w,
                &mut layer.mw,
                &mut layer.vw,
                &gw[l],
                scale,
                lr,
                c1,
                c2,
            );
            adam(
                &mut layer.b,
                &mut layer.mb,
                &mut layer.vb,
                &gb[l],
                scale,
                lr,
                c1,
                c2,
            );
        }
    }

    /// One pass over the shuffled training split; returns (train, eval) accuracy.
    pub fn epoch(&mut self) -> (f64, f64) {
        self.order.shuffle(&mut self.rng);
        let order = std::mem::take(&mut self.order);
        for batch in order.chunks(self.spec.batch_size) {
            self.train_batch(batch);
        }
        self.order = order;
        (self.accuracy(&self.train), self.accuracy(&self.eval))
    }
}

#[allow(clippy::too_many_arguments)]
fn adam(
    p: &mut [f64],
    m: &mut [f64],
    v: &mut [f64],
    g: &[f64],
    scale: f64,
    lr: f64,
    c1: f64,
    c2: f64,
) {
    for i in 0..p.len() {
        let g = g[i] * scale;
        m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
        v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
        p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + EPS);
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in z.iter().enumerate() {
        if *v > z[best] {
            best = i;
        }
    }
    best
}

impl Trainer for TinyNetTrainer {
    fn step(&mut self, _epoch: usize) -> Step {
        let (train_acc, eval_acc) = self.epoch();
        Step::Epoch {
            train_acc,
            eval_acc,
        }
    }
}
