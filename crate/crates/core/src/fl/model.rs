//! One-hidden-layer classifier: `x -> tanh(x W1 + b1) -> softmax(h W2 + b2)`.
//!
//! Parameters live in one flat vector laid out as `W1` (input x hidden,
//! row-major), `b1` (hidden), `W2` (hidden x output, row-major), `b2`
//! (output). That vector is what devices train, the store hashes and the
//! aggregator averages.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::data::DataShard;
use super::FlError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelShape {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl ModelShape {
    pub fn new(input: usize, hidden: usize, output: usize) -> Self {
        Self { input, hidden, output }
    }

    pub fn param_count(&self) -> usize {
        self.input * self.hidden + self.hidden + self.hidden * self.output + self.output
    }

    fn offsets(&self) -> Offsets {
        let b1 = self.input * self.hidden;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.hidden * self.output;
        Offsets { b1, w2, b2 }
    }

    pub fn validate(&self) -> Result<(), FlError> {
        if self.input == 0 || self.hidden == 0 || self.output == 0 {
            return Err(FlError::BadShapes(*self));
        }
        Ok(())
    }
}

struct Offsets {
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub shape: ModelShape,
    pub weights: Vec<f64>,
}

impl ModelParams {
    pub fn new(shape: ModelShape, weights: Vec<f64>) -> Result<Self, FlError> {
        shape.validate()?;
        if weights.len() != shape.param_count() {
            return Err(FlError::ShapeMismatch {
                expected: shape.param_count(),
                got: weights.len(),
            });
        }
        Ok(Self { shape, weights })
    }

    pub fn zeros(shape: ModelShape) -> Self {
        Self { shape, weights: vec![0.0; shape.param_count()] }
    }

    pub fn all_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    /// Predicted class for one feature row (ties go to the lowest index).
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut hidden = vec![0.0; self.shape.hidden];
        let mut logits = vec![0.0; self.shape.output];
        self.forward(x, &mut hidden, &mut logits);
        argmax(&logits)
    }

    fn forward(&self, x: &[f64], hidden: &mut [f64], logits: &mut [f64]) {
        let ModelShape { input, hidden: h, output } = self.shape;
        let off = self.shape.offsets();
        let w = &self.weights;
        hidden.copy_from_slice(&w[off.b1..off.b1 + h]);
        for (i, &xi) in x.iter().enumerate().take(input) {
            let row = &w[i * h..(i + 1) * h];
            for (acc, &wij) in hidden.iter_mut().zip(row) {
                *acc += xi * wij;
            }
        }
        for a in hidden.iter_mut() {
            *a = a.tanh();
        }
        logits.copy_from_slice(&w[off.b2..off.b2 + output]);
        for (j, &aj) in hidden.iter().enumerate() {
            let row = &w[off.w2 + j * output..off.w2 + (j + 1) * output];
            for (acc, &wjk) in logits.iter_mut().zip(row) {
                *acc += aj * wjk;
            }
        }
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Small random weights scaled by `1/sqrt(fan_in)`, zero biases.
pub fn init_model(seed: u64, shape: ModelShape) -> Result<ModelParams, FlError> {
    shape.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModelParams::zeros(shape);
    let off = shape.offsets();
    let s1 = 1.0 / (shape.input as f64).sqrt();
    let s2 = 1.0 / (shape.hidden as f64).sqrt();
    for w in &mut p.weights[..off.b1] {
        let z: f64 = StandardNormal.sample(&mut rng);
        *w = s1 * z;
    }
    for w in &mut p.weights[off.w2..off.b2] {
        let z: f64 = StandardNormal.sample(&mut rng);
        *w = s2 * z;
    }
    Ok(p)
}

/// Mean softmax cross-entropy over the samples in `batch` and its gradient
/// with respect to every parameter.
pub fn loss_and_gradient(params: &ModelParams, shard: &DataShard, batch: &[usize]) -> (f64, Vec<f64>) {
    let ModelShape { input, hidden: h, output } = params.shape;
    let off = params.shape.offsets();
    let w = &params.weights;
    let mut grad = vec![0.0; w.len()];
    let mut act = vec![0.0; h];
    let mut logits = vec![0.0; output];
    let mut dz2 = vec![0.0; output];
    let mut dz1 = vec![0.0; h];
    let mut loss = 0.0;

    for &n in batch {
        let x = shard.row(n);
        let y = shard.labels[n];
        params.forward(x, &mut act, &mut logits);

        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
        let log_norm = max + sum.ln();
        loss += log_norm - logits[y];
        for k in 0..output {
            dz2[k] = (logits[k] - log_norm).exp();
        }
        dz2[y] -= 1.0;

        for (j, &aj) in act.iter().enumerate() {
            let row = off.w2 + j * output;
            let mut back = 0.0;
            for k in 0..output {
                grad[row + k] += aj * dz2[k];
                back += w[row + k] * dz2[k];
            }
            dz1[j] = back * (1.0 - aj * aj);
        }
        for k in 0..output {
            grad[off.b2 + k] += dz2[k];
        }
        for (i, &xi) in x.iter().enumerate().take(input) {
            let row = i * h;
            for j in 0..h {
                grad[row + j] += xi * dz1[j];
            }
        }
        for j in 0..h {
            grad[off.b1 + j] += dz1[j];
        }
    }

    let scale = 1.0 / batch.len().max(1) as f64;
    for g in &mut grad {
        *g *= scale;
    }
    (loss * scale, grad)
}

/// Mean loss over a whole shard.
pub fn mean_loss(params: &ModelParams, shard: &DataShard) -> f64 {
    let all: Vec<usize> = (0..shard.len()).collect();
    loss_and_gradient(params, shard, &all).0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 20, learning_rate: 0.05, batch_size: 10, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub n_samples: usize,
    /// Mean per-sample loss over the final epoch.
    pub train_loss: f64,
}

fn check_compat(params: &ModelParams, shard: &DataShard) -> Result<(), FlError> {
    if shard.input_dim != params.shape.input {
        return Err(FlError::ShapeMismatch { expected: params.shape.input, got: shard.input_dim });
    }
    if let Some(&bad) = shard.labels.iter().find(|&&y| y >= params.shape.output) {
        return Err(FlError::ShapeMismatch { expected: params.shape.output, got: bad + 1 });
    }
    if params.weights.len() != params.shape.param_count() {
        return Err(FlError::ShapeMismatch { expected: params.shape.param_count(), got: params.weights.len() });
    }
    Ok(())
}

/// Mini-batch SGD on softmax cross-entropy.
pub fn local_train(params: &ModelParams, shard: &DataShard, cfg: &TrainConfig) -> Result<TrainOutcome, FlError> {
    if cfg.epochs == 0 {
        return Err(FlError::InvalidConfig("epochs must be >= 1"));
    }
    if !(cfg.learning_rate >= 0.0 && cfg.learning_rate.is_finite()) {
        return Err(FlError::InvalidConfig("learning_rate must be finite and non-negative"));
    }
    if cfg.batch_size == 0 {
        return Err(FlError::InvalidConfig("batch_size must be >= 1"));
    }
    check_compat(params, shard)?;
    if shard.is_empty() {
        return Err(FlError::EmptyShard);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut current = params.clone();
    let mut order: Vec<usize> = (0..shard.len()).collect();
    let mut epoch_loss = 0.0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grad) = loss_and_gradient(&current, shard, batch);
            if !loss.is_finite() {
                return Err(FlError::NonFiniteLoss);
            }
            epoch_loss += loss * batch.len() as f64;
            for (w, g) in current.weights.iter_mut().zip(&grad) {
                *w -= cfg.learning_rate * g;
            }
        }
        epoch_loss /= shard.len() as f64;
    }
    if !current.all_finite() {
        return Err(FlError::NonFiniteLoss);
    }
    Ok(TrainOutcome { params: current, n_samples: shard.len(), train_loss: epoch_loss })
}

/// Fraction of samples whose argmax prediction matches the label.
pub fn evaluate(params: &ModelParams, validation: &DataShard) -> Result<f64, FlError> {
    check_compat(params, validation)?;
    if validation.is_empty() {
        return Err(FlError::EmptyShard);
    }
    let correct = (0..validation.len()).filter(|&n| params.predict(validation.row(n)) == validation.labels[n]).count();
    Ok(correct as f64 / validation.len() as f64)
}
