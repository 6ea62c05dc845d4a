//! Losses, output activations, the per-example SGD loop with the decaying
//! rate schedule, input augmentation, and evaluation.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ImageShape, Targets};
use crate::dynamics::{forward, DropoutMask};
use crate::error::{FitDnnError, Result};
use crate::gradient::{apply_gradient_step, backprop_masked};
use crate::model::{FitDnnConfig, OutputActivation, WeightSet};

/// Loss function kind. Cross-entropy pairs with softmax; the rescaled mean
/// squared error pairs with the clipping or identity output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    CrossEntropy,
    Mse,
}

/// Training target of one example.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Class(usize),
    Vector(Vec<f64>),
}

impl Target {
    /// Expand to a dense target vector of length `p` (one-hot for classes).
    pub fn as_vector(&self, p: usize) -> Result<Vec<f64>> {
        match self {
            Target::Class(c) => {
                if *c >= p {
                    return Err(FitDnnError::Dimension(format!(
                        "class {c} out of range for {p} outputs"
                    )));
                }
                let mut v = vec![0.0; p];
                v[*c] = 1.0;
                Ok(v)
            }
            Target::Vector(v) => {
                if v.len() != p {
                    return Err(FitDnnError::Dimension(format!(
                        "target vector has length {}, expected {p}",
                        v.len()
                    )));
                }
                Ok(v.clone())
            }
        }
    }
}

/// Per-example loss (`K = 1`): cross-entropy `-ln y_hat[target]` or the
/// rescaled squared error `0.5 * sum((y_hat - y)^2)`.
pub fn loss_value(y_hat: &[f64], target: &Target, kind: Loss) -> Result<f64> {
    match kind {
        Loss::CrossEntropy => {
            let c = match target {
                Target::Class(c) => *c,
                Target::Vector(_) => {
                    return Err(FitDnnError::Structure(
                        "cross-entropy expects a class target".into(),
                    ))
                }
            };
            if c >= y_hat.len() {
                return Err(FitDnnError::Dimension(format!(
                    "class {c} out of range for {} outputs",
                    y_hat.len()
                )));
            }
            // floor the probability so a confident wrong prediction cannot
            // produce -inf
            Ok(-(y_hat[c].max(1e-300)).ln())
        }
        Loss::Mse => {
            let y = target.as_vector(y_hat.len())?;
            Ok(0.5
                * y_hat
                    .iter()
                    .zip(&y)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>())
        }
    }
}

/// Apply the output nonlinearity. Softmax subtracts the max before
/// exponentiating; clipping bounds each component to `[0, 1]`.
pub fn output_activation(a_out: &[f64], kind: OutputActivation) -> Vec<f64> {
    match kind {
        OutputActivation::Softmax => {
            let max = a_out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = a_out.iter().map(|&a| (a - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / sum).collect()
        }
        OutputActivation::Clip01 => a_out.iter().map(|&a| a.clamp(0.0, 1.0)).collect(),
        OutputActivation::Identity => a_out.to_vec(),
    }
}

/// SGD schedule and augmentation switches.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSchedule {
    /// Initial training rate `eta_0`.
    pub eta0: f64,
    /// Rate scaling factor `eta_1`; the step-`k` rate is `min(eta0, eta1/k)`.
    pub eta1: f64,
    pub epochs: usize,
    pub rng_seed: u64,
    /// Std-dev of the additive Gaussian training noise (grayscale units).
    pub sigma_noise: f64,
    /// Random shift by at most one pixel in each direction.
    pub jitter: bool,
    /// Inverted-dropout rate on hidden node states, in `[0, 1)`.
    pub dropout_rate: f64,
    /// Random rotation up to +-15 degrees and horizontal flip with p = 0.5.
    pub rotation_flip: bool,
}

impl TrainSchedule {
    pub fn plain(eta0: f64, eta1: f64, epochs: usize, rng_seed: u64) -> Self {
        TrainSchedule {
            eta0,
            eta1,
            epochs,
            rng_seed,
            sigma_noise: 0.0,
            jitter: false,
            dropout_rate: 0.0,
            rotation_flip: false,
        }
    }

    /// Decaying training rate `eta(k) = min(eta0, eta1 / k)`, `k >= 1`.
    pub fn learning_rate(&self, k: u64) -> f64 {
        self.eta0.min(self.eta1 / k as f64)
    }

    fn augments_inputs(&self) -> bool {
        self.sigma_noise > 0.0 || self.jitter || self.rotation_flip
    }
}

/// Shift an image by `(dx, dy)` pixels (columns, rows), zero-padding the
/// uncovered border. Works per channel on planar data.
pub fn shift_image(u: &[f64], shape: &ImageShape, dx: i64, dy: i64) -> Vec<f64> {
    let (rows, cols, channels) = (shape.rows, shape.cols, shape.channels);
    let mut out = vec![0.0; u.len()];
    let plane = rows * cols;
    for ch in 0..channels {
        for r in 0..rows as i64 {
            let src_r = r - dy;
            if src_r < 0 || src_r >= rows as i64 {
                continue;
            }
            for c in 0..cols as i64 {
                let src_c = c - dx;
                if src_c < 0 || src_c >= cols as i64 {
                    continue;
                }
                out[ch * plane + (r as usize) * cols + c as usize] =
                    u[ch * plane + (src_r as usize) * cols + src_c as usize];
            }
        }
    }
    out
}

/// Rotate an image around its center by `angle` radians with bilinear
/// sampling, zero outside.
fn rotate_image(u: &[f64], shape: &ImageShape, angle: f64) -> Vec<f64> {
    let (rows, cols, channels) = (shape.rows, shape.cols, shape.channels);
    let plane = rows * cols;
    let cy = (rows as f64 - 1.0) / 2.0;
    let cx = (cols as f64 - 1.0) / 2.0;
    let (sin, cos) = angle.sin_cos();
    let mut out = vec![0.0; u.len()];
    for ch in 0..channels {
        for r in 0..rows {
            for c in 0..cols {
                // inverse-map the output pixel into the source image
                let yr = r as f64 - cy;
                let xr = c as f64 - cx;
                let sy = cy + (sin * xr + cos * yr);
                let sx = cx + (cos * xr - sin * yr);
                if sy < 0.0 || sx < 0.0 || sy > rows as f64 - 1.0 || sx > cols as f64 - 1.0 {
                    continue;
                }
                let r0 = sy.floor() as usize;
                let c0 = sx.floor() as usize;
                let r1 = (r0 + 1).min(rows - 1);
                let c1 = (c0 + 1).min(cols - 1);
                let fy = sy - r0 as f64;
                let fx = sx - c0 as f64;
                let at = |rr: usize, cc: usize| u[ch * plane + rr * cols + cc];
                let v = at(r0, c0) * (1.0 - fy) * (1.0 - fx)
                    + at(r0, c1) * (1.0 - fy) * fx
                    + at(r1, c0) * fy * (1.0 - fx)
                    + at(r1, c1) * fy * fx;
                out[ch * plane + r * cols + c] = v;
            }
        }
    }
    out
}

fn flip_horizontal(u: &[f64], shape: &ImageShape) -> Vec<f64> {
    let (rows, cols, channels) = (shape.rows, shape.cols, shape.channels);
    let plane = rows * cols;
    let mut out = vec![0.0; u.len()];
    for ch in 0..channels {
        for r in 0..rows {
            for c in 0..cols {
                out[ch * plane + r * cols + c] = u[ch * plane + r * cols + (cols - 1 - c)];
            }
        }
    }
    out
}

/// Training-time input augmentation: optional rotation/flip, pixel jitter,
/// additive Gaussian noise, then clipping back to `[0, 1]`.
pub fn augment<R: Rng>(
    u: &[f64],
    shape: &ImageShape,
    schedule: &TrainSchedule,
    rng: &mut R,
) -> Vec<f64> {
    let mut img = u.to_vec();
    if schedule.rotation_flip {
        let angle = rng.gen_range(-15.0_f64..=15.0).to_radians();
        img = rotate_image(&img, shape, angle);
        if rng.gen::<f64>() < 0.5 {
            img = flip_horizontal(&img, shape);
        }
    }
    if schedule.jitter {
        let dx = rng.gen_range(-1i64..=1);
        let dy = rng.gen_range(-1i64..=1);
        if dx != 0 || dy != 0 {
            img = shift_image(&img, shape, dx, dy);
        }
    }
    if schedule.sigma_noise > 0.0 {
        let normal = Normal::new(0.0, schedule.sigma_noise).expect("valid sigma");
        for v in &mut img {
            *v += normal.sample(rng);
        }
    }
    if schedule.rotation_flip || schedule.jitter || schedule.sigma_noise > 0.0 {
        for v in &mut img {
            *v = v.clamp(0.0, 1.0);
        }
    }
    img
}

/// Metrics recorded after each epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean per-example training loss over the epoch.
    pub train_loss: f64,
    /// Test accuracy (classification) or mean per-pixel MSE (regression),
    /// when a test set was supplied.
    pub test_metric: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: WeightSet,
    pub history: Vec<EpochMetrics>,
}

/// Per-example stochastic gradient descent (`K = 1`) in epoch order with a
/// seeded reshuffle per epoch. The step counter `k` never resets, so the
/// decaying schedule spans the whole run. Augmentation and dropout apply to
/// training passes only.
pub fn sgd_train(
    initial: WeightSet,
    train: &Dataset,
    test: Option<&Dataset>,
    config: &FitDnnConfig,
    schedule: &TrainSchedule,
    loss: Loss,
) -> Result<TrainOutcome> {
    sgd_train_with(initial, train, test, config, schedule, loss, |_| {})
}

/// [`sgd_train`] with a per-epoch observer (progress lines, incremental
/// metric files).
pub fn sgd_train_with<F>(
    initial: WeightSet,
    train: &Dataset,
    test: Option<&Dataset>,
    config: &FitDnnConfig,
    schedule: &TrainSchedule,
    loss: Loss,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochMetrics),
{
    if train.len() == 0 {
        return Err(FitDnnError::InvalidConfig("empty training set".into()));
    }
    if !(0.0..1.0).contains(&schedule.dropout_rate) {
        return Err(FitDnnError::InvalidConfig(
            "dropout rate must lie in [0, 1)".into(),
        ));
    }
    train.check_compatible(config)?;
    if let Some(test) = test {
        test.check_compatible(config)?;
    }
    let mut weights = initial;
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.rng_seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(schedule.epochs);
    let mut k: u64 = 0;

    for epoch in 1..=schedule.epochs {
        // Fisher-Yates reshuffle, seeded through the single training stream
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut loss_sum = 0.0;
        for &idx in &order {
            k += 1;
            let input = train.input(idx);
            let augmented;
            let u: &[f64] = match (train.image_shape(), schedule.augments_inputs()) {
                (Some(shape), true) => {
                    augmented = augment(input, shape, schedule, &mut rng);
                    &augmented
                }
                _ => input,
            };
            let mask = if schedule.dropout_rate > 0.0 {
                Some(DropoutMask::sample(config, schedule.dropout_rate, &mut rng))
            } else {
                None
            };
            let target = train.target(idx);
            let state = forward(&weights, u, config, mask.as_ref())?;
            let value = loss_value(&state.y_hat, &target, loss)?;
            if !value.is_finite() {
                return Err(FitDnnError::Training(format!(
                    "non-finite loss at epoch {epoch}, step {k}, example {idx}"
                )));
            }
            loss_sum += value;
            let grad = backprop_masked(
                &state,
                &weights,
                u,
                &target,
                loss,
                config,
                true,
                mask.as_ref(),
            )?;
            apply_gradient_step(&mut weights, &grad, schedule.learning_rate(k));
        }
        let test_metric = match test {
            Some(test) => Some(evaluate(&weights, test, config)?.metric),
            None => None,
        };
        let metrics = EpochMetrics {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            test_metric,
        };
        on_epoch(&metrics);
        history.push(metrics);
    }
    Ok(TrainOutcome { weights, history })
}

/// Evaluation report: accuracy plus confusion counts for classification,
/// mean per-pixel squared error for regression.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub metric: f64,
    /// `confusion[actual][predicted]`, classification only.
    pub confusion: Option<Vec<Vec<usize>>>,
    /// Predicted class per example, classification only.
    pub predictions: Option<Vec<usize>>,
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

/// Evaluate on a dataset without augmentation or dropout. Examples are
/// processed in parallel with read-only weights and reduced in index order.
pub fn evaluate(weights: &WeightSet, dataset: &Dataset, config: &FitDnnConfig) -> Result<EvalReport> {
    dataset.check_compatible(config)?;
    let p = config.output_dim;
    match dataset.targets() {
        Targets::Classes(labels) => {
            let predictions: Vec<usize> = (0..dataset.len())
                .into_par_iter()
                .map(|i| {
                    let state = forward(weights, dataset.input(i), config, None)?;
                    Ok(argmax(&state.y_hat))
                })
                .collect::<Result<_>>()?;
            let mut confusion = vec![vec![0usize; p]; p];
            let mut correct = 0usize;
            for (i, &pred) in predictions.iter().enumerate() {
                confusion[labels[i]][pred] += 1;
                if pred == labels[i] {
                    correct += 1;
                }
            }
            Ok(EvalReport {
                metric: correct as f64 / dataset.len() as f64,
                confusion: Some(confusion),
                predictions: Some(predictions),
            })
        }
        Targets::Vectors(targets) => {
            let errors: Vec<f64> = (0..dataset.len())
                .into_par_iter()
                .map(|i| {
                    let state = forward(weights, dataset.input(i), config, None)?;
                    let y = &targets[i];
                    let sq: f64 = state
                        .y_hat
                        .iter()
                        .zip(y)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    Ok(sq / p as f64)
                })
                .collect::<Result<_>>()?;
            Ok(EvalReport {
                metric: errors.iter().sum::<f64>() / dataset.len() as f64,
                confusion: None,
                predictions: None,
            })
        }
    }
}
