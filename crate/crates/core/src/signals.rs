//! Step-function time signals: the bridge between the network view and the
//! delay-system view.
//!
//! The input signal `J(t)` carries the preprocessed input over the first
//! layer interval `(0, T]`; each modulation `M_d(t)` replays one diagonal of
//! the hidden matrices over the later intervals; `b(t)` replays the hidden
//! biases. All three are piecewise constant with step length `theta` and use
//! the left-open right-closed convention: the value at a grid point `k*theta`
//! belongs to the step ending there.

use crate::error::{FitDnnError, Result};
use crate::model::{FitDnnConfig, Matrix, Preprocessing, WeightSet};
use crate::topology::{valid_node_range, DiagonalWeights};

/// A piecewise-constant signal with uniform step length.
///
/// `value(t) = values[k]` for `t` in `(t_start + k*step, t_start + (k+1)*step]`
/// and 0 outside the covered range.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSignal {
    step_length: f64,
    t_start: f64,
    values: Vec<f64>,
}

impl StepSignal {
    pub fn new(step_length: f64, t_start: f64, values: Vec<f64>) -> Self {
        assert!(step_length > 0.0, "step length must be positive");
        StepSignal {
            step_length,
            t_start,
            values,
        }
    }

    pub fn step_length(&self) -> f64 {
        self.step_length
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value by step index; 0 outside the stored range.
    #[inline]
    pub fn step_value(&self, k: i64) -> f64 {
        if k < 0 || k as usize >= self.values.len() {
            0.0
        } else {
            self.values[k as usize]
        }
    }

    /// Evaluate at time `t` (right-closed convention).
    pub fn value(&self, t: f64) -> f64 {
        let s = (t - self.t_start) / self.step_length;
        // ceil(s) - 1 maps (k, k+1] to k and puts grid points in the step
        // that ends there.
        let k = s.ceil() as i64 - 1;
        self.step_value(k)
    }

    /// Midpoint time of step `k`, handy for lossless resampling.
    pub fn step_midpoint(&self, k: usize) -> f64 {
        self.t_start + (k as f64 + 0.5) * self.step_length
    }
}

/// Build `J(t)`: `N` steps on `(0, T]` holding `g(W_in * [u; 1])`, zero
/// elsewhere.
pub fn build_input_signal(
    w_in: &Matrix,
    u: &[f64],
    preprocessing: Preprocessing,
    theta: f64,
) -> Result<StepSignal> {
    let raw = w_in.affine_apply(u).map_err(|_| {
        FitDnnError::Dimension(format!(
            "input vector has length {}, expected {}",
            u.len(),
            w_in.cols() - 1
        ))
    })?;
    let values = raw.into_iter().map(|a| preprocessing.apply(a)).collect();
    Ok(StepSignal::new(theta, 0.0, values))
}

/// Build the `D` modulation functions. Each covers `(0, L*T]`; the first
/// layer interval is identically zero and masked positions stay zero, so a
/// nonzero step at time `t` always reads a delayed state from the preceding
/// layer interval.
pub fn build_modulations(hidden: &[DiagonalWeights], config: &FitDnnConfig) -> Vec<StepSignal> {
    let n = config.nodes_per_layer;
    let l = config.hidden_layers;
    let d_count = config.num_delays();
    let mut signals = Vec::with_capacity(d_count);
    for d in 0..d_count {
        let mut values = vec![0.0; l * n];
        for (h, dw) in hidden.iter().enumerate() {
            // hidden[h] connects layer h+1 to layer h+2 (1-based l = h+2)
            let base = (h + 1) * n;
            if let Some((lo, hi)) = valid_node_range(n, dw.offsets()[d]) {
                for node in lo..=hi {
                    values[base + node] = dw.diagonal(d)[node - lo];
                }
            }
        }
        signals.push(StepSignal::new(config.theta, 0.0, values));
    }
    signals
}

/// Build `b(t)`: zero on `[0, T]`, then the bias column of each hidden layer.
pub fn build_bias_signal(hidden: &[DiagonalWeights], config: &FitDnnConfig) -> StepSignal {
    let n = config.nodes_per_layer;
    let l = config.hidden_layers;
    let mut values = vec![0.0; l * n];
    for (h, dw) in hidden.iter().enumerate() {
        let base = (h + 1) * n;
        values[base..base + n].copy_from_slice(dw.bias());
    }
    StepSignal::new(config.theta, 0.0, values)
}

/// The full drive of the delay system for one input example.
#[derive(Debug, Clone)]
pub struct SystemSignals {
    pub input: StepSignal,
    pub modulations: Vec<StepSignal>,
    pub bias: StepSignal,
}

impl SystemSignals {
    pub fn build(weights: &WeightSet, u: &[f64], config: &FitDnnConfig) -> Result<Self> {
        weights.validate_against(config)?;
        Ok(SystemSignals {
            input: build_input_signal(&weights.w_in, u, config.preprocessing, config.theta)?,
            modulations: build_modulations(&weights.hidden, config),
            bias: build_bias_signal(&weights.hidden, config),
        })
    }
}
