//! Forward evaluators: the small-separation discrete network, the map-limit
//! network, and the sub-step delay-system integrator used as an independent
//! oracle.
//!
//! The discrete network advances node states with
//! `x^l_n = exp(-alpha*theta) * x^l_{n-1} + Phi * f(a^l_n)` where
//! `Phi = (1 - exp(-alpha*theta)) / alpha`; the first node of a layer couples
//! to the last node of the preceding layer. In the map limit the inertial
//! couplings vanish and `x^l_n = f(a^l_n) / alpha`.

use crate::error::{FitDnnError, Result};
use crate::model::{FitDnnConfig, Matrix, NetworkState, OutputActivation, ThetaMode, WeightSet};
use crate::signals::SystemSignals;
use crate::topology::{valid_node_range, DiagonalWeights};
use crate::training::output_activation;

/// Per-node multipliers applied to hidden node states during training
/// (inverted dropout: 0 for dropped nodes, `1/(1-rate)` for kept ones).
#[derive(Debug, Clone)]
pub struct DropoutMask {
    pub factors: Vec<Vec<f64>>,
}

impl DropoutMask {
    pub fn sample<R: rand::Rng>(config: &FitDnnConfig, rate: f64, rng: &mut R) -> Self {
        let keep_scale = 1.0 / (1.0 - rate);
        let factors = (0..config.hidden_layers)
            .map(|_| {
                (0..config.nodes_per_layer)
                    .map(|_| {
                        if rng.gen::<f64>() < rate {
                            0.0
                        } else {
                            keep_scale
                        }
                    })
                    .collect()
            })
            .collect();
        DropoutMask { factors }
    }

    #[inline]
    pub fn factor(&self, layer: usize, node: usize) -> f64 {
        self.factors[layer][node]
    }
}

/// Hidden activations `a^l = W^l * [x^{l-1}; 1]` via the diagonal storage,
/// cost `O(N * D)`.
pub(crate) fn hidden_activations(dw: &DiagonalWeights, x_prev: &[f64]) -> Vec<f64> {
    let n = x_prev.len();
    let mut a = dw.bias().to_vec();
    for (d, &off) in dw.offsets().iter().enumerate() {
        if let Some((lo, hi)) = valid_node_range(n, off) {
            let diag = dw.diagonal(d);
            for node in lo..=hi {
                a[node] += diag[node - lo] * x_prev[(node as i64 - off) as usize];
            }
        }
    }
    a
}

fn forward_inner(
    weights: &WeightSet,
    u: &[f64],
    config: &FitDnnConfig,
    mask: Option<&DropoutMask>,
) -> Result<NetworkState> {
    weights.validate_against(config)?;
    if u.len() != config.input_dim {
        return Err(FitDnnError::Dimension(format!(
            "input has length {}, expected {}",
            u.len(),
            config.input_dim
        )));
    }
    let n = config.nodes_per_layer;
    let layers = config.hidden_layers;
    let a_in = weights.w_in.affine_apply(u)?;

    let mut a_hidden: Vec<Vec<f64>> = Vec::with_capacity(layers);
    let mut x_hidden: Vec<Vec<f64>> = Vec::with_capacity(layers);

    let decay = config.decay();
    let phi = config.phi();
    let inv_alpha = 1.0 / config.alpha;

    for layer in 0..layers {
        let a: Vec<f64> = if layer == 0 {
            a_in.iter().map(|&v| config.preprocessing.apply(v)).collect()
        } else {
            hidden_activations(&weights.hidden[layer - 1], &x_hidden[layer - 1])
        };
        for (node, &v) in a.iter().enumerate() {
            if !v.is_finite() {
                return Err(FitDnnError::NonFinite {
                    layer: layer + 1,
                    node: node + 1,
                });
            }
        }
        let mut x = vec![0.0; n];
        match config.theta_mode {
            ThetaMode::SmallTheta => {
                // the chain enters each layer from the previous layer's last node
                let mut carry = if layer == 0 {
                    config.x0
                } else {
                    x_hidden[layer - 1][n - 1]
                };
                for node in 0..n {
                    let mut v = decay * carry + phi * config.activation.apply(a[node]);
                    if let Some(mask) = mask {
                        v *= mask.factor(layer, node);
                    }
                    x[node] = v;
                    carry = v;
                }
            }
            ThetaMode::MapLimit => {
                for node in 0..n {
                    let mut v = inv_alpha * config.activation.apply(a[node]);
                    if let Some(mask) = mask {
                        v *= mask.factor(layer, node);
                    }
                    x[node] = v;
                }
            }
        }
        for (node, &v) in x.iter().enumerate() {
            if !v.is_finite() {
                return Err(FitDnnError::NonFinite {
                    layer: layer + 1,
                    node: node + 1,
                });
            }
        }
        a_hidden.push(a);
        x_hidden.push(x);
    }

    let a_out = weights.w_out.affine_apply(&x_hidden[layers - 1])?;
    let y_hat = output_activation(&a_out, config.output_activation);
    Ok(NetworkState {
        mode: config.theta_mode,
        a_in,
        a_hidden,
        x_hidden,
        a_out,
        y_hat,
    })
}

/// Discrete-network forward pass with inertial couplings (requires
/// `theta_mode = small_theta`).
pub fn forward_small_theta(
    weights: &WeightSet,
    u: &[f64],
    config: &FitDnnConfig,
) -> Result<NetworkState> {
    if config.theta_mode != ThetaMode::SmallTheta {
        return Err(FitDnnError::Structure(
            "forward_small_theta requires theta_mode = small_theta".into(),
        ));
    }
    forward_inner(weights, u, config, None)
}

/// Map-limit forward pass: a classical sparse perceptron with per-node
/// scaling `1/alpha` (requires `theta_mode = map_limit`).
pub fn forward_map_limit(
    weights: &WeightSet,
    u: &[f64],
    config: &FitDnnConfig,
) -> Result<NetworkState> {
    if config.theta_mode != ThetaMode::MapLimit {
        return Err(FitDnnError::Structure(
            "forward_map_limit requires theta_mode = map_limit".into(),
        ));
    }
    forward_inner(weights, u, config, None)
}

/// Forward pass in the mode selected by the config, with an optional dropout
/// mask (training plumbing).
pub fn forward(
    weights: &WeightSet,
    u: &[f64],
    config: &FitDnnConfig,
    mask: Option<&DropoutMask>,
) -> Result<NetworkState> {
    forward_inner(weights, u, config, mask)
}

/// Sampled solution of the delay system on `[0, L*T]`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<f64>,
    substeps_per_theta: usize,
}

impl Trajectory {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn substeps_per_theta(&self) -> usize {
        self.substeps_per_theta
    }

    /// Node state `x^l_n` (`layer`, `node` are 1-based) sampled exactly
    /// on-grid at `t = (l-1)T + n*theta`.
    pub fn node_state(&self, layer: usize, node: usize, nodes_per_layer: usize) -> f64 {
        let idx = ((layer - 1) * nodes_per_layer + node) * self.substeps_per_theta;
        self.states[idx]
    }

    /// Linear interpolation between grid samples; clamps outside `[0, L*T]`.
    pub fn sample(&self, t: f64) -> f64 {
        let h = self.times[1] - self.times[0];
        let pos = t / h;
        if pos <= 0.0 {
            return self.states[0];
        }
        let last = self.states.len() - 1;
        if pos >= last as f64 {
            return self.states[last];
        }
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        self.states[i] * (1.0 - frac) + self.states[i + 1] * frac
    }
}

/// Integrate the delay system with exponential-Euler sub-steps of
/// `h = theta / substeps`; the drive is evaluated at sub-step midpoints and
/// delayed states are read from the already-computed trajectory by linear
/// interpolation. No history function is needed: every modulation vanishes
/// for `t <= T`, so `x(0) = x0` suffices.
pub fn integrate_dde(
    weights: &WeightSet,
    u: &[f64],
    config: &FitDnnConfig,
    substeps: usize,
) -> Result<Trajectory> {
    let signals = SystemSignals::build(weights, u, config)?;
    integrate_dde_signals(&signals, config, substeps)
}

/// Same as [`integrate_dde`] but reusing prebuilt signals.
pub fn integrate_dde_signals(
    signals: &SystemSignals,
    config: &FitDnnConfig,
    substeps: usize,
) -> Result<Trajectory> {
    if substeps == 0 {
        return Err(FitDnnError::InvalidConfig("substeps must be >= 1".into()));
    }
    let n = config.nodes_per_layer;
    let layers = config.hidden_layers;
    let m = substeps;
    let total = layers * n * m;
    let h = config.theta / m as f64;
    let decay_h = (-config.alpha * h).exp();
    let gain_h = (1.0 - decay_h) / config.alpha;

    let mut states = Vec::with_capacity(total + 1);
    states.push(config.x0);
    for j in 0..total {
        // the sub-step midpoint lies strictly inside theta-step j/m
        let theta_step = (j / m) as i64;
        let mut a =
            signals.input.step_value(theta_step) + signals.bias.step_value(theta_step);
        for (d, modulation) in signals.modulations.iter().enumerate() {
            let mod_v = modulation.step_value(theta_step);
            if mod_v != 0.0 {
                let shift = config.delays[d] * m;
                let base = j as i64 - shift as i64;
                if base < 0 {
                    return Err(FitDnnError::Invariant(format!(
                        "nonzero modulation {d} requests a state before t=0 at sub-step {j}"
                    )));
                }
                // tau_d is a multiple of theta, so the delayed midpoint falls
                // halfway between two grid samples
                let base = base as usize;
                let x_delayed = 0.5 * (states[base] + states[base + 1]);
                a += mod_v * x_delayed;
            }
        }
        let next = decay_h * states[j] + gain_h * config.activation.apply(a);
        if !next.is_finite() {
            return Err(FitDnnError::NonFinite {
                layer: j / (n * m) + 1,
                node: (j / m) % n + 1,
            });
        }
        states.push(next);
    }
    let times = (0..=total).map(|j| j as f64 * h).collect();
    Ok(Trajectory {
        times,
        states,
        substeps_per_theta: m,
    })
}

/// Node states extracted from a trajectory, with activations reconstructed
/// at step midpoints for diagnostics.
#[derive(Debug, Clone)]
pub struct NodeGrid {
    /// `x^l_n` for `l = 1..=L`, `n = 1..=N`.
    pub x: Vec<Vec<f64>>,
    /// The drive `a(t)` evaluated at the midpoint of each node's step.
    pub a_mid: Vec<Vec<f64>>,
}

/// Sample the node grid out of a trajectory (exactly on-grid) and rebuild
/// the drive at step midpoints.
pub fn read_nodes(
    traj: &Trajectory,
    signals: &SystemSignals,
    config: &FitDnnConfig,
) -> Result<NodeGrid> {
    let n = config.nodes_per_layer;
    let layers = config.hidden_layers;
    let m = traj.substeps_per_theta;
    let mut x = Vec::with_capacity(layers);
    let mut a_mid = Vec::with_capacity(layers);
    for layer in 1..=layers {
        let mut xs = Vec::with_capacity(n);
        let mut activations = Vec::with_capacity(n);
        for node in 1..=n {
            xs.push(traj.node_state(layer, node, n));
            let step = ((layer - 1) * n + node - 1) as i64;
            let mut a = signals.input.step_value(step) + signals.bias.step_value(step);
            for (d, modulation) in signals.modulations.iter().enumerate() {
                let mod_v = modulation.step_value(step);
                if mod_v != 0.0 {
                    // midpoint of the step minus the delay, in half-sample units
                    let pos2 = (2 * (step as usize) + 1) * m;
                    let shift2 = 2 * config.delays[d] * m;
                    if shift2 > pos2 {
                        return Err(FitDnnError::Invariant(
                            "delayed midpoint read before t=0".into(),
                        ));
                    }
                    let rel2 = pos2 - shift2;
                    let x_delayed = if rel2 % 2 == 0 {
                        traj.states[rel2 / 2]
                    } else {
                        0.5 * (traj.states[rel2 / 2] + traj.states[rel2 / 2 + 1])
                    };
                    a += mod_v * x_delayed;
                }
            }
            activations.push(a);
        }
        x.push(xs);
        a_mid.push(activations);
    }
    Ok(NodeGrid { x, a_mid })
}

/// Output head shared by the discrete network and the oracle path:
/// `a_out = W_out * [x^L; 1]`, `y_hat = f_out(a_out)`.
pub fn output_from_last_layer(
    x_last: &[f64],
    w_out: &Matrix,
    kind: OutputActivation,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let a_out = w_out.affine_apply(x_last)?;
    let y_hat = output_activation(&a_out, kind);
    Ok((a_out, y_hat))
}
