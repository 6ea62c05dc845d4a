//! Back-propagation for the folded network.
//!
//! Two error signals per node are needed: `delta^l_n = dE/da^l_n` and
//! `Delta^l_n = dE/dx^l_n`. The second exists because the inertial
//! connections bypass the activation function: each node state feeds its
//! within-layer successor (and the first node of the next layer) with weight
//! `exp(-alpha*theta)`. Only one layer of `Delta` values is alive at a time.
//!
//! With `include_local = false` the recursion drops every inertial term and
//! reduces to the classical perceptron equations
//! `delta^l_n = f'(a^l_n) * sum_i delta^{l+1}_i w^{l+1}_{in}`.
//! In the map limit the exact gradient has the same shape with the factor
//! `Phi` replaced by `1/alpha`.

use rayon::prelude::*;

use crate::dynamics::{forward, output_from_last_layer, DropoutMask};
use crate::error::{FitDnnError, Result};
use crate::model::{
    flatten_params, unflatten_params, FitDnnConfig, Matrix, NetworkState, OutputActivation,
    ThetaMode, WeightSet,
};
use crate::topology::{valid_node_range, DiagonalWeights};
use crate::training::{loss_value, Loss, Target};

/// Loss gradient with the same structure (and masking) as [`WeightSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub w_in: Matrix,
    pub hidden: Vec<DiagonalWeights>,
    pub w_out: Matrix,
}

impl GradientSet {
    pub fn zeros(config: &FitDnnConfig) -> Self {
        let w = WeightSet::zeros(config);
        GradientSet {
            w_in: w.w_in,
            hidden: w.hidden,
            w_out: w.w_out,
        }
    }

    /// Same ordering as [`flatten_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(self.w_in.data());
        for dw in &self.hidden {
            for d in 0..dw.num_diagonals() {
                out.extend_from_slice(dw.diagonal(d));
            }
            out.extend_from_slice(dw.bias());
        }
        out.extend_from_slice(self.w_out.data());
        out
    }
}

/// In-place SGD update `w -= eta * g`.
pub fn apply_gradient_step(weights: &mut WeightSet, grad: &GradientSet, eta: f64) {
    for (w, g) in weights.w_in.data_mut().iter_mut().zip(grad.w_in.data()) {
        *w -= eta * g;
    }
    for (dw, gd) in weights.hidden.iter_mut().zip(&grad.hidden) {
        for d in 0..dw.num_diagonals() {
            for (w, g) in dw.diagonal_mut(d).iter_mut().zip(gd.diagonal(d)) {
                *w -= eta * g;
            }
        }
        for (w, g) in dw.bias_mut().iter_mut().zip(gd.bias()) {
            *w -= eta * g;
        }
    }
    for (w, g) in weights.w_out.data_mut().iter_mut().zip(grad.w_out.data()) {
        *w -= eta * g;
    }
}

fn check_loss_pairing(loss: Loss, output: OutputActivation) -> Result<()> {
    let ok = matches!(
        (loss, output),
        (Loss::CrossEntropy, OutputActivation::Softmax)
            | (Loss::Mse, OutputActivation::Clip01)
            | (Loss::Mse, OutputActivation::Identity)
    );
    if ok {
        Ok(())
    } else {
        Err(FitDnnError::Structure(format!(
            "unsupported loss/output pair {loss:?}/{output:?}"
        )))
    }
}

/// `delta_out = dE/da_out`. For cross-entropy + softmax and MSE + identity
/// this is `y_hat - y`; the clipping output additionally zeroes components
/// whose activation sits in a flat region (outside `[0, 1]`).
fn output_error(
    a_out: &[f64],
    y_hat: &[f64],
    target: &Target,
    loss: Loss,
    output: OutputActivation,
) -> Result<Vec<f64>> {
    check_loss_pairing(loss, output)?;
    let p = y_hat.len();
    let y = target.as_vector(p)?;
    let mut delta: Vec<f64> = y_hat.iter().zip(&y).map(|(&yh, &yt)| yh - yt).collect();
    if output == OutputActivation::Clip01 {
        for (dp, &a) in delta.iter_mut().zip(a_out) {
            // the boundary points belong to the linear region
            if !(0.0..=1.0).contains(&a) {
                *dp = 0.0;
            }
        }
    }
    Ok(delta)
}

/// Backward sum `sum_i delta^{l+1}_i w^{l+1}_{in}` computed over the stored
/// diagonals only, `O(N * D)` per layer.
fn diagonal_backward_sum(dw: &DiagonalWeights, delta_next: &[f64]) -> Vec<f64> {
    let n = delta_next.len();
    let mut out = vec![0.0; n];
    for (d, &off) in dw.offsets().iter().enumerate() {
        if let Some((lo, hi)) = valid_node_range(n, off) {
            let diag = dw.diagonal(d);
            for i in lo..=hi {
                let src = (i as i64 - off) as usize;
                out[src] += delta_next[i] * diag[i - lo];
            }
        }
    }
    out
}

/// Gradient of the per-example loss for the forward record in `state`.
///
/// With `include_local = true` and small-separation mode this is the exact
/// gradient of the discrete network; in map-limit mode it is the exact
/// classical gradient regardless of the flag.
pub fn backprop(
    state: &NetworkState,
    weights: &WeightSet,
    u: &[f64],
    target: &Target,
    loss: Loss,
    config: &FitDnnConfig,
    include_local: bool,
) -> Result<GradientSet> {
    backprop_masked(state, weights, u, target, loss, config, include_local, None)
}

/// [`backprop`] with an optional dropout mask matching the forward pass.
#[allow(clippy::too_many_arguments)]
pub fn backprop_masked(
    state: &NetworkState,
    weights: &WeightSet,
    u: &[f64],
    target: &Target,
    loss: Loss,
    config: &FitDnnConfig,
    include_local: bool,
    mask: Option<&DropoutMask>,
) -> Result<GradientSet> {
    if state.mode != config.theta_mode {
        return Err(FitDnnError::Structure(
            "network state was produced in a different theta mode".into(),
        ));
    }
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

    // Step 1: output error signals.
    let delta_out = output_error(
        &state.a_out,
        &state.y_hat,
        target,
        loss,
        config.output_activation,
    )?;

    let mut grad = GradientSet::zeros(config);

    // Output weight gradient: dE/dw_out[p][j] = delta_out[p] * x^L_j (with
    // the on-node x^L_{N+1} = 1 for the bias column).
    let x_last = &state.x_hidden[layers - 1];
    for p in 0..config.output_dim {
        let row = grad.w_out.row_mut(p);
        for j in 0..n {
            row[j] = delta_out[p] * x_last[j];
        }
        row[n] = delta_out[p];
    }

    // chain factors for the backward recursion
    let (decay, factor) = match (config.theta_mode, include_local) {
        (ThetaMode::SmallTheta, true) => (config.decay(), config.phi()),
        (ThetaMode::SmallTheta, false) => (0.0, 1.0),
        (ThetaMode::MapLimit, _) => (0.0, 1.0 / config.alpha),
    };
    let node_factor = |layer: usize, node: usize| -> f64 {
        mask.map_or(1.0, |m| m.factor(layer, node))
    };

    // Steps 2 and 3: walk the hidden layers backwards. `delta` holds the
    // finished error signals of layer `l+1` while computing layer `l`.
    let mut delta: Vec<f64> = vec![0.0; n];
    let mut delta_first_downstream = 0.0; // Delta^{l+1}_1 from the previous pass
    for layer in (0..layers).rev() {
        let upstream: Vec<f64> = if layer == layers - 1 {
            (0..n)
                .map(|j| {
                    (0..config.output_dim)
                        .map(|p| delta_out[p] * weights.w_out.get(p, j))
                        .sum()
                })
                .collect()
        } else {
            diagonal_backward_sum(&weights.hidden[layer], &delta)
        };

        let mut big_delta = vec![0.0; n];
        for node in (0..n).rev() {
            let local = if node == n - 1 {
                if layer == layers - 1 {
                    0.0
                } else {
                    // connection from x^l_N into x^{l+1}_1
                    decay * node_factor(layer + 1, 0) * delta_first_downstream
                }
            } else {
                decay * node_factor(layer, node + 1) * big_delta[node + 1]
            };
            big_delta[node] = local + upstream[node];
        }
        delta_first_downstream = big_delta[0];

        let a = &state.a_hidden[layer];
        for node in 0..n {
            delta[node] = big_delta[node]
                * node_factor(layer, node)
                * factor
                * config.activation.derivative(a[node]);
        }

        if layer > 0 {
            // hidden weight gradient: dE/dv^l_{d,i} = delta^l_i * x^{l-1}_{i-off}
            let x_prev = &state.x_hidden[layer - 1];
            let gd = &mut grad.hidden[layer - 1];
            for (d, &off) in gd.offsets().to_vec().iter().enumerate() {
                if let Some((lo, hi)) = valid_node_range(n, off) {
                    let gdiag = gd.diagonal_mut(d);
                    for i in lo..=hi {
                        let src = (i as i64 - off) as usize;
                        gdiag[i - lo] = delta[i] * x_prev[src];
                    }
                }
            }
            gd.bias_mut().copy_from_slice(&delta);
        }
    }

    // Step 4 (input block): dE/dw_in[n][m] = delta^1_n g'(a_in_n) u_m.
    for node in 0..n {
        let scale = delta[node] * config.preprocessing.derivative(state.a_in[node]);
        let row = grad.w_in.row_mut(node);
        for (mcol, &um) in u.iter().enumerate() {
            row[mcol] = scale * um;
        }
        row[config.input_dim] = scale;
    }

    Ok(grad)
}

/// Per-example loss of the discrete network at `weights`.
pub fn network_loss(
    weights: &WeightSet,
    u: &[f64],
    target: &Target,
    loss: Loss,
    config: &FitDnnConfig,
) -> Result<f64> {
    let state = forward(weights, u, config, None)?;
    loss_value(&state.y_hat, target, loss)
}

/// Per-example loss with the delay-system oracle as the forward pass.
pub fn dde_loss(
    weights: &WeightSet,
    u: &[f64],
    target: &Target,
    loss: Loss,
    config: &FitDnnConfig,
    substeps: usize,
) -> Result<f64> {
    let traj = crate::dynamics::integrate_dde(weights, u, config, substeps)?;
    let n = config.nodes_per_layer;
    let x_last: Vec<f64> = (1..=n)
        .map(|node| traj.node_state(config.hidden_layers, node, n))
        .collect();
    let (_, y_hat) = output_from_last_layer(&x_last, &weights.w_out, config.output_activation)?;
    loss_value(&y_hat, target, loss)
}

/// Which forward path the finite-difference check differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdEvaluator {
    DiscreteNetwork,
    /// Re-integrates the delay system per perturbation; restrict to a
    /// parameter subset to bound runtime.
    DdeOracle { substeps: usize },
}

/// Central differences over the flattened parameter vector. Entries not in
/// `subset` are absent.
#[derive(Debug, Clone)]
pub struct FdGradient {
    entries: Vec<Option<f64>>,
}

impl FdGradient {
    pub fn entries(&self) -> &[Option<f64>] {
        &self.entries
    }

    /// Cosine similarity with a backprop gradient, restricted to the
    /// computed subset.
    pub fn cosine_with(&self, grad: &GradientSet) -> Option<f64> {
        let flat = grad.flatten();
        let (fd, bp): (Vec<f64>, Vec<f64>) = self
            .entries
            .iter()
            .zip(&flat)
            .filter_map(|(fd, &g)| fd.map(|v| (v, g)))
            .unzip();
        cosine_between(&fd, &bp)
    }

    /// Max relative component error against a backprop gradient on the
    /// computed subset: `|fd - g| / max(|fd|, |g|, floor)`.
    pub fn max_relative_error(&self, grad: &GradientSet, floor: f64) -> f64 {
        let flat = grad.flatten();
        self.entries
            .iter()
            .zip(&flat)
            .filter_map(|(fd, &g)| fd.map(|v| (v - g).abs() / v.abs().max(g.abs()).max(floor)))
            .fold(0.0, f64::max)
    }
}

/// Symmetric difference `(f(x+h) - f(x-h)) / 2h` of a scalar function.
pub fn central_difference<F>(f: F, x: f64, h: f64) -> f64
where
    F: Fn(f64) -> f64,
{
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Central finite differences of the per-example loss. The step for
/// parameter `i` is `h * max(1, |w_i|)`.
#[allow(clippy::too_many_arguments)]
pub fn finite_diff_gradient(
    weights: &WeightSet,
    u: &[f64],
    target: &Target,
    loss: Loss,
    config: &FitDnnConfig,
    evaluator: FdEvaluator,
    h: f64,
    subset: Option<&[usize]>,
) -> Result<FdGradient> {
    if !(h > 0.0) {
        return Err(FitDnnError::InvalidConfig("fd step must be > 0".into()));
    }
    check_loss_pairing(loss, config.output_activation)?;
    let flat = flatten_params(weights);
    let indices: Vec<usize> = match subset {
        Some(s) => {
            if let Some(&bad) = s.iter().find(|&&i| i >= flat.len()) {
                return Err(FitDnnError::Structure(format!(
                    "subset index {bad} out of range ({} parameters)",
                    flat.len()
                )));
            }
            s.to_vec()
        }
        None => (0..flat.len()).collect(),
    };

    let eval = |v: &[f64]| -> Result<f64> {
        let w = unflatten_params(config, v)?;
        match evaluator {
            FdEvaluator::DiscreteNetwork => network_loss(&w, u, target, loss, config),
            FdEvaluator::DdeOracle { substeps } => {
                dde_loss(&w, u, target, loss, config, substeps)
            }
        }
    };

    let computed: Vec<(usize, f64)> = indices
        .par_iter()
        .map(|&i| {
            let step = h * flat[i].abs().max(1.0);
            let mut plus = flat.clone();
            plus[i] += step;
            let mut minus = flat.clone();
            minus[i] -= step;
            Ok((i, (eval(&plus)? - eval(&minus)?) / (2.0 * step)))
        })
        .collect::<Result<_>>()?;

    let mut entries = vec![None; flat.len()];
    for (i, v) in computed {
        entries[i] = Some(v);
    }
    Ok(FdGradient { entries })
}

/// `<a, b> / (|a| |b|)`; `None` when either vector is zero.
pub fn cosine_between(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some(dot / (na * nb))
    }
}

/// Cosine similarity of two gradients over the flattened trainable set.
pub fn cosine_similarity(g1: &GradientSet, g2: &GradientSet) -> Option<f64> {
    cosine_between(&g1.flatten(), &g2.flatten())
}
