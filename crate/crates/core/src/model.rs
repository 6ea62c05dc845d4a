//! Configuration and parameter containers shared by all other modules.
//!
//! A Fit-DNN folds an `L`-layer perceptron with `N` nodes per hidden layer
//! into a single delay system. One hidden layer occupies a time interval of
//! length `T = N * theta`; virtual node `n` of layer `l` is the system state
//! sampled at `t = (l-1)T + n*theta`. The trainable parameters are a dense
//! input matrix, `L-1` sparse diagonal hidden matrices (one diagonal per
//! delay loop) and a dense output matrix.

use serde::{Deserialize, Serialize};

use crate::error::{FitDnnError, Result};
use crate::topology::DiagonalWeights;

/// Hidden-layer activation `f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sin,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Sin => a.sin(),
            Activation::Tanh => a.tanh(),
            Activation::Relu => a.max(0.0),
        }
    }

    /// Derivative at `a`. The ReLU derivative at 0 is taken as 0.
    pub fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Sin => a.cos(),
            Activation::Tanh => {
                let t = a.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Input preprocessing `g` applied to the first-layer activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preprocessing {
    Tanh,
    Identity,
}

impl Preprocessing {
    pub fn apply(self, a: f64) -> f64 {
        match self {
            Preprocessing::Tanh => a.tanh(),
            Preprocessing::Identity => a,
        }
    }

    pub fn derivative(self, a: f64) -> f64 {
        match self {
            Preprocessing::Tanh => {
                let t = a.tanh();
                1.0 - t * t
            }
            Preprocessing::Identity => 1.0,
        }
    }
}

/// Output nonlinearity `f_out`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Softmax,
    Clip01,
    Identity,
}

/// Which forward map relates consecutive virtual nodes.
///
/// `SmallTheta` keeps the inertial `exp(-alpha*theta)` couplings between
/// neighboring nodes; `MapLimit` is the large-separation limit where the
/// network reduces to a classical sparse perceptron `x = f(a) / alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaMode {
    SmallTheta,
    MapLimit,
}

/// All hyperparameters of a Fit-DNN instance.
///
/// The layer emulation interval `T = N * theta` is always derived via
/// [`FitDnnConfig::layer_interval`], never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDnnConfig {
    /// Time scale `alpha` of the linear decay (must be > 0).
    pub alpha: f64,
    /// Node separation `theta` (must be > 0).
    pub theta: f64,
    /// Nodes per hidden layer `N`.
    pub nodes_per_layer: usize,
    /// Number of hidden layers `L`.
    pub hidden_layers: usize,
    /// Input dimension `M`.
    pub input_dim: usize,
    /// Output dimension `P`.
    pub output_dim: usize,
    /// Delay step counts `n_d`, strictly increasing, each in `[1, 2N-1]`.
    /// Delay `d` has length `tau_d = n_d * theta` and realizes one diagonal
    /// of every hidden weight matrix.
    pub delays: Vec<usize>,
    pub activation: Activation,
    pub preprocessing: Preprocessing,
    pub output_activation: OutputActivation,
    /// Initial state `x(0)`.
    pub x0: f64,
    pub theta_mode: ThetaMode,
}

impl FitDnnConfig {
    /// Layer emulation interval `T = N * theta`.
    pub fn layer_interval(&self) -> f64 {
        self.nodes_per_layer as f64 * self.theta
    }

    /// Number of delay loops `D`.
    pub fn num_delays(&self) -> usize {
        self.delays.len()
    }

    /// Inertial coupling weight `exp(-alpha * theta)`.
    pub fn decay(&self) -> f64 {
        (-self.alpha * self.theta).exp()
    }

    /// Integrated nonlinearity gain `Phi = (1 - exp(-alpha*theta)) / alpha`.
    pub fn phi(&self) -> f64 {
        (1.0 - self.decay()) / self.alpha
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.nodes_per_layer;
        if !(self.alpha > 0.0) {
            return Err(FitDnnError::InvalidConfig("alpha must be > 0".into()));
        }
        if !(self.theta > 0.0) {
            return Err(FitDnnError::InvalidConfig("theta must be > 0".into()));
        }
        if n == 0 {
            return Err(FitDnnError::InvalidConfig(
                "nodes_per_layer must be >= 1".into(),
            ));
        }
        if self.hidden_layers == 0 {
            return Err(FitDnnError::InvalidConfig(
                "hidden_layers must be >= 1".into(),
            ));
        }
        if self.output_dim == 0 {
            return Err(FitDnnError::InvalidConfig("output_dim must be >= 1".into()));
        }
        if self.delays.len() > 2 * n - 1 {
            return Err(FitDnnError::InvalidConfig(format!(
                "{} delays requested but only {} distinct diagonals exist",
                self.delays.len(),
                2 * n - 1
            )));
        }
        for pair in self.delays.windows(2) {
            if pair[1] <= pair[0] {
                return Err(FitDnnError::InvalidConfig(
                    "delays must be strictly increasing".into(),
                ));
            }
        }
        if let (Some(first), Some(last)) = (self.delays.first(), self.delays.last()) {
            if *first < 1 || *last > 2 * n - 1 {
                return Err(FitDnnError::InvalidConfig(format!(
                    "delays must lie in [1, {}]",
                    2 * n - 1
                )));
            }
        }
        Ok(())
    }
}

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(FitDnnError::Dimension("ragged matrix rows".into()));
        }
        Ok(Matrix {
            rows: r,
            cols: c,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `y = A * [v; 1]`, treating the last column as a bias.
    pub fn affine_apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() + 1 != self.cols {
            return Err(FitDnnError::Dimension(format!(
                "affine_apply: input length {} does not match {} columns",
                v.len(),
                self.cols
            )));
        }
        let mut out = Vec::with_capacity(self.rows);
        for r in 0..self.rows {
            let row = self.row(r);
            let mut acc = row[self.cols - 1];
            for (w, x) in row[..self.cols - 1].iter().zip(v) {
                acc += w * x;
            }
            out.push(acc);
        }
        Ok(out)
    }
}

/// The full trainable parameter vector: input matrix, `L-1` diagonal hidden
/// matrices and output matrix. Biases live in the last column of each block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSet {
    /// `N x (M+1)`; column `M` holds the first-layer bias.
    pub w_in: Matrix,
    /// Hidden matrices for layers `l = 2..=L`, stored as diagonals.
    pub hidden: Vec<DiagonalWeights>,
    /// `P x (N+1)`; column `N` holds the output bias.
    pub w_out: Matrix,
}

impl WeightSet {
    pub fn zeros(config: &FitDnnConfig) -> Self {
        let n = config.nodes_per_layer;
        WeightSet {
            w_in: Matrix::zeros(n, config.input_dim + 1),
            hidden: (1..config.hidden_layers)
                .map(|_| DiagonalWeights::zeros(n, &config.delays))
                .collect(),
            w_out: Matrix::zeros(config.output_dim, n + 1),
        }
    }

    pub fn validate_against(&self, config: &FitDnnConfig) -> Result<()> {
        let n = config.nodes_per_layer;
        if self.w_in.rows() != n || self.w_in.cols() != config.input_dim + 1 {
            return Err(FitDnnError::Structure(format!(
                "input matrix is {}x{}, expected {}x{}",
                self.w_in.rows(),
                self.w_in.cols(),
                n,
                config.input_dim + 1
            )));
        }
        if self.hidden.len() + 1 != config.hidden_layers {
            return Err(FitDnnError::Structure(format!(
                "{} hidden matrices for {} hidden layers",
                self.hidden.len(),
                config.hidden_layers
            )));
        }
        for (i, dw) in self.hidden.iter().enumerate() {
            dw.validate_against(n, &config.delays).map_err(|e| {
                FitDnnError::Structure(format!("hidden matrix for layer {}: {e}", i + 2))
            })?;
        }
        if self.w_out.rows() != config.output_dim || self.w_out.cols() != n + 1 {
            return Err(FitDnnError::Structure(format!(
                "output matrix is {}x{}, expected {}x{}",
                self.w_out.rows(),
                self.w_out.cols(),
                config.output_dim,
                n + 1
            )));
        }
        Ok(())
    }

    /// Number of trainable parameters (masked diagonal positions excluded).
    pub fn param_count(&self) -> usize {
        self.w_in.rows() * self.w_in.cols()
            + self
                .hidden
                .iter()
                .map(|dw| dw.stored_entries())
                .sum::<usize>()
            + self.w_out.rows() * self.w_out.cols()
    }
}

/// Flatten a weight set into a parameter vector with a fixed ordering:
/// input weights row-major, then per hidden layer each diagonal in delay
/// order followed by the bias column, then output weights row-major.
pub fn flatten_params(weights: &WeightSet) -> Vec<f64> {
    let mut out = Vec::with_capacity(weights.param_count());
    out.extend_from_slice(weights.w_in.data());
    for dw in &weights.hidden {
        for d in 0..dw.num_diagonals() {
            out.extend_from_slice(dw.diagonal(d));
        }
        out.extend_from_slice(dw.bias());
    }
    out.extend_from_slice(weights.w_out.data());
    out
}

/// Inverse of [`flatten_params`]; fails if the vector length does not match
/// the structure implied by `config`.
pub fn unflatten_params(config: &FitDnnConfig, flat: &[f64]) -> Result<WeightSet> {
    let mut weights = WeightSet::zeros(config);
    let expected = weights.param_count();
    if flat.len() != expected {
        return Err(FitDnnError::Structure(format!(
            "parameter vector has length {}, expected {}",
            flat.len(),
            expected
        )));
    }
    let mut pos = 0;
    let take = |pos: &mut usize, len: usize| {
        let s = &flat[*pos..*pos + len];
        *pos += len;
        s
    };
    let len = weights.w_in.rows() * weights.w_in.cols();
    weights.w_in.data_mut().copy_from_slice(take(&mut pos, len));
    for dw in &mut weights.hidden {
        for d in 0..dw.num_diagonals() {
            let len = dw.diagonal(d).len();
            dw.diagonal_mut(d).copy_from_slice(take(&mut pos, len));
        }
        let n = dw.bias().len();
        dw.bias_mut().copy_from_slice(take(&mut pos, n));
    }
    let len = weights.w_out.rows() * weights.w_out.cols();
    weights.w_out.data_mut().copy_from_slice(take(&mut pos, len));
    Ok(weights)
}

/// Per-example forward record: activations and node states for every layer.
#[derive(Debug, Clone)]
pub struct NetworkState {
    pub mode: ThetaMode,
    /// Raw input activations `a_in` (before preprocessing), length `N`.
    pub a_in: Vec<f64>,
    /// Node activations `a^l_n`, `L` vectors of length `N`.
    pub a_hidden: Vec<Vec<f64>>,
    /// Node states `x^l_n`, `L` vectors of length `N`.
    pub x_hidden: Vec<Vec<f64>>,
    /// Output activations, length `P`.
    pub a_out: Vec<f64>,
    /// Output after `f_out`, length `P`.
    pub y_hat: Vec<f64>,
}
