//! Delay layout and the sparse diagonal hidden weight matrices.
//!
//! A hidden matrix `W^l` is `N x (N+1)`: one diagonal per delay loop plus a
//! bias column. Delay `d` with step count `n_d` populates the diagonal with
//! offset `n_d - N` (negative offsets lie above the main diagonal, positive
//! below). Entries that would connect non-consecutive layers are masked,
//! i.e. structurally absent.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FitDnnError, Result};
use crate::model::{FitDnnConfig, Matrix, WeightSet};

/// How delay step counts are picked from `{1, ..., 2N-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayStrategy {
    /// Sample without replacement from the uniform distribution.
    UniformNoReplacement,
    /// Deterministic spacing `floor((2N-1)/D)` between consecutive delays.
    Equidistant,
}

/// Pick `n_delays` distinct delay step counts for a layer of `n_nodes` nodes.
pub fn choose_delays(
    n_nodes: usize,
    n_delays: usize,
    strategy: DelayStrategy,
    rng_seed: u64,
) -> Result<Vec<usize>> {
    if n_nodes == 0 {
        return Err(FitDnnError::InvalidConfig("n_nodes must be >= 1".into()));
    }
    let max = 2 * n_nodes - 1;
    if n_delays == 0 || n_delays > max {
        return Err(FitDnnError::InvalidConfig(format!(
            "n_delays must lie in [1, {max}], got {n_delays}"
        )));
    }
    match strategy {
        DelayStrategy::UniformNoReplacement => {
            let mut pool: Vec<usize> = (1..=max).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            // partial Fisher-Yates: the first n_delays slots become the sample
            for i in 0..n_delays {
                let j = rng.gen_range(i..pool.len());
                pool.swap(i, j);
            }
            let mut delays = pool[..n_delays].to_vec();
            delays.sort_unstable();
            Ok(delays)
        }
        DelayStrategy::Equidistant => {
            let spacing = max / n_delays;
            Ok((1..=n_delays).map(|d| d * spacing).collect())
        }
    }
}

/// One hidden weight matrix stored as diagonals plus a bias column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalWeights {
    /// Logical matrix size `N` (dense shape is `N x (N+1)`).
    n: usize,
    /// Diagonal offsets `n_d - N`, ascending, in `[-(N-1), N-1]`.
    offsets: Vec<i64>,
    /// Per delay, the stored values for target nodes in the valid range.
    diagonals: Vec<Vec<f64>>,
    /// Bias column, length `N`.
    bias: Vec<f64>,
}

/// Inclusive 0-based range of target nodes with an unmasked entry on the
/// diagonal with `offset`, or `None` if the diagonal is empty.
pub fn valid_node_range(n: usize, offset: i64) -> Option<(usize, usize)> {
    let lo = offset.max(0) as usize;
    let hi_signed = (n as i64 - 1) + offset.min(0);
    if hi_signed < lo as i64 {
        return None;
    }
    Some((lo, hi_signed as usize))
}

impl DiagonalWeights {
    pub fn zeros(n: usize, delays: &[usize]) -> Self {
        let offsets: Vec<i64> = delays.iter().map(|&nd| nd as i64 - n as i64).collect();
        let diagonals = offsets
            .iter()
            .map(|&off| {
                let len = valid_node_range(n, off).map_or(0, |(lo, hi)| hi - lo + 1);
                vec![0.0; len]
            })
            .collect();
        DiagonalWeights {
            n,
            offsets,
            diagonals,
            bias: vec![0.0; n],
        }
    }

    pub fn logical_size(&self) -> usize {
        self.n
    }

    pub fn num_diagonals(&self) -> usize {
        self.offsets.len()
    }

    pub fn offsets(&self) -> &[i64] {
        &self.offsets
    }

    pub fn diagonal(&self, d: usize) -> &[f64] {
        &self.diagonals[d]
    }

    pub fn diagonal_mut(&mut self, d: usize) -> &mut [f64] {
        &mut self.diagonals[d]
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    /// Total stored values: unmasked diagonal entries plus the bias column.
    pub fn stored_entries(&self) -> usize {
        self.diagonals.iter().map(Vec::len).sum::<usize>() + self.n
    }

    /// Value of the entry on diagonal `d` targeting 0-based `node`; 0 if the
    /// position is masked.
    pub fn get(&self, d: usize, node: usize) -> f64 {
        match valid_node_range(self.n, self.offsets[d]) {
            Some((lo, hi)) if node >= lo && node <= hi => self.diagonals[d][node - lo],
            _ => 0.0,
        }
    }

    /// Set the entry on diagonal `d` targeting 0-based `node`; errors on a
    /// masked position.
    pub fn set(&mut self, d: usize, node: usize, value: f64) -> Result<()> {
        match valid_node_range(self.n, self.offsets[d]) {
            Some((lo, hi)) if node >= lo && node <= hi => {
                self.diagonals[d][node - lo] = value;
                Ok(())
            }
            _ => Err(FitDnnError::Structure(format!(
                "position (d={d}, node={node}) is masked"
            ))),
        }
    }

    pub fn validate_against(&self, n: usize, delays: &[usize]) -> Result<()> {
        if self.n != n {
            return Err(FitDnnError::Structure(format!(
                "logical size {} does not match N={n}",
                self.n
            )));
        }
        let expected: Vec<i64> = delays.iter().map(|&nd| nd as i64 - n as i64).collect();
        if self.offsets != expected {
            return Err(FitDnnError::Structure(
                "diagonal offsets do not match config delays".into(),
            ));
        }
        for (d, diag) in self.diagonals.iter().enumerate() {
            let len = valid_node_range(n, self.offsets[d]).map_or(0, |(lo, hi)| hi - lo + 1);
            if diag.len() != len {
                return Err(FitDnnError::Structure(format!(
                    "diagonal {d} stores {} values, expected {len}",
                    diag.len()
                )));
            }
        }
        if self.bias.len() != n {
            return Err(FitDnnError::Structure("bias column length mismatch".into()));
        }
        Ok(())
    }

    /// Expand to the dense `N x (N+1)` form. Nonzeros appear only at
    /// `(node, node - offset)` plus the bias column.
    pub fn to_dense(&self) -> Matrix {
        let n = self.n;
        let mut m = Matrix::zeros(n, n + 1);
        for (d, &off) in self.offsets.iter().enumerate() {
            if let Some((lo, hi)) = valid_node_range(n, off) {
                for node in lo..=hi {
                    let src = (node as i64 - off) as usize;
                    m.set(node, src, self.diagonals[d][node - lo]);
                }
            }
        }
        for node in 0..n {
            m.set(node, n, self.bias[node]);
        }
        m
    }

    /// Rebuild diagonal storage from a dense matrix. Errors if the matrix has
    /// a nonzero entry outside the structural support of `delays`.
    pub fn from_dense(dense: &Matrix, delays: &[usize]) -> Result<Self> {
        let n = dense.rows();
        if dense.cols() != n + 1 {
            return Err(FitDnnError::Dimension(format!(
                "dense hidden matrix must be N x (N+1), got {}x{}",
                dense.rows(),
                dense.cols()
            )));
        }
        let mut dw = DiagonalWeights::zeros(n, delays);
        let mut support = vec![vec![false; n + 1]; n];
        for (d, &off) in dw.offsets.clone().iter().enumerate() {
            if let Some((lo, hi)) = valid_node_range(n, off) {
                for node in lo..=hi {
                    let src = (node as i64 - off) as usize;
                    dw.diagonals[d][node - lo] = dense.get(node, src);
                    support[node][src] = true;
                }
            }
        }
        for node in 0..n {
            dw.bias[node] = dense.get(node, n);
            support[node][n] = true;
        }
        for node in 0..n {
            for col in 0..=n {
                if !support[node][col] && dense.get(node, col) != 0.0 {
                    return Err(FitDnnError::Structure(format!(
                        "dense entry ({node}, {col}) lies outside the diagonal support"
                    )));
                }
            }
        }
        Ok(dw)
    }
}

/// Xavier (uniform) initialization: every weight block is drawn uniformly
/// from `[-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))]`, biases are
/// zero. Diagonal matrices use the dense logical shape `N x N` for the fan
/// counts. Deterministic for a given seed.
pub fn xavier_init(config: &FitDnnConfig, rng_seed: u64) -> WeightSet {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let n = config.nodes_per_layer;
    let m = config.input_dim;
    let p = config.output_dim;
    let mut weights = WeightSet::zeros(config);

    let bound_in = (6.0 / (m + n) as f64).sqrt();
    for row in 0..n {
        for col in 0..m {
            let v = rng.gen_range(-bound_in..=bound_in);
            weights.w_in.set(row, col, v);
        }
    }

    let bound_hidden = (6.0 / (2 * n) as f64).sqrt();
    for dw in &mut weights.hidden {
        for d in 0..dw.num_diagonals() {
            for v in dw.diagonal_mut(d) {
                *v = rng.gen_range(-bound_hidden..=bound_hidden);
            }
        }
    }

    let bound_out = (6.0 / (n + p) as f64).sqrt();
    for row in 0..p {
        for col in 0..n {
            let v = rng.gen_range(-bound_out..=bound_out);
            weights.w_out.set(row, col, v);
        }
    }
    weights
}
