//! Variance correction: the max-based trace penalty used during training and
//! the heteroscedastic diagonal correction used at prediction time.
//!
//! With `s(x) = ‖φ(x)‖²` the correction kernel is diagonal,
//! `c(x, x) = max(max_train s, s(x)) - s(x)`, which makes the corrected
//! prior variance `s(x) + c(x, x)` uniform over the training set.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::exact::LowRankPosterior;
use crate::linalg::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectionStats {
    pub train_max_sq_norm: f64,
    /// `c(xᵢ, xᵢ)` for the training inputs; not persisted.
    #[serde(skip)]
    pub per_point_c: Option<Vec<f64>>,
}

impl CorrectionStats {
    pub fn from_features(phi: &Matrix) -> Self {
        let s = phi.row_sq_norms();
        let max = s.iter().copied().fold(0.0, f64::max);
        CorrectionStats { train_max_sq_norm: max, per_point_c: Some(s.iter().map(|v| max - v).collect()) }
    }

    /// `c(x, x)` for a point with squared feature norm `sq_norm`.
    pub fn c(&self, sq_norm: f64) -> f64 {
        self.train_max_sq_norm.max(sq_norm) - sq_norm
    }
}

/// The diagonal-correction terms for the full training set and the trace of
/// their sum.
fn trace_c(sq_norms: &[f64]) -> (f64, usize) {
    let (mut arg, mut max) = (0, f64::NEG_INFINITY);
    for (i, &s) in sq_norms.iter().enumerate() {
        if s > max {
            max = s;
            arg = i;
        }
    }
    let tr = sq_norms.iter().map(|s| max - s).sum();
    (tr, arg)
}

/// `tr(C) / (2σ²)` over all rows of `phi`.
pub fn trace_penalty_full(phi: &Matrix, noise_var: f64) -> f64 {
    if phi.rows() == 0 {
        return 0.0;
    }
    trace_c(&phi.row_sq_norms()).0 / (2.0 * noise_var)
}

/// Stochastic penalty from a batch: the batch trace scaled by `n / b`, using
/// the batch maximum.
pub fn trace_penalty_batch(batch_phi: &Matrix, n_total: usize, noise_var: f64) -> f64 {
    let b = batch_phi.rows();
    if b == 0 {
        return 0.0;
    }
    scale(n_total, b) * trace_penalty_full(batch_phi, noise_var)
}

fn scale(n: usize, b: usize) -> f64 {
    if n == b {
        1.0
    } else {
        n as f64 / b as f64
    }
}

/// Subgradient of [`trace_penalty_full`] with respect to `phi` and the noise
/// variance. The maximum is attributed to its first occurrence: that row gets
/// coefficient `n - 1` on its squared norm, every other row `-1`.
pub fn penalty_cotangent(phi: &Matrix, noise_var: f64) -> (Matrix, f64) {
    let n = phi.rows();
    let mut g = Matrix::zeros(n, phi.cols());
    if n == 0 {
        return (g, 0.0);
    }
    let (tr, arg) = trace_c(&phi.row_sq_norms());
    for i in 0..n {
        let coef = if i == arg { (n - 1) as f64 } else { -1.0 };
        // d/dφᵢ of coef * ‖φᵢ‖² / (2σ²)
        let f = coef / noise_var;
        for (gij, pij) in g.row_mut(i).iter_mut().zip(phi.row(i)) {
            *gij = f * pij;
        }
    }
    (g, -tr / (2.0 * noise_var * noise_var))
}

/// Batch version of [`penalty_cotangent`], scaled by `n / b`.
pub fn penalty_cotangent_batch(batch_phi: &Matrix, n_total: usize, noise_var: f64) -> (Matrix, f64) {
    let (mut g, d) = penalty_cotangent(batch_phi, noise_var);
    let s = scale(n_total, batch_phi.rows());
    if s != 1.0 {
        g.scale(s);
    }
    (g, s * d)
}

/// `σ̂²(x*) = σ² + c(x*, x*)`.
pub fn corrected_noise(stats: &CorrectionStats, phi_star: &[f64], noise_var: f64) -> f64 {
    let s = crate::linalg::dot(phi_star, phi_star);
    noise_var + stats.c(s)
}

/// Corrected predictive mean and variance at one test point, built from the
/// training features directly.
pub fn predict_corrected(
    phi_train: &Matrix,
    y: &[f64],
    noise_var: f64,
    stats: &CorrectionStats,
    phi_star: &[f64],
) -> Result<(f64, f64)> {
    let post = LowRankPosterior::corrected(phi_train, y, noise_var, stats)?;
    post.predict_row(phi_star)
}
