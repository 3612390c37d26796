//! Exact GP inference with the rank-r kernel `k(a, b) = ⟨φ(a), φ(b)⟩`.
//!
//! Every n×n quantity is reduced to the r×r matrix `Λ = ΦᵀΦ + σ²I` through
//! the matrix inversion and determinant lemmas, so one evaluation costs
//! O(nr²).

use serde::{Deserialize, Serialize};

use crate::correction::{corrected_noise, penalty_cotangent, trace_penalty_full, CorrectionStats};
use crate::data::Dataset;
use crate::error::{DbkError, Result};
use crate::linalg::{axpy, cholesky, dot, gemm, CholeskyFactor, Matrix, DEFAULT_JITTER};
use crate::nn::{adam_step, AdamState, FeatureMap};
use crate::predictive::{gaussian_nll, NoiseParam, PredictiveDistribution};
use crate::train::{self, Objective, TrainConfig, TrainLog};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn check_shapes(phi: &Matrix, y: &[f64], noise_var: f64) -> Result<()> {
    if phi.rows() != y.len() {
        return Err(DbkError::DimensionMismatch(format!("{} feature rows but {} targets", phi.rows(), y.len())));
    }
    if !(noise_var > 0.0) {
        return Err(DbkError::InvalidConfig(format!("noise variance must be positive, got {noise_var}")));
    }
    Ok(())
}

/// Factor of `Λ = ΦᵀΦ + σ²I`.
fn factor_lambda(phi: &Matrix, noise_var: f64) -> Result<CholeskyFactor> {
    let mut lambda = gemm(phi, phi, true, false)?;
    lambda.add_diagonal(noise_var);
    cholesky(&lambda, &DEFAULT_JITTER)
}

/// Log marginal likelihood `log N(y; 0, ΦΦᵀ + σ²I)`.
pub fn log_marginal_likelihood(phi: &Matrix, y: &[f64], noise_var: f64) -> Result<f64> {
    check_shapes(phi, y, noise_var)?;
    let chol = factor_lambda(phi, noise_var)?;
    let b = phi.tmatvec(y)?;
    let z = chol.solve_lower_vec(&b);
    Ok(lml_from_parts(phi, y, noise_var, &chol, &z))
}

fn lml_from_parts(phi: &Matrix, y: &[f64], noise_var: f64, chol: &CholeskyFactor, z: &[f64]) -> f64 {
    let (n, r) = (phi.rows() as f64, phi.cols() as f64);
    -0.5 * n * LN_2PI
        - 0.5 * (n - r) * noise_var.ln()
        - 0.5 * crate::linalg::logdet(chol)
        - dot(y, y) / (2.0 * noise_var)
        + dot(z, z) / (2.0 * noise_var)
}

/// Value and gradient of the log marginal likelihood.
#[derive(Clone, Debug, PartialEq)]
pub struct LmlGradient {
    pub value: f64,
    /// `∂ log p(y) / ∂Φ`.
    pub cotangent: Matrix,
    /// `∂ log p(y) / ∂σ²`.
    pub d_noise: f64,
}

/// Gradient of the log marginal likelihood with respect to `Φ` and `σ²`.
///
/// With `Σ = ΦΦᵀ + σ²I`, `β = Λ⁻¹Φᵀy` and `a = Σ⁻¹y = (y - Φβ)/σ²`:
/// `∂/∂Φ = a βᵀ - ΦΛ⁻¹` (using `Σ⁻¹Φ = ΦΛ⁻¹` and `Φᵀa = β`), and
/// `∂/∂σ² = -tr(Σ⁻¹)/2 + ‖a‖²/2` with `tr(Σ⁻¹) = (n - r + σ² tr Λ⁻¹)/σ²`.
pub fn lml_gradient(phi: &Matrix, y: &[f64], noise_var: f64) -> Result<LmlGradient> {
    check_shapes(phi, y, noise_var)?;
    let (n, r) = phi.shape();
    let chol = factor_lambda(phi, noise_var)?;
    let b = phi.tmatvec(y)?;
    let z = chol.solve_lower_vec(&b);
    let value = lml_from_parts(phi, y, noise_var, &chol, &z);
    let beta = chol.solve_upper_vec(&z);

    let mut a = phi.matvec(&beta)?;
    for (ai, yi) in a.iter_mut().zip(y) {
        *ai = (yi - *ai) / noise_var;
    }

    let lambda_inv = chol.inverse();
    let mut cot = gemm(phi, &lambda_inv, false, false)?;
    for i in 0..n {
        let row = cot.row_mut(i);
        for v in row.iter_mut() {
            *v = -*v;
        }
        axpy(a[i], &beta, row);
    }

    let tr_lambda_inv = lambda_inv.trace();
    let tr_sigma_inv = (n as f64 - r as f64 + noise_var * tr_lambda_inv) / noise_var;
    let d_noise = -0.5 * tr_sigma_inv + 0.5 * dot(&a, &a);
    Ok(LmlGradient { value, cotangent: cot, d_noise })
}

/// Cached weight-space posterior: factor of `Λ`, the weight mean `Λ⁻¹Φᵀy`
/// and the noise level. With correction stats the factor and mean are those
/// of the row-rescaled system `Φ̂ = D^{-1/2}Φ`, `ŷ = D^{-1/2}y`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowRankPosterior {
    pub lambda_chol: CholeskyFactor,
    pub projected_targets: Vec<f64>,
    pub noise_var: f64,
    pub correction: Option<CorrectionStats>,
}

impl LowRankPosterior {
    pub fn exact(phi: &Matrix, y: &[f64], noise_var: f64) -> Result<Self> {
        check_shapes(phi, y, noise_var)?;
        let chol = factor_lambda(phi, noise_var)?;
        let b = phi.tmatvec(y)?;
        let projected = chol.solve_vec(&b);
        Ok(LowRankPosterior { lambda_chol: chol, projected_targets: projected, noise_var, correction: None })
    }

    /// Posterior under the heteroscedastic noise `σ̂²(xᵢ) = σ² + c(xᵢ, xᵢ)`.
    pub fn corrected(phi: &Matrix, y: &[f64], noise_var: f64, stats: &CorrectionStats) -> Result<Self> {
        check_shapes(phi, y, noise_var)?;
        let mut phi_hat = phi.clone();
        let mut y_hat = y.to_vec();
        for i in 0..phi.rows() {
            let s = dot(phi.row(i), phi.row(i));
            let d = (noise_var + stats.c(s)) / noise_var;
            if d != 1.0 {
                let w = 1.0 / d.sqrt();
                phi_hat.row_mut(i).iter_mut().for_each(|v| *v *= w);
                y_hat[i] *= w;
            }
        }
        let mut post = Self::exact(&phi_hat, &y_hat, noise_var)?;
        post.correction = Some(CorrectionStats { train_max_sq_norm: stats.train_max_sq_norm, per_point_c: None });
        Ok(post)
    }

    pub fn rank(&self) -> usize {
        self.lambda_chol.dim()
    }

    /// Predictive noise at a test point: `σ²`, or `σ̂²(x*)` when corrected.
    pub fn noise_at(&self, phi_star: &[f64]) -> f64 {
        match &self.correction {
            Some(c) => corrected_noise(c, phi_star, self.noise_var),
            None => self.noise_var,
        }
    }

    /// Mean `φ*ᵀΛ⁻¹Φᵀy` and variance `σ²‖L⁻¹φ*‖² + noise`.
    pub fn predict_row(&self, phi_star: &[f64]) -> Result<(f64, f64)> {
        if phi_star.len() != self.rank() {
            return Err(DbkError::DimensionMismatch(format!(
                "feature vector of length {} for rank {}",
                phi_star.len(),
                self.rank()
            )));
        }
        let mean = dot(phi_star, &self.projected_targets);
        let v = self.lambda_chol.solve_lower_vec(phi_star);
        let var = self.noise_var * dot(&v, &v) + self.noise_at(phi_star);
        Ok((mean, var))
    }

    pub fn predict(&self, phi_star: &Matrix) -> Result<PredictiveDistribution> {
        let mut out = PredictiveDistribution::with_capacity(phi_star.rows());
        for i in 0..phi_star.rows() {
            let (m, v) = self.predict_row(phi_star.row(i))?;
            out.push(m, v);
        }
        Ok(out)
    }
}

/// Fitted exact model: feature map, noise and the cached posterior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactState {
    pub feature_map: FeatureMap,
    pub noise: NoiseParam,
    #[serde(flatten)]
    pub posterior: LowRankPosterior,
    #[serde(skip)]
    pub train_feature_cache: Option<Matrix>,
}

impl ExactState {
    /// Conditions `map` on the training data.
    pub fn build(map: FeatureMap, noise: NoiseParam, x: &Matrix, y: &[f64], correction: bool) -> Result<Self> {
        let phi = map.forward(x)?;
        let nv = noise.variance();
        let posterior = if correction {
            let stats = CorrectionStats::from_features(&phi);
            LowRankPosterior::corrected(&phi, y, nv, &stats)?
        } else {
            LowRankPosterior::exact(&phi, y, nv)?
        };
        Ok(ExactState { feature_map: map, noise, posterior, train_feature_cache: Some(phi) })
    }

    pub fn predict(&self, x_star: &Matrix) -> Result<PredictiveDistribution> {
        predict_exact(self, x_star)
    }
}

/// Predictive distribution at the rows of `x_star`.
pub fn predict_exact(state: &ExactState, x_star: &Matrix) -> Result<PredictiveDistribution> {
    let phi_star = state.feature_map.forward(x_star)?;
    state.posterior.predict(&phi_star)
}

fn mean_nll(pred: &PredictiveDistribution, y: &[f64]) -> f64 {
    let n = y.len().max(1) as f64;
    pred.mean.iter().zip(&pred.variance).zip(y).map(|((m, v), t)| gaussian_nll(*t, *m, *v)).sum::<f64>() / n
}

struct ExactProblem<'a> {
    x: &'a Matrix,
    y: &'a [f64],
    val: Option<&'a Dataset>,
    map: FeatureMap,
    noise: NoiseParam,
    adam_net: AdamState,
    adam_noise: AdamState,
    config: &'a TrainConfig,
}

impl Objective for ExactProblem<'_> {
    type Checkpoint = (FeatureMap, NoiseParam);

    fn step(&mut self, iteration: usize) -> Result<f64> {
        let nv = self.noise.variance();
        let tape = self.map.forward_tape(self.x)?;
        let phi = tape.output();
        let mut g = lml_gradient(phi, self.y, nv)?;
        let mut objective = g.value;
        if self.config.correction {
            objective -= trace_penalty_full(phi, nv);
            let (pc, pd) = penalty_cotangent(phi, nv);
            for (c, p) in g.cotangent.as_mut_slice().iter_mut().zip(pc.as_slice()) {
                *c -= p;
            }
            g.d_noise -= pd;
        }
        let non_finite = DbkError::NonFinite { iteration };
        if !objective.is_finite() || !g.d_noise.is_finite() || !g.cotangent.is_finite() {
            return Err(non_finite);
        }
        if self.config.learn_features {
            let grads = self.map.backward(&tape, &g.cotangent)?;
            if !grads.is_finite() {
                return Err(non_finite);
            }
            adam_step(&mut self.adam_net, &mut self.map, &grads, true);
        }
        if self.config.learn_noise {
            let graw = g.d_noise * self.noise.dvariance_draw();
            let mut raw = [self.noise.raw];
            self.adam_noise.update(&mut [&mut raw[..]], &[&[graw]], &[false], true);
            self.noise.raw = raw[0];
        }
        Ok(objective)
    }

    fn validation_nll(&mut self) -> Result<f64> {
        let val = self.val.expect("validation data");
        let state = ExactState::build(self.map.clone(), self.noise, self.x, self.y, self.config.correction)?;
        let pred = state.predict(&val.x)?;
        Ok(mean_nll(&pred, &val.y))
    }

    fn checkpoint(&self) -> Self::Checkpoint {
        (self.map.clone(), self.noise)
    }

    fn noise_var(&self) -> f64 {
        self.noise.variance()
    }
}

/// Full-batch gradient ascent on the log marginal likelihood (minus the
/// trace penalty when correction is on). With validation data, the
/// parameters with the best validation NLL are returned.
pub fn fit_exact(
    train: &Dataset,
    val: Option<&Dataset>,
    map: FeatureMap,
    config: &TrainConfig,
) -> Result<(ExactState, TrainLog)> {
    config.validate()?;
    if train.is_empty() {
        return Err(DbkError::EmptyData);
    }
    map.validate()?;
    if map.input_dim() != train.dim() {
        return Err(DbkError::DimensionMismatch(format!(
            "feature map expects {} inputs, data has {}",
            map.input_dim(),
            train.dim()
        )));
    }
    let mut problem = ExactProblem {
        x: &train.x,
        y: &train.y,
        val,
        adam_net: AdamState::for_feature_map(&config.adam, &map),
        adam_noise: AdamState::new(&config.adam, &[1]),
        map,
        noise: NoiseParam::from_variance(config.noise_init),
        config,
    };
    let ((map, noise), log) = train::run(&mut problem, config, config.max_iters, val.is_some())?;
    let state = ExactState::build(map, noise, &train.x, &train.y, config.correction)?;
    Ok((state, log))
}
