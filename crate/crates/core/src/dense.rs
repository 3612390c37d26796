//! Dense O(n³) GP regression with an RBF-ARD kernel. Besides serving as a
//! baseline it provides the brute-force Gram-matrix computations used to
//! cross-check the low-rank code, and the expected-objective functions used
//! to probe the rank-1 optimum of kernel learning.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{DbkError, Result};
use crate::linalg::{cholesky, dot, CholeskyFactor, Matrix, DEFAULT_JITTER};
use crate::nn::AdamState;
use crate::predictive::{gaussian_nll, NoiseParam, PredictiveDistribution};
use crate::rng::Rng;
use crate::train::{self, Objective, TrainConfig, TrainLog};

/// Largest training set the dense model accepts by default.
pub const DEFAULT_DENSE_CAP: usize = 20_000;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbfArdParams {
    pub log_lengthscales: Vec<f64>,
    pub log_outputscale: f64,
    pub noise: NoiseParam,
}

impl RbfArdParams {
    /// Lengthscales `√d`, unit outputscale, default noise.
    pub fn init(d: usize) -> Self {
        RbfArdParams {
            log_lengthscales: vec![0.5 * (d as f64).ln(); d],
            log_outputscale: 0.0,
            noise: NoiseParam::default(),
        }
    }

    pub fn outputscale(&self) -> f64 {
        self.log_outputscale.exp()
    }

    pub fn lengthscales(&self) -> Vec<f64> {
        self.log_lengthscales.iter().map(|v| v.exp()).collect()
    }
}

/// `k(a, b) = σ_f² exp(-½ Σⱼ (aⱼ - bⱼ)² / ℓⱼ²)` for every row pair.
pub fn rbf_ard(x1: &Matrix, x2: &Matrix, params: &RbfArdParams) -> Result<Matrix> {
    let d = params.log_lengthscales.len();
    if x1.cols() != d || x2.cols() != d {
        return Err(DbkError::DimensionMismatch(format!(
            "RBF kernel with {d} lengthscales applied to {} and {} columns",
            x1.cols(),
            x2.cols()
        )));
    }
    let inv_ls2: Vec<f64> = params.log_lengthscales.iter().map(|l| (-2.0 * l).exp()).collect();
    let sf2 = params.outputscale();
    Ok(Matrix::from_fn(x1.rows(), x2.rows(), |i, j| {
        let (a, b) = (x1.row(i), x2.row(j));
        let mut s = 0.0;
        for k in 0..d {
            let t = a[k] - b[k];
            s += t * t * inv_ls2[k];
        }
        sf2 * (-0.5 * s).exp()
    }))
}

fn factor_sigma(k: &Matrix, noise: &[f64]) -> Result<CholeskyFactor> {
    let mut sigma = k.clone();
    for (i, v) in noise.iter().enumerate() {
        sigma[(i, i)] += v;
    }
    cholesky(&sigma, &DEFAULT_JITTER)
}

fn check_gram(k: &Matrix, y: &[f64]) -> Result<()> {
    if !k.is_square() || k.rows() != y.len() {
        return Err(DbkError::DimensionMismatch(format!("Gram matrix {:?} with {} targets", k.shape(), y.len())));
    }
    Ok(())
}

/// `log N(y; 0, K + σ²I)` for an explicit Gram matrix.
pub fn gram_lml(k: &Matrix, y: &[f64], noise_var: f64) -> Result<f64> {
    check_gram(k, y)?;
    let chol = factor_sigma(k, &vec![noise_var; y.len()])?;
    let z = chol.solve_lower_vec(y);
    Ok(-0.5 * y.len() as f64 * LN_2PI - 0.5 * crate::linalg::logdet(&chol) - 0.5 * dot(&z, &z))
}

/// Dense GP posterior with per-point noise: training noise `train_noise[i]`
/// on the diagonal of `K`, and `star_noise` added to each predictive
/// variance. `k_cross` is `m×n` and `k_star_diag` holds `k(x*, x*)`.
pub fn gram_posterior(
    k: &Matrix,
    y: &[f64],
    train_noise: &[f64],
    k_cross: &Matrix,
    k_star_diag: &[f64],
    star_noise: &[f64],
) -> Result<PredictiveDistribution> {
    check_gram(k, y)?;
    if train_noise.len() != y.len()
        || k_cross.cols() != y.len()
        || k_star_diag.len() != k_cross.rows()
        || star_noise.len() != k_cross.rows()
    {
        return Err(DbkError::DimensionMismatch("posterior inputs do not conform".into()));
    }
    let chol = factor_sigma(k, train_noise)?;
    let alpha = chol.solve_vec(y);
    let mut out = PredictiveDistribution::with_capacity(k_cross.rows());
    for i in 0..k_cross.rows() {
        let ks = k_cross.row(i);
        let v = chol.solve_lower_vec(ks);
        out.push(dot(ks, &alpha), k_star_diag[i] - dot(&v, &v) + star_noise[i]);
    }
    Ok(out)
}

/// Dense log marginal likelihood under the RBF-ARD kernel.
pub fn dense_lml(x: &Matrix, y: &[f64], params: &RbfArdParams) -> Result<f64> {
    let k = rbf_ard(x, x, params)?;
    gram_lml(&k, y, params.noise.variance())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGradient {
    pub value: f64,
    pub d_log_lengthscales: Vec<f64>,
    pub d_log_outputscale: f64,
    pub d_raw_noise: f64,
}

/// LML and its gradient: `½ tr((ααᵀ - Σ⁻¹) ∂Σ/∂θ)` with `α = Σ⁻¹y`.
pub fn dense_lml_grad(x: &Matrix, y: &[f64], params: &RbfArdParams) -> Result<DenseGradient> {
    let k = rbf_ard(x, x, params)?;
    check_gram(&k, y)?;
    let n = y.len();
    let nv = params.noise.variance();
    let chol = factor_sigma(&k, &vec![nv; n])?;
    let z = chol.solve_lower_vec(y);
    let value = -0.5 * n as f64 * LN_2PI - 0.5 * crate::linalg::logdet(&chol) - 0.5 * dot(&z, &z);
    let alpha = chol.solve_upper_vec(&z);
    let sigma_inv = chol.inverse();

    let d = x.cols();
    let inv_ls2: Vec<f64> = params.log_lengthscales.iter().map(|l| (-2.0 * l).exp()).collect();
    let mut d_ls = vec![0.0; d];
    let mut d_os = 0.0;
    let mut tr_w = 0.0;
    for a in 0..n {
        let (xa, sa) = (x.row(a), sigma_inv.row(a));
        let ka = k.row(a);
        tr_w += alpha[a] * alpha[a] - sa[a];
        for b in 0..n {
            let wk = (alpha[a] * alpha[b] - sa[b]) * ka[b];
            d_os += wk;
            let xb = x.row(b);
            for j in 0..d {
                let t = xa[j] - xb[j];
                d_ls[j] += wk * t * t * inv_ls2[j];
            }
        }
    }
    Ok(DenseGradient {
        value,
        d_log_lengthscales: d_ls.iter().map(|v| 0.5 * v).collect(),
        d_log_outputscale: 0.5 * d_os,
        d_raw_noise: 0.5 * tr_w * params.noise.dvariance_draw(),
    })
}

/// Fitted dense model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseState {
    pub params: RbfArdParams,
    pub chol_sigma: CholeskyFactor,
    pub alpha: Vec<f64>,
    pub train_x: Matrix,
}

impl DenseState {
    pub fn build(params: RbfArdParams, x: &Matrix, y: &[f64]) -> Result<Self> {
        let k = rbf_ard(x, x, &params)?;
        check_gram(&k, y)?;
        let chol = factor_sigma(&k, &vec![params.noise.variance(); y.len()])?;
        let alpha = chol.solve_vec(y);
        Ok(DenseState { params, chol_sigma: chol, alpha, train_x: x.clone() })
    }

    pub fn predict(&self, x_star: &Matrix) -> Result<PredictiveDistribution> {
        dense_posterior(self, x_star)
    }
}

/// Mean `k*ᵀΣ⁻¹y`, variance `k** - k*ᵀΣ⁻¹k* + σ²`.
pub fn dense_posterior(state: &DenseState, x_star: &Matrix) -> Result<PredictiveDistribution> {
    let ks = rbf_ard(x_star, &state.train_x, &state.params)?;
    let sf2 = state.params.outputscale();
    let nv = state.params.noise.variance();
    let mut out = PredictiveDistribution::with_capacity(x_star.rows());
    for i in 0..ks.rows() {
        let k = ks.row(i);
        let v = state.chol_sigma.solve_lower_vec(k);
        out.push(dot(k, &state.alpha), sf2 - dot(&v, &v) + nv);
    }
    Ok(out)
}

struct DenseProblem<'a> {
    x: &'a Matrix,
    y: &'a [f64],
    val: Option<&'a Dataset>,
    params: RbfArdParams,
    adam: AdamState,
    learn_noise: bool,
}

impl Objective for DenseProblem<'_> {
    type Checkpoint = RbfArdParams;

    fn step(&mut self, iteration: usize) -> Result<f64> {
        let g = dense_lml_grad(self.x, self.y, &self.params)?;
        let grads = [
            g.d_log_lengthscales.clone(),
            vec![g.d_log_outputscale],
            vec![if self.learn_noise { g.d_raw_noise } else { 0.0 }],
        ];
        if grads.iter().flatten().any(|v| !v.is_finite()) {
            return Err(DbkError::NonFinite { iteration });
        }
        let mut os = [self.params.log_outputscale];
        let mut raw = [self.params.noise.raw];
        let gref: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
        self.adam.update(
            &mut [&mut self.params.log_lengthscales[..], &mut os[..], &mut raw[..]],
            &gref,
            &[false, false, false],
            true,
        );
        self.params.log_outputscale = os[0];
        if self.learn_noise {
            self.params.noise.raw = raw[0];
        }
        Ok(g.value)
    }

    fn validation_nll(&mut self) -> Result<f64> {
        let val = self.val.expect("validation data");
        let pred = DenseState::build(self.params.clone(), self.x, self.y)?.predict(&val.x)?;
        let n = val.len().max(1) as f64;
        Ok((0..val.len()).map(|i| gaussian_nll(val.y[i], pred.mean[i], pred.variance[i])).sum::<f64>() / n)
    }

    fn checkpoint(&self) -> RbfArdParams {
        self.params.clone()
    }

    fn noise_var(&self) -> f64 {
        self.params.noise.variance()
    }
}

/// Adam on the dense LML under the same protocol as the low-rank models.
/// Training sets larger than `cap` are refused.
pub fn fit_dense(
    train: &Dataset,
    val: Option<&Dataset>,
    config: &TrainConfig,
    cap: usize,
) -> Result<(DenseState, TrainLog)> {
    config.validate()?;
    if train.len() > cap {
        return Err(DbkError::DenseCapExceeded { n: train.len(), cap });
    }
    if train.is_empty() {
        return Err(DbkError::EmptyData);
    }
    let mut params = RbfArdParams::init(train.dim());
    params.noise = NoiseParam::from_variance(config.noise_init);
    let mut problem = DenseProblem {
        x: &train.x,
        y: &train.y,
        val,
        adam: AdamState::new(&config.adam, &[train.dim(), 1, 1]),
        params,
        learn_noise: config.learn_noise,
    };
    let (params, log) = train::run(&mut problem, config, config.max_iters, val.is_some())?;
    Ok((DenseState::build(params, &train.x, &train.y)?, log))
}

/// Which expected objective a stationarity check differentiates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExpectedObjective {
    /// `E[log p(y) | f]`, to be maximized.
    LogMarginal,
    /// `E[‖f - E[f | y]‖² | f]`, to be minimized.
    SquaredError,
}

/// `E[log p(y) | f] = -(n/2) log 2π - ½ log|Σ| - ½ fᵀΣ⁻¹f - ½ σ² tr(Σ⁻¹)`
/// for `y ~ N(f, σ²I)`.
pub fn expected_lml(sigma: &Matrix, f: &[f64], noise_var: f64) -> Result<f64> {
    check_gram(sigma, f)?;
    let chol = cholesky(sigma, &[0.0])?;
    let z = chol.solve_lower_vec(f);
    Ok(-0.5 * f.len() as f64 * LN_2PI
        - 0.5 * crate::linalg::logdet(&chol)
        - 0.5 * dot(&z, &z)
        - 0.5 * noise_var * chol.trace_of_inverse())
}

/// `E[‖f - E[f | y]‖² | f] = σ⁴‖Σ⁻¹f‖² + σ²‖Σ⁻¹K‖_F²` with `K = Σ - σ²I`.
pub fn expected_sse(sigma: &Matrix, f: &[f64], noise_var: f64) -> Result<f64> {
    check_gram(sigma, f)?;
    let chol = cholesky(sigma, &[0.0])?;
    let a = chol.solve_vec(f);
    let mut k = sigma.clone();
    k.add_diagonal(-noise_var);
    let sk = chol.solve(&k)?;
    Ok(noise_var * noise_var * dot(&a, &a) + noise_var * dot(sk.as_slice(), sk.as_slice()))
}

/// `scale · f fᵀ + σ²I`.
pub fn rank_one_covariance(f: &[f64], scale: f64, noise_var: f64) -> Matrix {
    let n = f.len();
    let mut s = Matrix::from_fn(n, n, |i, j| scale * f[i] * f[j]);
    s.add_diagonal(noise_var);
    s
}

/// Random symmetric matrices with unit Frobenius norm.
pub fn random_symmetric_directions(n: usize, count: usize, seed: u64) -> Vec<Matrix> {
    let mut rng = Rng::new(seed);
    (0..count)
        .map(|_| {
            let a = Matrix::from_fn(n, n, |_, _| rng.normal());
            let mut s = Matrix::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
            let norm = s.frobenius_norm();
            s.scale(1.0 / norm);
            s
        })
        .collect()
}

/// Central-difference derivatives of an expected objective at `sigma` along
/// each direction, with step `step`.
pub fn directional_derivatives(
    objective: ExpectedObjective,
    sigma: &Matrix,
    f: &[f64],
    noise_var: f64,
    directions: &[Matrix],
    step: f64,
) -> Result<Vec<f64>> {
    let eval = |s: &Matrix| match objective {
        ExpectedObjective::LogMarginal => expected_lml(s, f, noise_var),
        ExpectedObjective::SquaredError => expected_sse(s, f, noise_var),
    };
    directions
        .iter()
        .map(|dir| {
            let mut up = dir.clone();
            up.scale(step);
            let up = sigma.add(&up)?;
            let mut dn = dir.clone();
            dn.scale(-step);
            let dn = sigma.add(&dn)?;
            Ok((eval(&up)? - eval(&dn)?) / (2.0 * step))
        })
        .collect()
}

/// Largest `|directional derivative|` of `objective` at `sigma` over
/// `count` random symmetric unit directions.
pub fn max_directional_derivative(
    objective: ExpectedObjective,
    sigma: &Matrix,
    f: &[f64],
    noise_var: f64,
    count: usize,
    step: f64,
    seed: u64,
) -> Result<f64> {
    let dirs = random_symmetric_directions(f.len(), count, seed);
    let d = directional_derivatives(objective, sigma, f, noise_var, &dirs, step)?;
    Ok(d.iter().fold(0.0, |m, v| m.max(v.abs())))
}

/// Stationarity probe of the expected LML at the rank-1 covariance
/// `f fᵀ + σ²I`, over 50 random directions with finite-difference step
/// `perturbation_scale`.
pub fn expected_lml_stationarity_check(f: &[f64], noise_var: f64, perturbation_scale: f64) -> Result<f64> {
    let sigma = rank_one_covariance(f, 1.0, noise_var);
    max_directional_derivative(ExpectedObjective::LogMarginal, &sigma, f, noise_var, 50, perturbation_scale, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gemm;

    fn rand_x(seed: u64, n: usize, d: usize) -> Matrix {
        let mut rng = Rng::new(seed);
        Matrix::from_fn(n, d, |_, _| rng.uniform_range(-1.0, 1.0))
    }

    #[test]
    fn kernel_examples() {
        let p = RbfArdParams {
            log_lengthscales: vec![0.0, 0.0],
            log_outputscale: 0.7f64.ln(),
            noise: NoiseParam::default(),
        };
        let a = Matrix::from_rows(&[vec![0.3, -0.2]]).unwrap();
        assert!((rbf_ard(&a, &a, &p).unwrap()[(0, 0)] - 0.7).abs() < 1e-15);
        let p = RbfArdParams { log_outputscale: 0.0, ..p };
        let b = Matrix::from_rows(&[vec![1.3, 0.8]]).unwrap();
        assert!((rbf_ard(&a, &b, &p).unwrap()[(0, 0)] - (-1.0f64).exp()).abs() < 1e-15);
        assert!(rbf_ard(&a, &Matrix::zeros(1, 3), &p).is_err());
    }

    #[test]
    fn kernel_matches_scalar_loop() {
        let x1 = rand_x(1, 4, 3);
        let x2 = rand_x(2, 5, 3);
        let p =
            RbfArdParams { log_lengthscales: vec![-0.3, 0.2, 0.9], log_outputscale: 0.4, noise: NoiseParam::default() };
        let k = rbf_ard(&x1, &x2, &p).unwrap();
        for i in 0..4 {
            for j in 0..5 {
                let mut e = 0.0;
                for (d, l) in p.log_lengthscales.iter().enumerate() {
                    e += ((x1[(i, d)] - x2[(j, d)]) / l.exp()).powi(2);
                }
                let want = p.log_outputscale.exp() * (-0.5 * e).exp();
                assert!((k[(i, j)] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn lml_scalar_and_degenerate_cases() {
        let x = Matrix::from_rows(&[vec![0.2]]).unwrap();
        let p = RbfArdParams {
            log_lengthscales: vec![0.0],
            log_outputscale: 0.5f64.ln(),
            noise: NoiseParam::from_variance(0.1),
        };
        let v = 0.5 + p.noise.variance();
        let want = -0.5 * (std::f64::consts::TAU * v).ln() - 0.3 * 0.3 / (2.0 * v);
        assert!((dense_lml(&x, &[0.3], &p).unwrap() - want).abs() < 1e-14);

        let x = rand_x(3, 6, 1);
        let y = [0.1, -0.4, 0.3, 0.0, 0.2, -0.1];
        let p = RbfArdParams { log_outputscale: -40.0, ..p };
        let nv = p.noise.variance();
        let want = -3.0 * (std::f64::consts::TAU * nv).ln() - dot(&y, &y) / (2.0 * nv);
        assert!((dense_lml(&x, &y, &p).unwrap() - want).abs() < 1e-9);
    }

    fn fd_check(x: &Matrix, y: &[f64], p: &RbfArdParams) {
        let g = dense_lml_grad(x, y, p).unwrap();
        assert!((g.value - dense_lml(x, y, p).unwrap()).abs() < 1e-10);
        let h = 1e-6;
        let f = |q: &RbfArdParams| dense_lml(x, y, q).unwrap();
        let close = |fd: f64, an: f64| (fd - an).abs() <= 1e-5 * fd.abs().max(an.abs()).max(1e-2);
        for j in 0..p.log_lengthscales.len() {
            let (mut up, mut dn) = (p.clone(), p.clone());
            up.log_lengthscales[j] += h;
            dn.log_lengthscales[j] -= h;
            let fd = (f(&up) - f(&dn)) / (2.0 * h);
            assert!(close(fd, g.d_log_lengthscales[j]), "ls {j}: {fd} {}", g.d_log_lengthscales[j]);
        }
        let (mut up, mut dn) = (p.clone(), p.clone());
        up.log_outputscale += h;
        dn.log_outputscale -= h;
        let fd = (f(&up) - f(&dn)) / (2.0 * h);
        assert!(close(fd, g.d_log_outputscale), "os {fd} {}", g.d_log_outputscale);
        let (mut up, mut dn) = (p.clone(), p.clone());
        up.noise.raw += h;
        dn.noise.raw -= h;
        let fd = (f(&up) - f(&dn)) / (2.0 * h);
        assert!(close(fd, g.d_raw_noise), "noise {fd} {}", g.d_raw_noise);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = rand_x(4, 15, 2);
        let y: Vec<f64> = (0..15).map(|i| (3.0 * x[(i, 0)]).sin() + 0.5 * x[(i, 1)]).collect();
        let p = RbfArdParams {
            log_lengthscales: vec![-0.5, 0.3],
            log_outputscale: 0.2,
            noise: NoiseParam::from_variance(0.05),
        };
        fd_check(&x, &y, &p);
    }

    #[test]
    fn gradient_vanishes_at_numeric_maximizer() {
        // One-parameter family over log σ_f² with everything else fixed;
        // golden-section search locates the maximizer.
        let x = rand_x(5, 12, 1);
        let y: Vec<f64> = (0..12).map(|i| (2.0 * x[(i, 0)]).cos()).collect();
        let base =
            RbfArdParams { log_lengthscales: vec![-0.5], log_outputscale: 0.0, noise: NoiseParam::from_variance(0.05) };
        let f = |t: f64| dense_lml(&x, &y, &RbfArdParams { log_outputscale: t, ..base.clone() }).unwrap();
        let (mut a, mut b) = (-5.0, 5.0);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if f(c) > f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let t = 0.5 * (a + b);
        let grad = dense_lml_grad(&x, &y, &RbfArdParams { log_outputscale: t, ..base }).unwrap();
        assert!(grad.d_log_outputscale.abs() <= 1e-4, "{}", grad.d_log_outputscale);
    }

    #[test]
    fn zero_targets_push_noise_down() {
        let x = rand_x(6, 10, 1);
        let g = dense_lml_grad(&x, &[0.0; 10], &RbfArdParams::init(1)).unwrap();
        assert!(g.d_raw_noise < 0.0);
    }

    #[test]
    fn posterior_prior_reversion_and_interpolation() {
        let x = Matrix::column_vector(&[-0.5, 0.0, 0.5]);
        let y = [1.0, -1.0, 0.5];
        let p = RbfArdParams {
            log_lengthscales: vec![(0.01f64).ln()],
            log_outputscale: 0.0,
            noise: NoiseParam::from_variance(1e-6),
        };
        let s = DenseState::build(p, &x, &y).unwrap();
        let far = s.predict(&Matrix::column_vector(&[5.0])).unwrap();
        assert!(far.mean[0].abs() < 1e-12);
        assert!((far.variance[0] - (1.0 + s.params.noise.variance())).abs() < 1e-12);
        let at = s.predict(&x).unwrap();
        for i in 0..3 {
            assert!((at.mean[i] - y[i]).abs() < 1e-5);
        }
    }

    #[test]
    fn cap_is_enforced() {
        let d = crate::data::gen_step1d(30, 0.01, 0);
        let cfg = TrainConfig { max_iters: 1, ..Default::default() };
        assert!(matches!(fit_dense(&d, None, &cfg, 20), Err(DbkError::DenseCapExceeded { n: 30, cap: 20 })));
    }

    #[test]
    fn fit_improves_lml() {
        let d = crate::data::gen_step1d(40, 0.01, 1);
        let cfg = TrainConfig {
            max_iters: 100,
            eval_every: 10,
            adam: crate::nn::AdamConfig { learning_rate: 0.05, ..Default::default() },
            ..Default::default()
        };
        let (_, log) = fit_dense(&d, None, &cfg, DEFAULT_DENSE_CAP).unwrap();
        assert!(log.last_objective().unwrap() > log.first_objective().unwrap());
    }

    #[test]
    fn rank_one_covariance_is_stationary() {
        let truth = crate::data::gen_step1d(3, 0.0, 7).y;
        assert!(expected_lml_stationarity_check(&truth, 0.01, 1e-6).unwrap() <= 1e-5);
        assert!(expected_lml_stationarity_check(&[0.0; 4], 0.1, 1e-6).unwrap() <= 1e-5);
        let sigma = rank_one_covariance(&truth, 1.0, 0.01);
        let sse =
            max_directional_derivative(ExpectedObjective::SquaredError, &sigma, &truth, 0.01, 50, 1e-6, 1).unwrap();
        assert!(sse <= 1e-5, "{sse}");
        let off = rank_one_covariance(&truth, 2.0, 0.01);
        let d = max_directional_derivative(ExpectedObjective::LogMarginal, &off, &truth, 0.01, 50, 1e-6, 0).unwrap();
        assert!(d >= 1e-2, "{d}");
    }

    #[test]
    fn expected_lml_matches_monte_carlo() {
        let f = [0.4, -0.2, 0.9];
        let sigma = rank_one_covariance(&[0.3, 0.1, -0.5], 1.0, 0.2);
        let nv: f64 = 0.05;
        let mut rng = Rng::new(3);
        let draws = 200_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            let y: Vec<f64> = f.iter().map(|v| v + nv.sqrt() * rng.normal()).collect();
            acc += gram_lml(
                &{
                    let mut k = sigma.clone();
                    k.add_diagonal(-nv);
                    k
                },
                &y,
                nv,
            )
            .unwrap();
        }
        let mc = acc / draws as f64;
        assert!((mc - expected_lml(&sigma, &f, nv).unwrap()).abs() < 5e-3, "{mc}");
    }

    #[test]
    fn injected_linear_kernel_matches_low_rank() {
        let mut rng = Rng::new(9);
        let phi = Matrix::from_fn(40, 3, |_, _| rng.normal());
        let y: Vec<f64> = (0..40).map(|_| rng.normal()).collect();
        let k = gemm(&phi, &phi, false, true).unwrap();
        let a = gram_lml(&k, &y, 0.2).unwrap();
        let b = crate::exact::log_marginal_likelihood(&phi, &y, 0.2).unwrap();
        assert!((a - b).abs() < 1e-8);
    }
}
