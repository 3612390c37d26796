//! Weight-space stochastic variational inference.
//!
//! With `f(x) = ⟨w, φ(x)⟩`, `w ~ N(0, I)` and `q(w) = N(m, LLᵀ)`, the ELBO
//! decomposes over data points, so it can be estimated from mini-batches at
//! a cost independent of `n`.

use serde::{Deserialize, Serialize};

use crate::correction::{corrected_noise, penalty_cotangent_batch, trace_penalty_batch, CorrectionStats};
use crate::data::Dataset;
use crate::error::{DbkError, Result};
use crate::linalg::{cholesky, dot, gemm, Matrix, DEFAULT_JITTER};
use crate::nn::{adam_step, AdamState, FeatureMap};
use crate::predictive::{gaussian_nll, NoiseParam, PredictiveDistribution};
use crate::rng::{streams, Rng};
use crate::train::{self, Objective, TrainConfig, TrainLog};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `q(w) = N(mean, L Lᵀ)`. `scale_raw` is lower triangular; its diagonal
/// holds `log L_ii`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "StoredVariational", try_from = "StoredVariational")]
pub struct VariationalState {
    pub mean: Vec<f64>,
    pub scale_raw: Matrix,
}

/// On-disk form: the realized factor's lower triangle, row-major.
#[derive(Serialize, Deserialize)]
struct StoredVariational {
    mean: Vec<f64>,
    scale_lower: Vec<f64>,
}

impl From<VariationalState> for StoredVariational {
    fn from(q: VariationalState) -> Self {
        let l = q.scale();
        let r = q.rank();
        let mut scale_lower = Vec::with_capacity(r * (r + 1) / 2);
        for i in 0..r {
            scale_lower.extend_from_slice(&l.row(i)[..=i]);
        }
        StoredVariational { mean: q.mean, scale_lower }
    }
}

impl TryFrom<StoredVariational> for VariationalState {
    type Error = DbkError;

    fn try_from(s: StoredVariational) -> Result<Self> {
        let r = s.mean.len();
        if s.scale_lower.len() != r * (r + 1) / 2 {
            return Err(DbkError::DimensionMismatch(format!(
                "{} lower-triangle entries for rank {r}",
                s.scale_lower.len()
            )));
        }
        let mut l = Matrix::zeros(r, r);
        let mut k = 0;
        for i in 0..r {
            for j in 0..=i {
                l[(i, j)] = s.scale_lower[k];
                k += 1;
            }
        }
        VariationalState::from_scale(s.mean, &l)
    }
}

impl VariationalState {
    /// The prior: `m = 0`, `L = I`.
    pub fn prior(r: usize) -> Self {
        VariationalState { mean: vec![0.0; r], scale_raw: Matrix::zeros(r, r) }
    }

    /// From a realized lower-triangular factor with positive diagonal.
    pub fn from_scale(mean: Vec<f64>, l: &Matrix) -> Result<Self> {
        let r = mean.len();
        if l.shape() != (r, r) {
            return Err(DbkError::DimensionMismatch(format!("scale {:?} for rank {r}", l.shape())));
        }
        let mut raw = Matrix::zeros(r, r);
        for i in 0..r {
            for j in 0..i {
                raw[(i, j)] = l[(i, j)];
            }
            if !(l[(i, i)] > 0.0) {
                return Err(DbkError::InvalidConfig(format!("scale diagonal entry {i} is not positive")));
            }
            raw[(i, i)] = l[(i, i)].ln();
        }
        Ok(VariationalState { mean, scale_raw: raw })
    }

    /// `q` with covariance `cov` (factored by Cholesky).
    pub fn from_covariance(mean: Vec<f64>, cov: &Matrix) -> Result<Self> {
        let ch = cholesky(cov, &DEFAULT_JITTER)?;
        Self::from_scale(mean, &ch.lower)
    }

    /// The exact weight posterior `N(Λ⁻¹Φᵀy, σ²Λ⁻¹)`.
    pub fn from_posterior(phi: &Matrix, y: &[f64], noise_var: f64) -> Result<Self> {
        let post = crate::exact::LowRankPosterior::exact(phi, y, noise_var)?;
        let mut cov = post.lambda_chol.inverse();
        cov.scale(noise_var);
        Self::from_covariance(post.projected_targets, &cov)
    }

    pub fn rank(&self) -> usize {
        self.mean.len()
    }

    /// Realized `L`.
    pub fn scale(&self) -> Matrix {
        let r = self.rank();
        Matrix::from_fn(r, r, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Greater => self.scale_raw[(i, j)],
            std::cmp::Ordering::Equal => self.scale_raw[(i, i)].exp(),
            std::cmp::Ordering::Less => 0.0,
        })
    }
}

/// `KL(q ‖ N(0, I)) = ½(‖m‖² + ‖L‖_F² - log|LLᵀ| - r)`.
pub fn kl_to_standard_normal(q: &VariationalState) -> f64 {
    let l = q.scale();
    let logdet: f64 = (0..q.rank()).map(|i| q.scale_raw[(i, i)]).sum::<f64>() * 2.0;
    0.5 * (dot(&q.mean, &q.mean) + dot(l.as_slice(), l.as_slice()) - logdet - q.rank() as f64)
}

fn check(phi: &Matrix, y: &[f64], q: &VariationalState) -> Result<()> {
    if phi.rows() != y.len() || phi.cols() != q.rank() {
        return Err(DbkError::DimensionMismatch(format!(
            "features {:?}, {} targets, rank {}",
            phi.shape(),
            y.len(),
            q.rank()
        )));
    }
    Ok(())
}

/// `Σᵢ [log N(yᵢ; ⟨m, φᵢ⟩, σ²) - ‖Lᵀφᵢ‖²/(2σ²)]`, with `U = ΦL`.
fn data_term(phi: &Matrix, y: &[f64], q: &VariationalState, u: &Matrix, noise_var: f64) -> f64 {
    let c = -0.5 * (LN_2PI + noise_var.ln());
    let mut s = 0.0;
    for i in 0..phi.rows() {
        let e = y[i] - dot(phi.row(i), &q.mean);
        let ui = u.row(i);
        s += c - (e * e + dot(ui, ui)) / (2.0 * noise_var);
    }
    s
}

fn batch_scale(n_total: usize, b: usize) -> f64 {
    if n_total == b {
        1.0
    } else {
        n_total as f64 / b as f64
    }
}

/// `log N(y; Φm, σ²I) - ‖ΦL‖_F²/(2σ²) - KL(q ‖ p)`.
pub fn elbo_full(phi: &Matrix, y: &[f64], q: &VariationalState, noise_var: f64) -> Result<f64> {
    elbo_minibatch(phi, y, phi.rows(), q, noise_var, false)
}

/// Unbiased estimate of [`elbo_full`] from a batch of `b` of the `n_total`
/// points; with `correction` the stochastic trace penalty is subtracted.
pub fn elbo_minibatch(
    batch_phi: &Matrix,
    batch_y: &[f64],
    n_total: usize,
    q: &VariationalState,
    noise_var: f64,
    correction: bool,
) -> Result<f64> {
    check(batch_phi, batch_y, q)?;
    if batch_phi.rows() > n_total {
        return Err(DbkError::InvalidConfig("batch larger than the dataset".into()));
    }
    let u = gemm(batch_phi, &q.scale(), false, false)?;
    let s = batch_scale(n_total, batch_phi.rows());
    let mut v = s * data_term(batch_phi, batch_y, q, &u, noise_var) - kl_to_standard_normal(q);
    if correction {
        v -= trace_penalty_batch(batch_phi, n_total, noise_var);
    }
    Ok(v)
}

/// Mini-batch ELBO with its gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct ElboGradient {
    pub value: f64,
    pub d_mean: Vec<f64>,
    /// With respect to `scale_raw` (lower triangle; diagonal in log space).
    pub d_scale_raw: Matrix,
    /// With respect to the batch features.
    pub cotangent: Matrix,
    pub d_noise: f64,
}

pub fn elbo_gradient(
    batch_phi: &Matrix,
    batch_y: &[f64],
    n_total: usize,
    q: &VariationalState,
    noise_var: f64,
    correction: bool,
) -> Result<ElboGradient> {
    check(batch_phi, batch_y, q)?;
    let (b, r) = batch_phi.shape();
    let l = q.scale();
    let u = gemm(batch_phi, &l, false, false)?;
    let s = batch_scale(n_total, b);
    let mut value = s * data_term(batch_phi, batch_y, q, &u, noise_var) - kl_to_standard_normal(q);

    let inv = 1.0 / noise_var;
    let mut d_mean: Vec<f64> = q.mean.iter().map(|m| -m).collect();
    let mut cot = Matrix::zeros(b, r);
    let mut d_noise_sum = 0.0;
    // L uᵢ for every row: (U Lᵀ)ᵢ.
    let lu = gemm(&u, &l, false, true)?;
    for i in 0..b {
        let phi_i = batch_phi.row(i);
        let e = batch_y[i] - dot(phi_i, &q.mean);
        let ui = u.row(i);
        crate::linalg::axpy(s * e * inv, phi_i, &mut d_mean);
        let row = cot.row_mut(i);
        for k in 0..r {
            row[k] = s * inv * (e * q.mean[k] - lu[(i, k)]);
        }
        d_noise_sum += -0.5 * inv + (e * e + dot(ui, ui)) * 0.5 * inv * inv;
    }
    let mut d_noise = s * d_noise_sum;

    // ∂/∂L = -(s/σ²) ΦᵀΦL - L + diag(1/Lᵢᵢ), lower triangle.
    let ptu = gemm(batch_phi, &u, true, false)?;
    let mut d_raw = Matrix::zeros(r, r);
    for i in 0..r {
        for j in 0..i {
            d_raw[(i, j)] = -s * inv * ptu[(i, j)] - l[(i, j)];
        }
        let lii = l[(i, i)];
        let g = -s * inv * ptu[(i, i)] - lii + 1.0 / lii;
        d_raw[(i, i)] = g * lii;
    }

    if correction {
        value -= trace_penalty_batch(batch_phi, n_total, noise_var);
        let (pc, pd) = penalty_cotangent_batch(batch_phi, n_total, noise_var);
        for (c, p) in cot.as_mut_slice().iter_mut().zip(pc.as_slice()) {
            *c -= p;
        }
        d_noise -= pd;
    }
    Ok(ElboGradient { value, d_mean, d_scale_raw: d_raw, cotangent: cot, d_noise })
}

/// Mean `⟨m, φ*⟩`, variance `‖Lᵀφ*‖² + σ²` (or `σ̂²(x*)` with correction).
pub fn predict_svi(
    map: &FeatureMap,
    q: &VariationalState,
    noise_var: f64,
    x_star: &Matrix,
    correction: Option<&CorrectionStats>,
) -> Result<PredictiveDistribution> {
    let phi = map.forward(x_star)?;
    predict_svi_features(&phi, q, noise_var, correction)
}

pub fn predict_svi_features(
    phi: &Matrix,
    q: &VariationalState,
    noise_var: f64,
    correction: Option<&CorrectionStats>,
) -> Result<PredictiveDistribution> {
    if phi.cols() != q.rank() {
        return Err(DbkError::DimensionMismatch(format!("{} features for rank {}", phi.cols(), q.rank())));
    }
    let u = gemm(phi, &q.scale(), false, false)?;
    let mut out = PredictiveDistribution::with_capacity(phi.rows());
    for i in 0..phi.rows() {
        let p = phi.row(i);
        let noise = match correction {
            Some(c) => corrected_noise(c, p, noise_var),
            None => noise_var,
        };
        out.push(dot(p, &q.mean), dot(u.row(i), u.row(i)) + noise);
    }
    Ok(out)
}

/// Fitted SVI model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SviState {
    pub feature_map: FeatureMap,
    pub variational: VariationalState,
    pub noise: NoiseParam,
    pub correction: Option<CorrectionStats>,
}

impl SviState {
    pub fn predict(&self, x_star: &Matrix) -> Result<PredictiveDistribution> {
        predict_svi(&self.feature_map, &self.variational, self.noise.variance(), x_star, self.correction.as_ref())
    }
}

fn stats_for(map: &FeatureMap, x: &Matrix, correction: bool) -> Result<Option<CorrectionStats>> {
    if !correction {
        return Ok(None);
    }
    let phi = map.forward(x)?;
    let mut s = CorrectionStats::from_features(&phi);
    s.per_point_c = None;
    Ok(Some(s))
}

/// Mini-batch optimizer over the network, `q` and the noise. Batches are
/// drawn by shuffling once per epoch; the last short batch is kept.
pub struct SviTrainer<'a> {
    x: &'a Matrix,
    y: &'a [f64],
    val: Option<&'a Dataset>,
    config: &'a TrainConfig,
    map: FeatureMap,
    q: VariationalState,
    noise: NoiseParam,
    adam_net: AdamState,
    adam_q: AdamState,
    adam_noise: AdamState,
    shuffle: Rng,
    order: Vec<usize>,
    cursor: usize,
    iteration: usize,
}

impl<'a> SviTrainer<'a> {
    pub fn new(train: &'a Dataset, val: Option<&'a Dataset>, map: FeatureMap, config: &'a TrainConfig) -> Result<Self> {
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
        let r = map.rank();
        Ok(SviTrainer {
            x: &train.x,
            y: &train.y,
            val,
            config,
            adam_net: AdamState::for_feature_map(&config.adam, &map),
            adam_q: AdamState::new(&config.adam, &[r, r * r]),
            adam_noise: AdamState::new(&config.adam, &[1]),
            q: VariationalState::prior(r),
            map,
            noise: NoiseParam::from_variance(config.noise_init),
            shuffle: Rng::stream(config.seed, streams::SHUFFLE),
            order: Vec::new(),
            cursor: 0,
            iteration: 0,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.y.len().div_ceil(self.config.batch_size)
    }

    /// Iteration budget implied by `max_iters` and `max_epochs`.
    pub fn total_iterations(&self) -> usize {
        match self.config.max_epochs {
            Some(e) => self.config.max_iters.min(e.saturating_mul(self.batches_per_epoch())),
            None => self.config.max_iters,
        }
    }

    fn next_batch(&mut self) -> Vec<usize> {
        let n = self.y.len();
        if self.cursor >= self.order.len() {
            self.order = self.shuffle.permutation(n);
            self.cursor = 0;
        }
        let end = (self.cursor + self.config.batch_size).min(n);
        let idx = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        idx
    }

    /// One ascent step on a fresh batch; returns the pre-step batch ELBO.
    pub fn step(&mut self) -> Result<f64> {
        let iteration = self.iteration;
        let idx = self.next_batch();
        let bx = self.x.select_rows(&idx);
        let by: Vec<f64> = idx.iter().map(|&i| self.y[i]).collect();
        let nv = self.noise.variance();
        let tape = self.map.forward_tape(&bx)?;
        let g = elbo_gradient(tape.output(), &by, self.y.len(), &self.q, nv, self.config.correction)?;
        let non_finite = DbkError::NonFinite { iteration };
        if !g.value.is_finite()
            || !g.d_noise.is_finite()
            || !g.cotangent.is_finite()
            || !g.d_scale_raw.is_finite()
            || g.d_mean.iter().any(|v| !v.is_finite())
        {
            return Err(non_finite);
        }
        if self.config.learn_features {
            let grads = self.map.backward(&tape, &g.cotangent)?;
            if !grads.is_finite() {
                return Err(non_finite);
            }
            adam_step(&mut self.adam_net, &mut self.map, &grads, true);
        }
        self.adam_q.update(
            &mut [&mut self.q.mean[..], self.q.scale_raw.as_mut_slice()],
            &[&g.d_mean, g.d_scale_raw.as_slice()],
            &[false, false],
            true,
        );
        if self.config.learn_noise {
            let graw = g.d_noise * self.noise.dvariance_draw();
            let mut raw = [self.noise.raw];
            self.adam_noise.update(&mut [&mut raw[..]], &[&[graw]], &[false], true);
            self.noise.raw = raw[0];
        }
        self.iteration += 1;
        Ok(g.value)
    }

    /// Current parameters as a fitted model.
    pub fn state(&self) -> Result<SviState> {
        Ok(SviState {
            feature_map: self.map.clone(),
            variational: self.q.clone(),
            noise: self.noise,
            correction: stats_for(&self.map, self.x, self.config.correction)?,
        })
    }
}

impl Objective for SviTrainer<'_> {
    type Checkpoint = (FeatureMap, VariationalState, NoiseParam);

    fn step(&mut self, _iteration: usize) -> Result<f64> {
        SviTrainer::step(self)
    }

    fn validation_nll(&mut self) -> Result<f64> {
        let val = self.val.expect("validation data");
        let pred = self.state()?.predict(&val.x)?;
        let n = val.len().max(1) as f64;
        Ok((0..val.len()).map(|i| gaussian_nll(val.y[i], pred.mean[i], pred.variance[i])).sum::<f64>() / n)
    }

    fn checkpoint(&self) -> Self::Checkpoint {
        (self.map.clone(), self.q.clone(), self.noise)
    }

    fn noise_var(&self) -> f64 {
        self.noise.variance()
    }
}

/// Trains the network, `q` and the noise on mini-batch ELBO estimates.
pub fn fit_svi(
    train: &Dataset,
    val: Option<&Dataset>,
    map: FeatureMap,
    config: &TrainConfig,
) -> Result<(SviState, TrainLog)> {
    let mut trainer = SviTrainer::new(train, val, map, config)?;
    let total = trainer.total_iterations();
    let ((map, q, noise), log) = train::run(&mut trainer, config, total, val.is_some())?;
    let correction = stats_for(&map, &train.x, config.correction)?;
    Ok((SviState { feature_map: map, variational: q, noise, correction }, log))
}
