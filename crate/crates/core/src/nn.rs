//! Feed-forward basis network `φ: ℝᵈ → ℝʳ`, its reverse-mode
//! vector-Jacobian product, and Adam with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{DbkError, Result};
use crate::linalg::{gemm, Matrix};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
}

/// Parameters and architecture of the basis network.
///
/// `weights[l]` has shape `layer_sizes[l + 1] x layer_sizes[l]`. Hidden
/// layers apply tanh; the last layer is affine. With `residual` set, a
/// hidden layer whose input and output widths agree becomes
/// `h ↦ tanh(W h + b) + h`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub layer_sizes: Vec<usize>,
    pub residual: bool,
    pub activation: Activation,
    #[serde(with = "nested_matrices")]
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

/// Layer outputs recorded by [`FeatureMap::forward_tape`].
#[derive(Clone, Debug)]
pub struct Tape(Vec<Matrix>);

impl Tape {
    /// The feature matrix `Φ_X`.
    pub fn output(&self) -> &Matrix {
        self.0.last().expect("output layer")
    }
}

/// Gradient with the same layout as a [`FeatureMap`]'s parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

/// Glorot-uniform initialization with zero biases.
pub fn init_feature_map(d: usize, hidden: &[usize], r: usize, residual: bool, seed: u64) -> Result<FeatureMap> {
    if d == 0 || r == 0 || hidden.contains(&0) {
        return Err(DbkError::InvalidConfig("layer widths must be at least 1".into()));
    }
    let mut rng = Rng::stream(seed, crate::rng::streams::INIT);
    let mut layer_sizes = Vec::with_capacity(hidden.len() + 2);
    layer_sizes.push(d);
    layer_sizes.extend_from_slice(hidden);
    layer_sizes.push(r);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for w in layer_sizes.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        weights.push(Matrix::from_fn(fan_out, fan_in, |_, _| rng.uniform_range(-bound, bound)));
        biases.push(vec![0.0; fan_out]);
    }
    Ok(FeatureMap { layer_sizes, residual, activation: Activation::Tanh, weights, biases })
}

impl FeatureMap {
    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn rank(&self) -> usize {
        *self.layer_sizes.last().expect("at least one layer")
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.as_slice().len()).sum::<usize>() + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    fn is_hidden(&self, layer: usize) -> bool {
        layer + 1 < self.weights.len()
    }

    fn has_skip(&self, layer: usize) -> bool {
        self.residual && self.is_hidden(layer) && self.layer_sizes[layer] == self.layer_sizes[layer + 1]
    }

    /// Checks shapes and finiteness of every parameter.
    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 || self.weights.len() + 1 != self.layer_sizes.len() {
            return Err(DbkError::DimensionMismatch("layer_sizes does not match weights".into()));
        }
        if self.biases.len() != self.weights.len() {
            return Err(DbkError::DimensionMismatch("one bias vector per layer expected".into()));
        }
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            if w.shape() != (self.layer_sizes[l + 1], self.layer_sizes[l]) || b.len() != self.layer_sizes[l + 1] {
                return Err(DbkError::DimensionMismatch(format!("layer {l} has inconsistent shape")));
            }
            if !w.is_finite() || b.iter().any(|v| !v.is_finite()) {
                return Err(DbkError::InvalidConfig(format!("layer {l} has non-finite parameters")));
            }
        }
        Ok(())
    }

    /// `Φ_X`: one feature row per input row.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(x)?.pop().expect("output layer"))
    }

    /// Every layer's output, starting with the input itself.
    fn forward_cached(&self, x: &Matrix) -> Result<Vec<Matrix>> {
        if x.cols() != self.input_dim() {
            return Err(DbkError::DimensionMismatch(format!(
                "network expects {} input columns, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        let mut acts = Vec::with_capacity(self.weights.len() + 1);
        acts.push(x.clone());
        for l in 0..self.weights.len() {
            let h = acts.last().expect("input pushed");
            let mut z = gemm(h, &self.weights[l], false, true)?;
            let b = &self.biases[l];
            let hidden = self.is_hidden(l);
            let skip = self.has_skip(l);
            for i in 0..z.rows() {
                let zi = z.row_mut(i);
                for (v, bj) in zi.iter_mut().zip(b) {
                    *v += bj;
                }
                if hidden {
                    zi.iter_mut().for_each(|v| *v = v.tanh());
                    if skip {
                        for (v, hj) in zi.iter_mut().zip(h.row(i)) {
                            *v += hj;
                        }
                    }
                }
            }
            acts.push(z);
        }
        Ok(acts)
    }

    /// Forward pass that keeps every layer's output for a later
    /// [`FeatureMap::backward`].
    pub fn forward_tape(&self, x: &Matrix) -> Result<Tape> {
        Ok(Tape(self.forward_cached(x)?))
    }

    /// Gradient of `⟨cotangent, φ(x)⟩` with respect to every parameter.
    pub fn vjp(&self, x: &Matrix, cotangent: &Matrix) -> Result<GradientBundle> {
        let tape = self.forward_tape(x)?;
        self.backward(&tape, cotangent)
    }

    /// [`FeatureMap::vjp`] reusing a recorded forward pass.
    pub fn backward(&self, tape: &Tape, cotangent: &Matrix) -> Result<GradientBundle> {
        let acts = &tape.0;
        let x = &acts[0];
        if acts.len() != self.weights.len() + 1 {
            return Err(DbkError::DimensionMismatch("tape recorded by a different network".into()));
        }
        if cotangent.shape() != (x.rows(), self.rank()) {
            return Err(DbkError::DimensionMismatch(format!(
                "cotangent is {:?}, expected ({}, {})",
                cotangent.shape(),
                x.rows(),
                self.rank()
            )));
        }
        let nl = self.weights.len();
        let mut gw = vec![Matrix::zeros(0, 0); nl];
        let mut gb = vec![Vec::new(); nl];
        let mut g = cotangent.clone();
        for l in (0..nl).rev() {
            let out = &acts[l + 1];
            let input = &acts[l];
            // g is ∂/∂(layer output); turn it into ∂/∂(pre-activation).
            let dz = if self.is_hidden(l) {
                let skip = self.has_skip(l);
                let mut dz = g.clone();
                for i in 0..dz.rows() {
                    let oi = out.row(i);
                    let hi = input.row(i);
                    for (j, v) in dz.row_mut(i).iter_mut().enumerate() {
                        let t = if skip { oi[j] - hi[j] } else { oi[j] };
                        *v *= 1.0 - t * t;
                    }
                }
                dz
            } else {
                g.clone()
            };
            gw[l] = gemm(&dz, input, true, false)?;
            let mut db = vec![0.0; dz.cols()];
            for i in 0..dz.rows() {
                for (acc, v) in db.iter_mut().zip(dz.row(i)) {
                    *acc += v;
                }
            }
            gb[l] = db;
            if l > 0 {
                let mut gin = gemm(&dz, &self.weights[l], false, false)?;
                if self.has_skip(l) {
                    for (a, b) in gin.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *a += b;
                    }
                }
                g = gin;
            }
        }
        Ok(GradientBundle { weights: gw, biases: gb })
    }

    /// Flat copy of all parameters (weights of each layer, then its bias).
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let mut off = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let len = w.as_slice().len();
            w.as_mut_slice().copy_from_slice(&flat[off..off + len]);
            off += len;
            let blen = b.len();
            b.copy_from_slice(&flat[off..off + blen]);
            off += blen;
        }
    }
}

impl GradientBundle {
    pub fn zeros_like(map: &FeatureMap) -> Self {
        GradientBundle {
            weights: map.weights.iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect(),
            biases: map.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Matrix::is_finite) && self.biases.iter().flatten().all(|v| v.is_finite())
    }
}

/// Optimizer hyperparameters shared by every Adam instance in a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, weight_decay: 1e-4 }
    }
}

/// Adam moments for a list of parameter tensors.
///
/// Weight decay is decoupled (`p -= lr * wd * p`) and only touches tensors
/// flagged as decayable.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl AdamState {
    pub fn new(config: &AdamConfig, sizes: &[usize]) -> Self {
        AdamState {
            step: 0,
            first_moment: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            second_moment: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            learning_rate: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
            weight_decay: config.weight_decay,
        }
    }

    /// State for a network: tensors ordered (W₀, b₀, W₁, b₁, …).
    pub fn for_feature_map(config: &AdamConfig, map: &FeatureMap) -> Self {
        let sizes: Vec<usize> =
            map.weights.iter().zip(&map.biases).flat_map(|(w, b)| [w.as_slice().len(), b.len()]).collect();
        AdamState::new(config, &sizes)
    }

    /// One Adam update over the given tensors. `maximize` flips the
    /// gradient sign so the objective is ascended.
    pub fn update(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], decay: &[bool], maximize: bool) {
        assert_eq!(params.len(), self.first_moment.len(), "tensor count mismatch");
        assert_eq!(grads.len(), params.len());
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let lr = self.learning_rate;
        let sign = if maximize { -1.0 } else { 1.0 };
        for (k, p) in params.iter_mut().enumerate() {
            let g = grads[k];
            assert_eq!(p.len(), g.len(), "tensor {k} shape mismatch");
            let m = &mut self.first_moment[k];
            let v = &mut self.second_moment[k];
            let wd = if decay.get(k).copied().unwrap_or(false) { self.weight_decay } else { 0.0 };
            for i in 0..p.len() {
                let gi = sign * g[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                if wd != 0.0 {
                    p[i] -= lr * wd * p[i];
                }
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * mhat / (vhat.sqrt() + self.epsilon);
            }
        }
    }
}

/// Adam step on a feature map; decay applies to weight matrices only.
pub fn adam_step(state: &mut AdamState, map: &mut FeatureMap, grads: &GradientBundle, maximize: bool) {
    let mut params: Vec<&mut [f64]> = Vec::with_capacity(2 * map.weights.len());
    for (w, b) in map.weights.iter_mut().zip(map.biases.iter_mut()) {
        params.push(w.as_mut_slice());
        params.push(b.as_mut_slice());
    }
    let g: Vec<&[f64]> =
        grads.weights.iter().zip(&grads.biases).flat_map(|(w, b)| [w.as_slice(), b.as_slice()]).collect();
    let decay: Vec<bool> = (0..params.len()).map(|k| k % 2 == 0).collect();
    state.update(&mut params, &g, &decay, maximize);
}

/// Weights serialize as nested `[[row], ...]` arrays.
mod nested_matrices {
    use super::Matrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(ms: &[Matrix], s: S) -> Result<S::Ok, S::Error> {
        let nested: Vec<Vec<Vec<f64>>> = ms.iter().map(Matrix::to_rows).collect();
        nested.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Matrix>, D::Error> {
        let nested = Vec::<Vec<Vec<f64>>>::deserialize(d)?;
        nested.iter().map(|rows| Matrix::from_rows(rows).map_err(serde::de::Error::custom)).collect()
    }
}
