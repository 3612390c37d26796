//! JSON model files shared by every inference method.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::NormStats;
use crate::dense::{rbf_ard, DenseState};
use crate::error::{DbkError, Result};
use crate::exact::ExactState;
use crate::linalg::{gemm, Matrix};
use crate::predictive::PredictiveDistribution;
use crate::svi::SviState;

pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "inference", rename_all = "snake_case")]
pub enum Model {
    Exact(ExactState),
    Svi(SviState),
    DenseRbf(DenseState),
}

impl Model {
    pub fn tag(&self) -> &'static str {
        match self {
            Model::Exact(_) => "exact",
            Model::Svi(_) => "svi",
            Model::DenseRbf(_) => "dense_rbf",
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Model::Exact(s) => s.feature_map.input_dim(),
            Model::Svi(s) => s.feature_map.input_dim(),
            Model::DenseRbf(s) => s.train_x.cols(),
        }
    }

    pub fn noise_var(&self) -> f64 {
        match self {
            Model::Exact(s) => s.noise.variance(),
            Model::Svi(s) => s.noise.variance(),
            Model::DenseRbf(s) => s.params.noise.variance(),
        }
    }

    /// Predictive distribution in the model's (normalized) target space.
    pub fn predict(&self, x: &Matrix) -> Result<PredictiveDistribution> {
        if x.cols() != self.input_dim() {
            return Err(DbkError::DimensionMismatch(format!(
                "model expects {} inputs, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        match self {
            Model::Exact(s) => s.predict(x),
            Model::Svi(s) => s.predict(x),
            Model::DenseRbf(s) => s.predict(x),
        }
    }

    /// Prior covariance `k(aᵢ, bⱼ)`. For feature-map models with correction
    /// the diagonal term `c(x, x)` is added where the two inputs coincide.
    pub fn kernel(&self, a: &Matrix, b: &Matrix) -> Result<Matrix> {
        let (map, stats) = match self {
            Model::DenseRbf(s) => return rbf_ard(a, b, &s.params),
            Model::Exact(s) => (&s.feature_map, s.posterior.correction.as_ref()),
            Model::Svi(s) => (&s.feature_map, s.correction.as_ref()),
        };
        let pa = map.forward(a)?;
        let pb = map.forward(b)?;
        let mut k = gemm(&pa, &pb, false, true)?;
        if let Some(c) = stats {
            for i in 0..a.rows() {
                for j in 0..b.rows() {
                    if a.row(i) == b.row(j) {
                        k[(i, j)] += c.c(crate::linalg::dot(pa.row(i), pa.row(i)));
                    }
                }
            }
        }
        Ok(k)
    }
}

/// A model together with the normalization it was trained under.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub normalization: Option<NormStats>,
    #[serde(flatten)]
    pub model: Model,
}

impl ModelFile {
    pub fn new(model: Model, normalization: Option<NormStats>) -> Self {
        ModelFile { version: MODEL_VERSION, normalization, model }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: ModelFile = serde_json::from_str(&text)?;
        if file.version != MODEL_VERSION {
            return Err(DbkError::InvalidConfig(format!("unsupported model version {}", file.version)));
        }
        Ok(file)
    }

    /// Inputs in the original units; returns the predictive distribution in
    /// the original target units.
    pub fn predict(&self, x_raw: &Matrix) -> Result<PredictiveDistribution> {
        match &self.normalization {
            Some(n) => Ok(n.denormalize_prediction(&self.model.predict(&n.transform_x(x_raw)?)?)),
            None => self.model.predict(x_raw),
        }
    }

    /// Kernel between inputs given in original units.
    pub fn kernel(&self, a_raw: &Matrix, b_raw: &Matrix) -> Result<Matrix> {
        match &self.normalization {
            Some(n) => self.model.kernel(&n.transform_x(a_raw)?, &n.transform_x(b_raw)?),
            None => self.model.kernel(a_raw, b_raw),
        }
    }
}
