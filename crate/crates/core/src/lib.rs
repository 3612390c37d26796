//! Deep basis kernel Gaussian-process regression.
//!
//! A neural feature map `φ: ℝᵈ → ℝʳ` defines the rank-r kernel
//! `k(a, b) = ⟨φ(a), φ(b)⟩`. Exact inference then costs O(nr²) time and
//! O(nr) memory ([`exact`]), a weight-space variational bound allows
//! mini-batch training ([`svi`]), and a diagonal variance correction
//! ([`correction`]) keeps predictive uncertainty from collapsing away from
//! the data.

// `!(x > 0.0)` is used on purpose so NaN is rejected along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod correction;
pub mod data;
pub mod dense;
pub mod error;
pub mod eval;
pub mod exact;
pub mod linalg;
pub mod model;
pub mod nn;
pub mod predictive;
pub mod rng;
pub mod svi;
pub mod train;

pub use correction::CorrectionStats;
pub use data::{Dataset, NormStats};
pub use dense::{DenseState, RbfArdParams};
pub use error::{DbkError, ErrorKind, Result};
pub use exact::{ExactState, LowRankPosterior};
pub use linalg::{CholeskyFactor, Matrix};
pub use model::{Model, ModelFile};
pub use nn::{AdamConfig, AdamState, FeatureMap, GradientBundle};
pub use predictive::{NoiseParam, PredictiveDistribution};
pub use svi::{SviState, VariationalState};
pub use train::{TrainConfig, TrainLog};
