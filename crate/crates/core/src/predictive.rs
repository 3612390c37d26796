use serde::{Deserialize, Serialize};

/// Independent Gaussian predictive marginals, one per test point.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDistribution {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl PredictiveDistribution {
    pub fn with_capacity(n: usize) -> Self {
        PredictiveDistribution { mean: Vec::with_capacity(n), variance: Vec::with_capacity(n) }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn push(&mut self, mean: f64, variance: f64) {
        self.mean.push(mean);
        self.variance.push(variance);
    }
}

/// `-log N(y; mean, variance)`.
pub fn gaussian_nll(y: f64, mean: f64, variance: f64) -> f64 {
    let r = y - mean;
    0.5 * (std::f64::consts::TAU * variance).ln() + r * r / (2.0 * variance)
}

/// Observation-noise variance `floor + softplus(raw)`, always above `floor`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseParam {
    pub raw: f64,
    pub floor: f64,
}

pub const NOISE_FLOOR: f64 = 1e-6;
pub const NOISE_INIT: f64 = 1e-2;

impl NoiseParam {
    /// Chooses `raw` so that the effective variance equals `variance`.
    pub fn from_variance(variance: f64) -> Self {
        Self::with_floor(variance, NOISE_FLOOR)
    }

    pub fn with_floor(variance: f64, floor: f64) -> Self {
        let excess = (variance - floor).max(f64::MIN_POSITIVE);
        NoiseParam { raw: inverse_softplus(excess), floor }
    }

    pub fn variance(&self) -> f64 {
        self.floor + softplus(self.raw)
    }

    /// `dσ²/d raw`.
    pub fn dvariance_draw(&self) -> f64 {
        sigmoid(self.raw)
    }
}

impl Default for NoiseParam {
    fn default() -> Self {
        NoiseParam::from_variance(NOISE_INIT)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn inverse_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_param_round_trips_and_respects_floor() {
        let p = NoiseParam::default();
        assert!((p.variance() - 1e-2).abs() < 1e-15);
        for raw in [-800.0, -40.0, 0.0, 3.0, 50.0] {
            let p = NoiseParam { raw, floor: NOISE_FLOOR };
            assert!(p.variance() >= NOISE_FLOOR);
        }
        let p = NoiseParam::from_variance(0.3);
        let h = 1e-6;
        let fd =
            (NoiseParam { raw: p.raw + h, ..p }.variance() - NoiseParam { raw: p.raw - h, ..p }.variance()) / (2.0 * h);
        assert!((fd - p.dvariance_draw()).abs() < 1e-8);
    }

    #[test]
    fn nll_of_exact_mean_at_unit_density_is_zero() {
        let v = 1.0 / std::f64::consts::TAU;
        assert!(gaussian_nll(1.5, 1.5, v).abs() < 1e-15);
    }
}
