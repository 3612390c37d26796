//! The JSON run configuration accepted by `dbk train`.

use serde::{Deserialize, Serialize};

use dbk_core::dense::DEFAULT_DENSE_CAP;
use dbk_core::eval::{Architecture, Method};
use dbk_core::predictive::NOISE_INIT;
use dbk_core::{AdamConfig, DbkError, Result, TrainConfig};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    DbkExact,
    DbkSvi,
    DenseRbf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Must equal [`CONFIG_VERSION`]; a missing key reads as 0 and is rejected.
    pub version: u32,
    pub model: ModelKind,
    pub rank: usize,
    pub hidden: Vec<usize>,
    pub residual: bool,
    pub correction: bool,
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub max_iters: usize,
    pub max_epochs: Option<usize>,
    pub eval_every: usize,
    pub patience: Option<usize>,
    pub seed: u64,
    pub threads: usize,
    pub dense_cap: usize,
    pub target: String,
    pub normalize: bool,
    pub noise_init: f64,
    pub learn_noise: bool,
    pub time_budget_s: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let arch = Architecture::default();
        let train = TrainConfig::default();
        RunConfig {
            version: 0,
            model: ModelKind::DbkExact,
            rank: arch.rank,
            hidden: arch.hidden,
            residual: arch.residual,
            correction: false,
            optimizer: train.adam,
            batch_size: train.batch_size,
            max_iters: train.max_iters,
            max_epochs: None,
            eval_every: train.eval_every,
            patience: None,
            seed: 0,
            threads: 1,
            dense_cap: DEFAULT_DENSE_CAP,
            target: "y".into(),
            normalize: true,
            noise_init: NOISE_INIT,
            learn_noise: true,
            time_budget_s: None,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DbkError::InvalidConfig(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("config version must be {CONFIG_VERSION} (got {})", self.version));
        }
        if self.threads == 0 {
            return bad("threads must be at least 1".into());
        }
        if self.rank == 0 {
            return bad("rank must be at least 1".into());
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        if self.model == ModelKind::DenseRbf && self.correction {
            return bad("variance correction applies to dbk models only".into());
        }
        if self.target.is_empty() {
            return bad("target column name is empty".into());
        }
        self.train_config().validate()
    }

    pub fn method(&self) -> Method {
        match (self.model, self.correction) {
            (ModelKind::DbkExact, false) => Method::DbkExact,
            (ModelKind::DbkExact, true) => Method::DbkExactCorrected,
            (ModelKind::DbkSvi, false) => Method::DbkSvi,
            (ModelKind::DbkSvi, true) => Method::DbkSviCorrected,
            (ModelKind::DenseRbf, _) => Method::DenseRbf,
        }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture { rank: self.rank, hidden: self.hidden.clone(), residual: self.residual }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            adam: self.optimizer,
            batch_size: self.batch_size,
            max_iters: self.max_iters,
            max_epochs: self.max_epochs,
            eval_every: self.eval_every,
            patience: self.patience,
            seed: self.seed,
            correction: self.correction,
            noise_init: self.noise_init,
            learn_noise: self.learn_noise,
            learn_features: true,
            time_budget_s: self.time_budget_s,
        }
    }
}
