//! Training configuration, logging and the shared optimization loop with
//! validation-based early stopping.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{DbkError, Result};
use crate::nn::AdamConfig;
use crate::predictive::NOISE_INIT;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    /// Mini-batch size (SVI only).
    pub batch_size: usize,
    pub max_iters: usize,
    /// Epoch limit (SVI only); the smaller of the two limits wins.
    pub max_epochs: Option<usize>,
    /// Validation NLL is computed every `eval_every` iterations.
    pub eval_every: usize,
    /// Stop once validation NLL has not improved for this many iterations.
    pub patience: Option<usize>,
    pub seed: u64,
    /// Trace penalty in training and corrected noise at prediction.
    pub correction: bool,
    pub noise_init: f64,
    pub learn_noise: bool,
    pub learn_features: bool,
    /// Wall-clock limit in seconds; the run stops cleanly when exceeded.
    pub time_budget_s: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            batch_size: 256,
            max_iters: 10_000,
            max_epochs: None,
            eval_every: 100,
            patience: None,
            seed: 0,
            correction: false,
            noise_init: NOISE_INIT,
            learn_noise: true,
            learn_features: true,
            time_budget_s: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DbkError::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1");
        }
        if let Some(p) = self.patience {
            if p < self.eval_every {
                return bad("patience must be at least eval_every");
            }
        }
        if !(self.adam.learning_rate > 0.0) || !self.adam.learning_rate.is_finite() {
            return bad("learning rate must be positive");
        }
        if !(self.adam.weight_decay >= 0.0) {
            return bad("weight decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.noise_init > crate::predictive::NOISE_FLOOR) {
            return bad("noise_init must exceed the noise floor");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub iteration: usize,
    pub objective: f64,
    pub val_nll: Option<f64>,
    pub noise_var: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
    pub iterations: usize,
    pub best_iteration: Option<usize>,
    pub best_val_nll: Option<f64>,
    pub stopped_early: bool,
    pub budget_exhausted: bool,
}

impl TrainLog {
    pub fn first_objective(&self) -> Option<f64> {
        self.entries.first().map(|e| e.objective)
    }

    pub fn last_objective(&self) -> Option<f64> {
        self.entries.last().map(|e| e.objective)
    }
}

/// Tracks the best validation score and decides when to stop.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: Option<usize>,
    best: f64,
    best_iteration: Option<usize>,
}

impl EarlyStopping {
    pub fn new(patience: Option<usize>) -> Self {
        EarlyStopping { patience, best: f64::INFINITY, best_iteration: None }
    }

    /// Records a score; returns true on strict improvement.
    pub fn observe(&mut self, iteration: usize, val_nll: f64) -> bool {
        if val_nll < self.best {
            self.best = val_nll;
            self.best_iteration = Some(iteration);
            true
        } else {
            false
        }
    }

    pub fn should_stop(&self, iteration: usize) -> bool {
        match (self.patience, self.best_iteration) {
            (Some(p), Some(b)) => iteration - b >= p,
            _ => false,
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best_iteration.map(|i| (i, self.best))
    }
}

/// One optimization problem driven by [`run`].
pub(crate) trait Objective {
    type Checkpoint: Clone;

    /// Evaluates the objective at the current parameters and takes one
    /// ascent step. Returns the pre-step objective.
    fn step(&mut self, iteration: usize) -> Result<f64>;

    /// Validation NLL at the current parameters.
    fn validation_nll(&mut self) -> Result<f64>;

    fn checkpoint(&self) -> Self::Checkpoint;

    fn noise_var(&self) -> f64;
}

/// Runs `iterations` steps. With validation data the best-scoring
/// checkpoint is returned, otherwise the final parameters.
pub(crate) fn run<O: Objective>(
    problem: &mut O,
    config: &TrainConfig,
    iterations: usize,
    has_validation: bool,
) -> Result<(O::Checkpoint, TrainLog)> {
    let start = Instant::now();
    let mut log = TrainLog::default();
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best: Option<O::Checkpoint> = None;

    let mut evaluate =
        |problem: &mut O, it: usize, log: &mut TrainLog, stopper: &mut EarlyStopping| -> Result<Option<f64>> {
            if !has_validation {
                return Ok(None);
            }
            let nll = problem.validation_nll()?;
            if !nll.is_finite() {
                return Err(DbkError::NonFinite { iteration: it });
            }
            if stopper.observe(it, nll) {
                best = Some(problem.checkpoint());
                log.best_iteration = Some(it);
                log.best_val_nll = Some(nll);
            }
            Ok(Some(nll))
        };

    let mut it = 0;
    while it < iterations {
        let val = if it % config.eval_every == 0 { evaluate(problem, it, &mut log, &mut stopper)? } else { None };
        if stopper.should_stop(it) {
            log.stopped_early = true;
            break;
        }
        if let Some(budget) = config.time_budget_s {
            if start.elapsed().as_secs_f64() > budget {
                log.budget_exhausted = true;
                break;
            }
        }
        let noise_var = problem.noise_var();
        let objective = problem.step(it)?;
        if !objective.is_finite() {
            return Err(DbkError::NonFinite { iteration: it });
        }
        if it % config.eval_every == 0 {
            log.entries.push(LogEntry { iteration: it, objective, val_nll: val, noise_var });
        }
        it += 1;
    }
    log.iterations = it;
    if !log.stopped_early && !log.budget_exhausted && it > 0 {
        evaluate(problem, it, &mut log, &mut stopper)?;
    }
    let out = match best {
        Some(b) if has_validation => b,
        _ => problem.checkpoint(),
    };
    Ok((out, log))
}
