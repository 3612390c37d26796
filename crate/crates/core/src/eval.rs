//! Regression metrics, the synthetic scaling benchmark and kernel-grid
//! export.

use std::collections::HashSet;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{gen_step1d, Dataset, NormStats};
use crate::dense::{fit_dense, DEFAULT_DENSE_CAP};
use crate::error::{DbkError, Result};
use crate::exact::fit_exact;
use crate::linalg::Matrix;
use crate::model::{Model, ModelFile};
use crate::nn::init_feature_map;
use crate::predictive::{gaussian_nll, PredictiveDistribution};
use crate::svi::fit_svi;
use crate::train::{TrainConfig, TrainLog};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    pub nll: f64,
    pub n_test: usize,
}

/// MAE, RMSE and mean Gaussian negative log predictive density.
pub fn metrics(pred: &PredictiveDistribution, targets: &[f64]) -> Result<Metrics> {
    if pred.len() != targets.len() || pred.variance.len() != pred.mean.len() {
        return Err(DbkError::DimensionMismatch(format!("{} predictions for {} targets", pred.len(), targets.len())));
    }
    if targets.is_empty() {
        return Err(DbkError::EmptyData);
    }
    if let Some(i) = pred.variance.iter().position(|v| !(*v > 0.0)) {
        return Err(DbkError::NonPositiveVariance(i));
    }
    let n = targets.len() as f64;
    let (mut abs, mut sq, mut nll) = (0.0, 0.0, 0.0);
    for ((m, v), y) in pred.mean.iter().zip(&pred.variance).zip(targets) {
        let r = y - m;
        abs += r.abs();
        sq += r * r;
        nll += gaussian_nll(*y, *m, *v);
    }
    Ok(Metrics { mae: abs / n, rmse: (sq / n).sqrt(), nll: nll / n, n_test: targets.len() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    DbkExact,
    DbkExactCorrected,
    DbkSvi,
    DbkSviCorrected,
    DenseRbf,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::DbkExact => "dbk_exact",
            Method::DbkExactCorrected => "dbk_exact_corrected",
            Method::DbkSvi => "dbk_svi",
            Method::DbkSviCorrected => "dbk_svi_corrected",
            Method::DenseRbf => "dense_rbf",
        }
    }

    pub fn correction(self) -> bool {
        matches!(self, Method::DbkExactCorrected | Method::DbkSviCorrected)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    /// The method declined the problem size (dense cap).
    Refused,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model_tag: String,
    pub n_train: usize,
    pub seed: u64,
    pub status: CellStatus,
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    pub nll: Option<f64>,
    pub n_test: usize,
    pub wall_clock_train_s: Option<f64>,
    pub wall_clock_predict_s: Option<f64>,
    pub iterations: Option<usize>,
    /// "original" or "normalized" target units.
    pub scale: String,
    /// Cells ran concurrently, so timings may be inflated.
    pub parallel: bool,
    pub error: Option<String>,
}

impl MetricsReport {
    fn key(&self) -> (String, usize, u64) {
        (self.model_tag.clone(), self.n_train, self.seed)
    }
}

/// A trained model plus bookkeeping, returned by [`train_method`].
pub struct Trained {
    pub model: Model,
    pub log: TrainLog,
    pub train_seconds: f64,
}

/// Architecture shared by the feature-map methods.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Architecture {
    pub rank: usize,
    pub hidden: Vec<usize>,
    pub residual: bool,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture { rank: 128, hidden: vec![128, 128], residual: false }
    }
}

/// Fits `method` on normalized data; the clock covers the fit call only.
pub fn train_method(
    method: Method,
    train: &Dataset,
    val: Option<&Dataset>,
    arch: &Architecture,
    config: &TrainConfig,
    dense_cap: usize,
) -> Result<Trained> {
    let cfg = TrainConfig { correction: method.correction(), ..config.clone() };
    let map = || init_feature_map(train.dim(), &arch.hidden, arch.rank, arch.residual, cfg.seed);
    let start = Instant::now();
    let (model, log) = match method {
        Method::DbkExact | Method::DbkExactCorrected => {
            let (s, l) = fit_exact(train, val, map()?, &cfg)?;
            (Model::Exact(s), l)
        }
        Method::DbkSvi | Method::DbkSviCorrected => {
            let (s, l) = fit_svi(train, val, map()?, &cfg)?;
            (Model::Svi(s), l)
        }
        Method::DenseRbf => {
            let (s, l) = fit_dense(train, val, &cfg, dense_cap)?;
            (Model::DenseRbf(s), l)
        }
    };
    Ok(Trained { model, log, train_seconds: start.elapsed().as_secs_f64() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingConfig {
    pub sizes: Vec<usize>,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub noise_var: f64,
    pub n_test: usize,
    pub architecture: Architecture,
    pub train: TrainConfig,
    pub dense_cap: usize,
    pub parallel: bool,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        ScalingConfig {
            sizes: vec![100, 1000],
            methods: vec![Method::DbkExact],
            seeds: vec![0],
            noise_var: 0.01,
            n_test: 1000,
            architecture: Architecture::default(),
            train: TrainConfig::default(),
            dense_cap: DEFAULT_DENSE_CAP,
            parallel: false,
        }
    }
}

/// Seed offset separating test draws from training draws.
const TEST_SEED_OFFSET: u64 = 0x5eed_7e57;

fn run_cell(cfg: &ScalingConfig, method: Method, n: usize, seed: u64) -> MetricsReport {
    let mut report = MetricsReport {
        model_tag: method.tag().to_string(),
        n_train: n,
        seed,
        status: CellStatus::Ok,
        mae: None,
        rmse: None,
        nll: None,
        n_test: cfg.n_test,
        wall_clock_train_s: None,
        wall_clock_predict_s: None,
        iterations: None,
        scale: "original".into(),
        parallel: cfg.parallel,
        error: None,
    };
    let outcome = (|| -> Result<()> {
        let raw = gen_step1d(n, cfg.noise_var, seed);
        let test = gen_step1d(cfg.n_test, cfg.noise_var, seed.wrapping_add(TEST_SEED_OFFSET));
        let stats = NormStats::fit(&raw)?;
        let train = stats.apply(&raw)?;
        let train_cfg = TrainConfig { seed, ..cfg.train.clone() };
        let trained = train_method(method, &train, None, &cfg.architecture, &train_cfg, cfg.dense_cap)?;
        report.wall_clock_train_s = Some(trained.train_seconds);
        report.iterations = Some(trained.log.iterations);
        let file = ModelFile::new(trained.model, Some(stats));
        let start = Instant::now();
        let pred = file.predict(&test.x)?;
        report.wall_clock_predict_s = Some(start.elapsed().as_secs_f64());
        let m = metrics(&pred, &test.y)?;
        report.mae = Some(m.mae);
        report.rmse = Some(m.rmse);
        report.nll = Some(m.nll);
        Ok(())
    })();
    if let Err(e) = outcome {
        report.status = match e {
            DbkError::DenseCapExceeded { .. } => CellStatus::Refused,
            _ => CellStatus::Failed,
        };
        report.error = Some(e.to_string());
    }
    report
}

fn read_existing(path: &Path) -> Result<Vec<MetricsReport>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let f = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

pub const RESULTS_FILE: &str = "results.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";

/// Runs every `(method, n, seed)` cell not already present in
/// `out_dir/results.jsonl`, appending one JSON line per finished cell, then
/// rewrites `out_dir/summary.csv`. Returns all reports for the configured
/// cells in configuration order.
pub fn run_scaling(cfg: &ScalingConfig, out_dir: impl AsRef<Path>) -> Result<Vec<MetricsReport>> {
    if cfg.sizes.windows(2).any(|w| w[0] > w[1]) {
        return Err(DbkError::InvalidConfig("sizes must be ascending".into()));
    }
    cfg.train.validate()?;
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let results_path = dir.join(RESULTS_FILE);
    let existing = read_existing(&results_path)?;
    let done: HashSet<_> = existing.iter().map(MetricsReport::key).collect();

    let mut cells = Vec::new();
    for &n in &cfg.sizes {
        for &method in &cfg.methods {
            for &seed in &cfg.seeds {
                cells.push((method, n, seed));
            }
        }
    }
    let todo: Vec<_> =
        cells.iter().copied().filter(|(m, n, s)| !done.contains(&(m.tag().to_string(), *n, *s))).collect();

    let sink = Mutex::new(OpenOptions::new().create(true).append(true).open(&results_path)?);
    let append = |r: &MetricsReport| -> Result<()> {
        let line = serde_json::to_string(r)?;
        let mut f = sink.lock().expect("results file lock");
        writeln!(f, "{line}")?;
        f.flush()?;
        Ok(())
    };

    let mut fresh = Vec::new();
    if cfg.parallel {
        let results: Vec<Result<MetricsReport>> = std::thread::scope(|scope| {
            let handles: Vec<_> = todo
                .iter()
                .map(|&(m, n, s)| {
                    let append = &append;
                    scope.spawn(move || {
                        let r = run_cell(cfg, m, n, s);
                        append(&r).map(|_| r)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("benchmark cell panicked")).collect()
        });
        for r in results {
            fresh.push(r?);
        }
    } else {
        for &(m, n, s) in &todo {
            let r = run_cell(cfg, m, n, s);
            log::info!("{} n={} seed={} -> {:?}", r.model_tag, n, s, r.status);
            append(&r)?;
            fresh.push(r);
        }
    }

    let all: Vec<MetricsReport> = existing.into_iter().chain(fresh).collect();
    write_summary(&all, dir.join(SUMMARY_FILE))?;
    let ordered = cells
        .iter()
        .filter_map(|(m, n, s)| {
            let key = (m.tag().to_string(), *n, *s);
            all.iter().find(|r| r.key() == key).cloned()
        })
        .collect();
    Ok(ordered)
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_summary(reports: &[MetricsReport], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "method",
        "n",
        "seed",
        "status",
        "mae",
        "rmse",
        "nll",
        "train_s",
        "predict_s",
        "iterations",
        "scale",
    ])?;
    for r in reports {
        w.write_record([
            r.model_tag.clone(),
            r.n_train.to_string(),
            r.seed.to_string(),
            serde_json::to_value(r.status)?.as_str().unwrap_or_default().to_string(),
            fmt_opt(r.mae),
            fmt_opt(r.rmse),
            fmt_opt(r.nll),
            fmt_opt(r.wall_clock_train_s),
            fmt_opt(r.wall_clock_predict_s),
            fmt_opt(r.iterations),
            r.scale.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `k(xsᵢ, gridⱼ)` for a fitted model (inputs in original units).
pub fn kernel_grid(model: &ModelFile, xs: &Matrix, grid: &Matrix) -> Result<Matrix> {
    model.kernel(xs, grid)
}

fn coords(row: &[f64]) -> String {
    row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

/// Writes a kernel grid as `x1,x2,k` rows; multi-dimensional inputs are
/// joined with `;`.
pub fn write_kernel_grid(xs: &Matrix, grid: &Matrix, k: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x1", "x2", "k"])?;
    for i in 0..xs.rows() {
        for j in 0..grid.rows() {
            w.write_record([coords(xs.row(i)), coords(grid.row(j)), k[(i, j)].to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
