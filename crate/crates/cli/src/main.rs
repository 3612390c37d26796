//! `dbk`: synthesize data, train, predict, evaluate, benchmark and export
//! kernel grids.
//!
//! Failures print one JSON object on stderr and exit with 1 (I/O),
//! 2 (validation) or 3 (numerical failure).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use dbk_core::data::{gen_step1d, load_csv, load_inputs, write_csv};
use dbk_core::eval::{self, Metrics, ScalingConfig};
use dbk_core::predictive::gaussian_nll;
use dbk_core::{DbkError, ErrorKind, Matrix, ModelFile, NormStats, PredictiveDistribution, Result};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "dbk", version, about = "Deep basis kernel Gaussian-process regression")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Step1d,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as CSV (columns x0, y, f_gt).
    Synth {
        #[arg(long, value_enum)]
        kind: SynthKind,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        noise_var: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a model; writes the model JSON, `<out>.log.jsonl` and `<out>.run.json`.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Training-log path (defaults to the model path with `.log.jsonl`).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Predict on a CSV; the target column is optional.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "y")]
        target: String,
    },
    /// Compute MAE, RMSE and NLL from a predictions CSV.
    Eval {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the synthetic scaling benchmark into a directory.
    Benchmark {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export `k(x1, x2)` over a grid as CSV.
    KernelGrid {
        #[arg(long)]
        model: PathBuf,
        /// `lo:hi:count` for one-dimensional models, or a CSV of points.
        #[arg(long, allow_hyphen_values = true)]
        grid: String,
        /// Probe inputs in the same format; defaults to the grid.
        #[arg(long, allow_hyphen_values = true)]
        xs: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Io => 1,
        ErrorKind::Validation => 2,
        ErrorKind::Numerical => 3,
    }
}

fn kind_name(kind: ErrorKind) -> &'static str {
    match kind {
        ErrorKind::Io => "io",
        ErrorKind::Validation => "validation",
        ErrorKind::Numerical => "numerical",
    }
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    error: &'a str,
    code: u8,
    message: String,
}

fn report_error(kind: &str, code: u8, message: String) -> ExitCode {
    let line = serde_json::to_string(&ErrorLine { error: kind, code, message }).unwrap_or_default();
    let _ = writeln!(std::io::stderr(), "{line}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind as Clap;
            if matches!(e.kind(), Clap::DisplayHelp | Clap::DisplayVersion) {
                e.exit();
            }
            let message = e.to_string();
            let first = message.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            return report_error("usage", 2, first.to_string());
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .format_timestamp(None)
        .init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.kind();
            report_error(kind_name(kind), exit_code(kind), e.to_string())
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth { kind, n, noise_var, seed, out } => synth(kind, n, noise_var, seed, &out),
        Command::Train { config, data, val, out, log } => train(&config, &data, val.as_deref(), &out, log),
        Command::Predict { model, data, out, target } => predict(&model, &data, &out, &target),
        Command::Eval { preds, out } => evaluate(&preds, &out),
        Command::Benchmark { config, out } => benchmark(&config, &out),
        Command::KernelGrid { model, grid, xs, out } => kernel_grid(&model, &grid, xs.as_deref(), &out),
    }
}

fn invalid(msg: impl Into<String>) -> DbkError {
    DbkError::InvalidConfig(msg.into())
}

fn synth(kind: SynthKind, n: usize, noise_var: f64, seed: u64, out: &Path) -> Result<()> {
    if n == 0 {
        return Err(invalid("--n must be at least 1"));
    }
    if !(noise_var >= 0.0) || !noise_var.is_finite() {
        return Err(invalid("--noise-var must be a finite non-negative number"));
    }
    let data = match kind {
        SynthKind::Step1d => gen_step1d(n, noise_var, seed),
    };
    write_csv(&data, out)
}

#[derive(Serialize)]
struct RunRecord<'a> {
    config: &'a RunConfig,
    threads: usize,
    feature_names: &'a [String],
    n_train: usize,
    n_val: Option<usize>,
    iterations: usize,
    best_iteration: Option<usize>,
    best_val_nll: Option<f64>,
    stopped_early: bool,
    budget_exhausted: bool,
}

fn train(config: &Path, data: &Path, val: Option<&Path>, out: &Path, log_path: Option<PathBuf>) -> Result<()> {
    let cfg = RunConfig::parse(&std::fs::read_to_string(config)?)?;
    if cfg.patience.is_some() && val.is_none() {
        return Err(invalid("patience is set but no validation data was given (--val)"));
    }
    if cfg.threads > 1 {
        log::warn!("threads = {} is recorded, but training runs on one thread", cfg.threads);
    }
    let raw = load_csv(data, &cfg.target)?;
    let raw_val = val.map(|p| load_csv(p, &cfg.target)).transpose()?;
    if let Some(v) = &raw_val {
        if v.feature_names != raw.feature_names {
            return Err(invalid("validation columns differ from training columns"));
        }
    }
    let stats = if cfg.normalize { Some(NormStats::fit(&raw)?) } else { None };
    let (train, val_data) = match &stats {
        Some(s) => (s.apply(&raw)?, raw_val.as_ref().map(|v| s.apply(v)).transpose()?),
        None => (raw.clone(), raw_val.clone()),
    };

    let trained = eval::train_method(
        cfg.method(),
        &train,
        val_data.as_ref(),
        &cfg.architecture(),
        &cfg.train_config(),
        cfg.dense_cap,
    )?;
    log::info!(
        "{} trained for {} iterations in {:.3} s",
        cfg.method().tag(),
        trained.log.iterations,
        trained.train_seconds
    );

    ModelFile::new(trained.model, stats).save(out)?;

    let log_path = log_path.unwrap_or_else(|| out.with_extension("log.jsonl"));
    let mut lines = String::new();
    for entry in &trained.log.entries {
        lines.push_str(&serde_json::to_string(entry)?);
        lines.push('\n');
    }
    std::fs::write(&log_path, lines)?;

    let record = RunRecord {
        config: &cfg,
        threads: cfg.threads,
        feature_names: &raw.feature_names,
        n_train: train.len(),
        n_val: val_data.as_ref().map(|v| v.len()),
        iterations: trained.log.iterations,
        best_iteration: trained.log.best_iteration,
        best_val_nll: trained.log.best_val_nll,
        stopped_early: trained.log.stopped_early,
        budget_exhausted: trained.log.budget_exhausted,
    };
    std::fs::write(out.with_extension("run.json"), serde_json::to_string_pretty(&record)?)?;
    Ok(())
}

fn predict(model: &Path, data: &Path, out: &Path, target: &str) -> Result<()> {
    let file = ModelFile::load(model)?;
    let (inputs, known) = load_inputs(data, target)?;
    let pred = file.predict(&inputs.x)?;
    let mut w = csv::Writer::from_path(out)?;
    if known {
        w.write_record(["row_index", "mean", "variance", "target", "nll"])?;
    } else {
        w.write_record(["row_index", "mean", "variance"])?;
    }
    for i in 0..pred.len() {
        let (m, v) = (pred.mean[i], pred.variance[i]);
        let mut rec = vec![i.to_string(), m.to_string(), v.to_string()];
        if known {
            rec.push(inputs.y[i].to_string());
            rec.push(gaussian_nll(inputs.y[i], m, v).to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct EvalRecord {
    #[serde(flatten)]
    metrics: Metrics,
    scale: &'static str,
}

fn evaluate(preds: &Path, out: &Path) -> Result<()> {
    let mut r = csv::Reader::from_path(preds)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| DbkError::MissingColumn(name.to_string()))
    };
    let (im, iv, it) = (col("mean")?, col("variance")?, col("target")?);
    let mut pred = PredictiveDistribution::default();
    let mut targets = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let cell = |j: usize| -> Result<f64> {
            let raw = rec.get(j).unwrap_or("").trim();
            raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| DbkError::Parse {
                row,
                column: headers[j].to_string(),
                message: format!("cannot parse {raw:?} as a finite number"),
            })
        };
        pred.push(cell(im)?, cell(iv)?);
        targets.push(cell(it)?);
    }
    let metrics = eval::metrics(&pred, &targets)?;
    let json = serde_json::to_string(&EvalRecord { metrics, scale: "original" })?;
    std::fs::write(out, &json)?;
    println!("{json}");
    Ok(())
}

fn benchmark(config: &Path, out: &Path) -> Result<()> {
    let mut value: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(config)?)?;
    let obj = value.as_object_mut().ok_or_else(|| invalid("benchmark config must be a JSON object"))?;
    match obj.remove("version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(config::CONFIG_VERSION) => {}
        other => return Err(invalid(format!("config version must be {} (got {other:?})", config::CONFIG_VERSION))),
    }
    let threads = obj.remove("threads").map(|v| v.as_u64().filter(|&t| t >= 1)).unwrap_or(Some(1));
    if threads.is_none() {
        return Err(invalid("threads must be a positive integer"));
    }
    let cfg: ScalingConfig = serde_json::from_value(value)?;
    let reports = eval::run_scaling(&cfg, out)?;
    for r in &reports {
        log::info!("{} n={} seed={} {:?}", r.model_tag, r.n_train, r.seed, r.status);
    }
    Ok(())
}

/// `lo:hi:count` as an evenly spaced column, otherwise a CSV of points.
fn parse_points(spec: &str) -> Result<Matrix> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() == 3 {
        let lo: f64 = parts[0].trim().parse().map_err(|_| invalid(format!("bad grid bound {:?}", parts[0])))?;
        let hi: f64 = parts[1].trim().parse().map_err(|_| invalid(format!("bad grid bound {:?}", parts[1])))?;
        let count: usize = parts[2].trim().parse().map_err(|_| invalid(format!("bad grid count {:?}", parts[2])))?;
        if count == 0 || !lo.is_finite() || !hi.is_finite() {
            return Err(invalid("grid needs finite bounds and a positive count"));
        }
        let xs: Vec<f64> = if count == 1 {
            vec![lo]
        } else {
            (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect()
        };
        return Ok(Matrix::column_vector(&xs));
    }
    // No target column: every column is a coordinate.
    Ok(load_inputs(spec, "\u{0}")?.0.x)
}

fn kernel_grid(model: &Path, grid: &str, xs: Option<&str>, out: &Path) -> Result<()> {
    let file = ModelFile::load(model)?;
    let g = parse_points(grid)?;
    let probes = match xs {
        Some(s) => parse_points(s)?,
        None => g.clone(),
    };
    let k = eval::kernel_grid(&file, &probes, &g)?;
    eval::write_kernel_grid(&probes, &g, &k, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_spec_is_inclusive() {
        let g = parse_points("-1:1:5").unwrap();
        assert_eq!(g.rows(), 5);
        assert_eq!(g[(0, 0)], -1.0);
        assert_eq!(g[(2, 0)], 0.0);
        assert_eq!(g[(4, 0)], 1.0);
    }

    #[test]
    fn bad_grid_spec_is_a_validation_error() {
        assert_eq!(parse_points("0:1:x").unwrap_err().kind(), ErrorKind::Validation);
        assert_eq!(parse_points("0:1:0").unwrap_err().kind(), ErrorKind::Validation);
    }

    #[test]
    fn exit_codes_follow_error_kind() {
        assert_eq!(exit_code(ErrorKind::Io), 1);
        assert_eq!(exit_code(ErrorKind::Validation), 2);
        assert_eq!(exit_code(ErrorKind::Numerical), 3);
    }
}
