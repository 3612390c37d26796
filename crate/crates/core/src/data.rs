//! Datasets: the 1-D step benchmark, CSV ingestion, normalization and
//! train/validation/test splitting.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DbkError, Result};
use crate::linalg::Matrix;
use crate::predictive::PredictiveDistribution;
use crate::rng::{streams, Rng};

/// Column holding the noiseless signal in synthetic CSV files. When present
/// it is loaded as ground truth rather than as a feature.
pub const TRUTH_COLUMN: &str = "f_gt";

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vec<f64>,
    pub feature_names: Vec<String>,
    pub target_name: String,
    /// Noiseless targets, when known (synthetic data).
    pub truth: Option<Vec<f64>>,
    pub normalization: Option<NormStats>,
}

/// Affine maps applied to inputs (`[x_min, x_max] → [-1, 1]` per kept column)
/// and targets (zero mean, unit population variance).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    /// Indices of the input columns that survived (non-constant ones).
    pub kept_columns: Vec<usize>,
    pub x_min: Vec<f64>,
    pub x_max: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
}

impl Dataset {
    pub fn new(x: Matrix, y: Vec<f64>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(DbkError::DimensionMismatch(format!("{} input rows but {} targets", x.rows(), y.len())));
        }
        let feature_names = (0..x.cols()).map(|j| format!("x{j}")).collect();
        Ok(Dataset { x, y, feature_names, target_name: "y".into(), truth: None, normalization: None })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
            truth: self.truth.as_ref().map(|t| idx.iter().map(|&i| t[i]).collect()),
            normalization: self.normalization.clone(),
        }
    }

    /// Keeps rows whose first input lies outside `[lo, hi]`.
    pub fn without_interval(&self, lo: f64, hi: f64) -> Dataset {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| {
                let v = self.x[(i, 0)];
                v < lo || v > hi
            })
            .collect();
        self.subset(&idx)
    }
}

fn sigmoid(x: f64) -> f64 {
    crate::predictive::sigmoid(x)
}

/// Smoothed piecewise-constant signal with a small oscillation.
pub fn step1d(x: f64) -> f64 {
    let s1 = sigmoid(200.0 * (x + 0.6));
    let s2 = sigmoid(200.0 * x);
    let s3 = sigmoid(200.0 * (x - 0.4));
    let base = 0.3 * (1.0 - s1) + 0.9 * (s1 - s2) - 0.6 * (s2 - s3);
    base + 0.01 * (50.0 * (10.0 * x).sin()).sin()
}

/// `n` inputs uniform on `[-1, 1]` with `y = f(x) + N(0, noise_var)`.
pub fn gen_step1d(n: usize, noise_var: f64, seed: u64) -> Dataset {
    gen_step1d_on(n, noise_var, seed, -1.0, 1.0)
}

/// As [`gen_step1d`] with inputs uniform on `[lo, hi]`.
pub fn gen_step1d_on(n: usize, noise_var: f64, seed: u64, lo: f64, hi: f64) -> Dataset {
    let mut inputs = Rng::stream(seed, streams::INPUTS);
    let mut noise = Rng::stream(seed, streams::NOISE);
    let sd = noise_var.max(0.0).sqrt();
    let xs: Vec<f64> = (0..n).map(|_| inputs.uniform_range(lo, hi)).collect();
    let truth: Vec<f64> = xs.iter().map(|&x| step1d(x)).collect();
    let y = truth.iter().map(|&f| if sd > 0.0 { f + sd * noise.normal() } else { f }).collect();
    Dataset {
        x: Matrix::column_vector(&xs),
        y,
        feature_names: vec!["x0".into()],
        target_name: "y".into(),
        truth: Some(truth),
        normalization: None,
    }
}

/// Reads a headered CSV; every column other than the target (and the
/// optional [`TRUTH_COLUMN`]) becomes a feature, in header order.
pub fn load_csv(path: impl AsRef<Path>, target_column: &str) -> Result<Dataset> {
    read_csv(path.as_ref(), target_column, true)
}

/// Like [`load_csv`], but a missing target column is allowed. The flag is
/// false in that case and `y` is filled with NaN.
pub fn load_inputs(path: impl AsRef<Path>, target_column: &str) -> Result<(Dataset, bool)> {
    let d = read_csv(path.as_ref(), target_column, false)?;
    let known = !d.y.iter().any(|v| v.is_nan());
    Ok((d, known))
}

fn read_csv(path: &Path, target_column: &str, require_target: bool) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let target_idx = headers.iter().position(|h| h == target_column);
    if require_target && target_idx.is_none() {
        return Err(DbkError::MissingColumn(target_column.to_string()));
    }
    let truth_idx = headers.iter().position(|h| h == TRUTH_COLUMN).filter(|&i| Some(i) != target_idx);
    let feature_idx: Vec<usize> =
        (0..headers.len()).filter(|&i| Some(i) != target_idx && Some(i) != truth_idx).collect();

    let mut xs = Vec::new();
    let mut y = Vec::new();
    let mut truth = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let cell = |col: usize| -> Result<f64> {
            let raw = record.get(col).unwrap_or("").trim();
            let v: f64 = raw.parse().map_err(|_| DbkError::Parse {
                row,
                column: headers[col].clone(),
                message: format!("cannot parse {raw:?} as a number"),
            })?;
            if !v.is_finite() {
                return Err(DbkError::Parse { row, column: headers[col].clone(), message: "non-finite value".into() });
            }
            Ok(v)
        };
        for &j in &feature_idx {
            xs.push(cell(j)?);
        }
        y.push(match target_idx {
            Some(t) => cell(t)?,
            None => f64::NAN,
        });
        if let Some(t) = truth_idx {
            truth.push(cell(t)?);
        }
    }
    if y.is_empty() {
        return Err(DbkError::EmptyData);
    }
    let x = Matrix::from_vec(y.len(), feature_idx.len(), xs)?;
    Ok(Dataset {
        x,
        y,
        feature_names: feature_idx.iter().map(|&j| headers[j].clone()).collect(),
        target_name: target_column.to_string(),
        truth: truth_idx.map(|_| truth),
        normalization: None,
    })
}

/// Writes features, target and (if known) truth. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = data.feature_names.iter().map(String::as_str).collect();
    header.push(&data.target_name);
    if data.truth.is_some() {
        header.push(TRUTH_COLUMN);
    }
    w.write_record(&header)?;
    for i in 0..data.len() {
        let mut rec: Vec<String> = data.x.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(data.y[i].to_string());
        if let Some(t) = &data.truth {
            rec.push(t[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

impl NormStats {
    /// Fits the maps on `data`. Constant input columns are dropped with a
    /// warning.
    pub fn fit(data: &Dataset) -> Result<Self> {
        if data.len() < 2 {
            return Err(DbkError::InvalidConfig("normalization needs at least two rows".into()));
        }
        let mut kept = Vec::new();
        let mut x_min = Vec::new();
        let mut x_max = Vec::new();
        for j in 0..data.dim() {
            let col = data.x.column(j);
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                kept.push(j);
                x_min.push(lo);
                x_max.push(hi);
            } else {
                log::warn!("dropping constant input column `{}`", data.feature_names[j]);
            }
        }
        let n = data.len() as f64;
        let y_mean = data.y.iter().sum::<f64>() / n;
        let var = data.y.iter().map(|v| (v - y_mean) * (v - y_mean)).sum::<f64>() / n;
        let y_std = var.sqrt();
        if !(y_std > 0.0) {
            return Err(DbkError::ConstantTarget);
        }
        Ok(NormStats { kept_columns: kept, x_min, x_max, y_mean, y_std })
    }

    pub fn transform_x(&self, x: &Matrix) -> Result<Matrix> {
        let needed = self.kept_columns.iter().max().map_or(0, |m| m + 1);
        if x.cols() < needed {
            return Err(DbkError::DimensionMismatch(format!(
                "normalization expects at least {needed} input columns, got {}",
                x.cols()
            )));
        }
        Ok(Matrix::from_fn(x.rows(), self.kept_columns.len(), |i, k| {
            let j = self.kept_columns[k];
            2.0 * (x[(i, j)] - self.x_min[k]) / (self.x_max[k] - self.x_min[k]) - 1.0
        }))
    }

    pub fn transform_y(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_std
    }

    pub fn inverse_y(&self, y: f64) -> f64 {
        y * self.y_std + self.y_mean
    }

    /// Applies the maps to a dataset, recording them on the result.
    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        Ok(Dataset {
            x: self.transform_x(&data.x)?,
            y: data.y.iter().map(|&v| self.transform_y(v)).collect(),
            feature_names: self.kept_columns.iter().map(|&j| data.feature_names[j].clone()).collect(),
            target_name: data.target_name.clone(),
            truth: data.truth.as_ref().map(|t| t.iter().map(|&v| self.transform_y(v)).collect()),
            normalization: Some(self.clone()),
        })
    }

    /// Maps a predictive distribution back to the original target scale.
    pub fn denormalize_prediction(&self, pred: &PredictiveDistribution) -> PredictiveDistribution {
        PredictiveDistribution {
            mean: pred.mean.iter().map(|&m| self.inverse_y(m)).collect(),
            variance: pred.variance.iter().map(|&v| v * self.y_std * self.y_std).collect(),
        }
    }
}

/// Fits [`NormStats`] on `data` and applies them.
pub fn normalize(data: &Dataset) -> Result<(Dataset, NormStats)> {
    let stats = NormStats::fit(data)?;
    Ok((stats.apply(data)?, stats))
}

pub fn denormalize_prediction(pred: &PredictiveDistribution, stats: &NormStats) -> PredictiveDistribution {
    stats.denormalize_prediction(pred)
}

/// Partition sizes: train and validation take the floor of their share,
/// test takes the remainder.
pub fn split_sizes(n: usize, fractions: (f64, f64, f64)) -> Result<(usize, usize, usize)> {
    let (a, b, c) = fractions;
    let total = a + b + c;
    if (total - 1.0).abs() > 1e-9 || a < 0.0 || b < 0.0 || c < 0.0 {
        return Err(DbkError::FractionMismatch(total));
    }
    // Tolerate representation error such as 0.7 * 10 = 7.000000000000001
    // or 0.29 * 100 = 28.999999999999996.
    let n_train = ((a * n as f64) + 1e-9).floor() as usize;
    let n_val = (((b * n as f64) + 1e-9).floor() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    Ok((n_train, n_val, n - n_train - n_val))
}

/// Shuffled three-way partition without normalization.
pub fn partition(data: &Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let (n_train, n_val, _) = split_sizes(data.len(), fractions)?;
    let perm = Rng::stream(seed, streams::SPLIT).permutation(data.len());
    let train = data.subset(&perm[..n_train]);
    let val = data.subset(&perm[n_train..n_train + n_val]);
    let test = data.subset(&perm[n_train + n_val..]);
    Ok((train, val, test))
}

/// Normalized train/validation/test splits.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub stats: NormStats,
}

/// Shuffled partition; normalization is fitted on the training part only and
/// applied to all three.
pub fn split(data: &Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<Splits> {
    let (train, val, test) = partition(data, fractions, seed)?;
    let stats = NormStats::fit(&train)?;
    Ok(Splits { train: stats.apply(&train)?, val: stats.apply(&val)?, test: stats.apply(&test)?, stats })
}
