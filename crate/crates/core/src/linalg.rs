//! Small dense linear algebra: row-major matrices, Cholesky factorization,
//! triangular solves and log-determinants.
//!
//! Everything here is single-threaded and has a fixed floating-point
//! summation order, so results are bitwise reproducible.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{DbkError, Result};

/// Diagonal jitter levels tried in order when a factorization fails.
pub const DEFAULT_JITTER: [f64; 4] = [0.0, 1e-10, 1e-8, 1e-6];

/// Dense row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(DbkError::DimensionMismatch(format!("{} entries for a {rows}x{cols} matrix", data.len())));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(DbkError::DimensionMismatch(format!("row {i} has {} entries, expected {cols}", row.len())));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix { rows: rows.len(), cols, data })
    }

    /// Column vector (n x 1).
    pub fn column_vector(values: &[f64]) -> Self {
        Matrix { rows: values.len(), cols: 1, data: values.to_vec() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix { rows: idx.len(), cols: self.cols, data }
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn add_diagonal(&mut self, v: f64) {
        let n = self.rows.min(self.cols);
        for i in 0..n {
            self.data[i * self.cols + i] += v;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn trace(&self) -> f64 {
        self.diagonal().iter().sum()
    }

    /// `self - other`, elementwise.
    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        check_same_shape(self, other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        check_same_shape(self, other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    /// Matrix-vector product `self * v`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(DbkError::DimensionMismatch(format!(
                "matvec: {}x{} times vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    /// `selfᵀ * v`.
    pub fn tmatvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(DbkError::DimensionMismatch(format!(
                "tmatvec: ({}x{})ᵀ times vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            axpy(vi, self.row(i), &mut out);
        }
        Ok(out)
    }

    /// Squared Euclidean norm of every row.
    pub fn row_sq_norms(&self) -> Vec<f64> {
        (0..self.rows).map(|i| dot(self.row(i), self.row(i))).collect()
    }

    /// Largest relative asymmetry `max |a_ij - a_ji| / max |a|`.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst / scale
    }
}

fn check_same_shape(a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(DbkError::DimensionMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Inner product with eight interleaved partial sums combined in a fixed
/// order, followed by the scalar tail.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let chunks = n / 8;
    for c in 0..chunks {
        let pa = &a[c * 8..c * 8 + 8];
        let pb = &b[c * 8..c * 8 + 8];
        for k in 0..8 {
            acc[k] += pa[k] * pb[k];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for k in chunks * 8..n {
        s += a[k] * b[k];
    }
    s
}

/// `y += alpha * x`.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// General matrix product `op(a) * op(b)`.
///
/// Every output entry is accumulated from 0.0 as `c += a_ik * b_kj` with `k`
/// ascending, which is exactly the summation order of the textbook triple
/// loop. The loops are arranged so the innermost one is a contiguous axpy.
pub fn gemm(a: &Matrix, b: &Matrix, transpose_a: bool, transpose_b: bool) -> Result<Matrix> {
    let (m, ka) = if transpose_a { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (kb, n) = if transpose_b { (b.cols, b.rows) } else { (b.rows, b.cols) };
    if ka != kb {
        return Err(DbkError::DimensionMismatch(format!("gemm inner dimensions {ka} and {kb}")));
    }
    let bt;
    let b = if transpose_b {
        bt = b.transpose();
        &bt
    } else {
        b
    };
    let mut c = Matrix::zeros(m, n);
    if n == 0 {
        return Ok(c);
    }
    if transpose_a {
        for k in 0..ka {
            let arow = a.row(k);
            let brow = b.row(k);
            for (i, &aik) in arow.iter().enumerate() {
                axpy(aik, brow, &mut c.data[i * n..(i + 1) * n]);
            }
        }
    } else {
        for i in 0..m {
            let arow = a.row(i);
            let crow = &mut c.data[i * n..(i + 1) * n];
            for (k, &aik) in arow.iter().enumerate() {
                axpy(aik, b.row(k), crow);
            }
        }
    }
    Ok(c)
}

/// Lower-triangular Cholesky factor together with the jitter that was needed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CholeskyFactor {
    pub lower: Matrix,
    pub jitter_used: f64,
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.lower.rows
    }

    /// Rebuilds a factor from stored entries, checking the invariants.
    pub fn from_lower(lower: Matrix, jitter_used: f64) -> Result<Self> {
        if !lower.is_square() {
            return Err(DbkError::DimensionMismatch("Cholesky factor must be square".into()));
        }
        for i in 0..lower.rows {
            if !(lower[(i, i)] > 0.0) || !lower[(i, i)].is_finite() {
                return Err(DbkError::NotPositiveDefinite { jitter: jitter_used });
            }
            for j in i + 1..lower.cols {
                if lower[(i, j)] != 0.0 {
                    return Err(DbkError::DimensionMismatch("Cholesky factor has a non-zero upper triangle".into()));
                }
            }
        }
        Ok(CholeskyFactor { lower, jitter_used })
    }

    /// Solves `L x = b` for a single right-hand side.
    pub fn solve_lower_vec(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        debug_assert_eq!(b.len(), n);
        let mut x = vec![0.0; n];
        for i in 0..n {
            let row = self.lower.row(i);
            x[i] = (b[i] - dot(&row[..i], &x[..i])) / row[i];
        }
        x
    }

    /// Solves `Lᵀ x = b` for a single right-hand side.
    pub fn solve_upper_vec(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        debug_assert_eq!(b.len(), n);
        let mut x = b.to_vec();
        for i in (0..n).rev() {
            x[i] /= self.lower[(i, i)];
            let xi = x[i];
            let row = self.lower.row(i);
            for j in 0..i {
                x[j] -= row[j] * xi;
            }
        }
        x
    }

    /// `A⁻¹ b` for the factored matrix `A = L Lᵀ`.
    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        self.solve_upper_vec(&self.solve_lower_vec(b))
    }

    /// `A⁻¹ B` for a matrix right-hand side.
    pub fn solve(&self, b: &Matrix) -> Result<Matrix> {
        let z = solve_triangular(self, b, false)?;
        solve_triangular(self, &z, true)
    }

    /// `L⁻¹` (lower triangular).
    pub fn inverse_lower(&self) -> Matrix {
        let n = self.dim();
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            // Column j of L⁻¹ is zero above the diagonal.
            let col = self.solve_lower_vec(&e);
            for i in j..n {
                inv[(i, j)] = col[i];
            }
        }
        inv
    }

    /// `A⁻¹ = L⁻ᵀ L⁻¹`.
    pub fn inverse(&self) -> Matrix {
        let li = self.inverse_lower();
        let n = self.dim();
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                // Rows of L⁻¹ below max(i, j) contribute.
                let mut s = 0.0;
                for k in i..n {
                    s += li[(k, i)] * li[(k, j)];
                }
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        out
    }

    /// `tr(A⁻¹) = ‖L⁻¹‖_F²`.
    pub fn trace_of_inverse(&self) -> f64 {
        let li = self.inverse_lower();
        dot(li.as_slice(), li.as_slice())
    }

    /// `L Lᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        gemm(&self.lower, &self.lower, false, true).expect("square factor")
    }
}

/// Cholesky factorization with a jitter fallback.
///
/// Each schedule entry is added to the diagonal in turn until the
/// factorization succeeds; 0 is always tried first.
pub fn cholesky(a: &Matrix, jitter_schedule: &[f64]) -> Result<CholeskyFactor> {
    if !a.is_square() {
        return Err(DbkError::DimensionMismatch(format!("cholesky of a {}x{} matrix", a.rows, a.cols)));
    }
    let asym = a.asymmetry();
    if asym > 1e-10 {
        return Err(DbkError::NotSymmetric(asym));
    }
    let mut levels = Vec::with_capacity(jitter_schedule.len() + 1);
    if jitter_schedule.first() != Some(&0.0) {
        levels.push(0.0);
    }
    levels.extend_from_slice(jitter_schedule);
    for &jitter in &levels {
        if let Some(lower) = try_cholesky(a, jitter) {
            return Ok(CholeskyFactor { lower, jitter_used: jitter });
        }
    }
    Err(DbkError::NotPositiveDefinite { jitter: levels.last().copied().unwrap_or(0.0) })
}

fn try_cholesky(a: &Matrix, jitter: f64) -> Option<Matrix> {
    let n = a.rows;
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let (upper, lower) = l.data.split_at_mut(i * n);
            let li = &lower[..n];
            let lj = if j == i { &li[..j] } else { &upper[j * n..j * n + j] };
            let s = a[(i, j)] - dot(&li[..j], lj);
            if i == j {
                let d = s + jitter;
                if !(d > 0.0) || !d.is_finite() {
                    return None;
                }
                lower[i] = d.sqrt();
            } else {
                let ljj = upper[j * n + j];
                lower[j] = s / ljj;
            }
        }
    }
    Some(l)
}

/// Solves `L x = b` (or `Lᵀ x = b` when `transpose`) column-wise.
pub fn solve_triangular(factor: &CholeskyFactor, b: &Matrix, transpose: bool) -> Result<Matrix> {
    let n = factor.dim();
    if b.rows != n {
        return Err(DbkError::DimensionMismatch(format!(
            "triangular solve with a {n}x{n} factor and {} right-hand-side rows",
            b.rows
        )));
    }
    let k = b.cols;
    let l = &factor.lower;
    let mut x = b.clone();
    if !transpose {
        for i in 0..n {
            let (done, rest) = x.data.split_at_mut(i * k);
            let xi = &mut rest[..k];
            let row = l.row(i);
            for j in 0..i {
                axpy(-row[j], &done[j * k..(j + 1) * k], xi);
            }
            let d = row[i];
            xi.iter_mut().for_each(|v| *v /= d);
        }
    } else {
        for i in (0..n).rev() {
            let (head, tail) = x.data.split_at_mut((i + 1) * k);
            let xi = &mut head[i * k..];
            for j in i + 1..n {
                axpy(-l[(j, i)], &tail[(j - i - 1) * k..(j - i) * k], xi);
            }
            let d = l[(i, i)];
            xi.iter_mut().for_each(|v| *v /= d);
        }
    }
    Ok(x)
}

/// `log |A + jitter I| = 2 Σ log L_ii`.
pub fn logdet(factor: &CholeskyFactor) -> f64 {
    2.0 * (0..factor.dim()).map(|i| factor.lower[(i, i)].ln()).sum::<f64>()
}
