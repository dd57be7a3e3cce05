//! Dense factorization helpers shared by every solve in the crate.
//!
//! All `[K + σ²I]⁻¹` products go through [`Cholesky`], a row-oriented
//! (Banachiewicz) factor stored as ragged lower-triangular rows. Row `i`
//! depends only on rows `< i`, so appending an observation with
//! [`Cholesky::push_row`] yields exactly the bits a full refactorization
//! would. The on-line filter relies on that.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Jitter ladder, as multiples of the mean diagonal: `0, 1e-10, ..., 1e-6`.
const JITTER_START: f64 = 1e-10;
const JITTER_STOP: f64 = 1e-6;

/// Lower-triangular Cholesky factor `L` with `A + jitter·I = L Lᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    rows: Vec<Vec<f64>>,
    jitter: f64,
}

impl Cholesky {
    /// An empty factor that will add `jitter` to every pushed diagonal.
    pub fn empty(jitter: f64) -> Self {
        Self {
            rows: Vec::new(),
            jitter,
        }
    }

    /// Factor without escalation. `None` when a pivot is not positive.
    pub fn factor_exact(a: &DMatrix<f64>, jitter: f64) -> Option<Self> {
        assert_eq!(a.nrows(), a.ncols(), "factor of a non-square matrix");
        let mut chol = Self::empty(jitter);
        let mut row = Vec::with_capacity(a.nrows());
        for i in 0..a.nrows() {
            row.clear();
            row.extend((0..=i).map(|j| a[(i, j)]));
            if !chol.push_row(&row) {
                return None;
            }
        }
        Some(chol)
    }

    /// Factor `a`, escalating diagonal jitter from `1e-10·mean(diag)` by
    /// factors of ten up to `1e-6·mean(diag)` when the plain attempt fails.
    pub fn factor(a: &DMatrix<f64>) -> Result<Self> {
        if let Some(chol) = Self::factor_exact(a, 0.0) {
            return Ok(chol);
        }
        let n = a.nrows();
        let mean_diag = a.diagonal().iter().sum::<f64>() / n.max(1) as f64;
        let mut last = 0.0;
        if mean_diag.is_finite() && mean_diag > 0.0 {
            let mut scale = JITTER_START;
            while scale <= JITTER_STOP * (1.0 + 1e-9) {
                last = scale * mean_diag;
                if let Some(chol) = Self::factor_exact(a, last) {
                    return Ok(chol);
                }
                scale *= 10.0;
            }
        }
        Err(Error::Numerical {
            dim: n,
            jitter: last,
        })
    }

    /// Append row `i = self.dim()` given `a_row = A[i, 0..=i]`.
    ///
    /// Returns `false` (leaving the factor unchanged) when the new pivot is
    /// not positive relative to the diagonal entry.
    pub fn push_row(&mut self, a_row: &[f64]) -> bool {
        let i = self.rows.len();
        assert_eq!(a_row.len(), i + 1, "row length must be dim + 1");
        let mut new_row = Vec::with_capacity(i + 1);
        for j in 0..i {
            let lj = &self.rows[j];
            let s = a_row[j] - dot(&new_row[..j], &lj[..j]);
            new_row.push(s / lj[j]);
        }
        let diag = a_row[i] + self.jitter;
        let d = diag - dot(&new_row, &new_row);
        if !(d.is_finite() && d > f64::EPSILON * diag.abs()) {
            return false;
        }
        new_row.push(d.sqrt());
        self.rows.push(new_row);
        true
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `L[i][i]`.
    pub fn pivot(&self, i: usize) -> f64 {
        self.rows[i][i]
    }

    /// Row `i` of `L` (entries `0..=i`).
    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    /// Forward substitution: `L⁻¹ b`.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.dim());
        // Leading zeros of `b` stay zero in the solution.
        let first = b.iter().position(|v| *v != 0.0).unwrap_or(b.len());
        let mut x = vec![0.0; b.len()];
        for i in first..b.len() {
            let row = &self.rows[i];
            x[i] = (b[i] - dot(&row[first..i], &x[first..i])) / row[i];
        }
        x
    }

    /// Back substitution: `L⁻ᵀ b`.
    pub fn solve_upper(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(b.len(), n);
        let mut x = b.to_vec();
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= self.rows[k][i] * x[k];
            }
            x[i] = s / self.rows[i][i];
        }
        x
    }

    /// `A⁻¹ b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    /// `log det(A + jitter·I)`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.rows.iter().enumerate().map(|(i, r)| r[i].ln()).sum::<f64>()
    }

    /// Dense copy of `L`.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| if j <= i { self.rows[i][j] } else { 0.0 })
    }
}

/// Symmetric square root of a PSD matrix (negative eigenvalues clipped).
pub fn sym_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    spectral_map(a, |ev, _| ev.max(0.0).sqrt())
}

/// Moore–Penrose inverse square root of a PSD matrix; eigenvalues at or
/// below `1e-12·λ_max` map to zero.
pub fn sym_pinv_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    spectral_map(a, |ev, max| if ev > 1e-12 * max { 1.0 / ev.sqrt() } else { 0.0 })
}

/// Moore–Penrose inverse of a PSD matrix with the same cut-off.
pub fn sym_pinv(a: &DMatrix<f64>) -> DMatrix<f64> {
    spectral_map(a, |ev, max| if ev > 1e-12 * max { 1.0 / ev } else { 0.0 })
}

fn spectral_map(a: &DMatrix<f64>, f: impl Fn(f64, f64) -> f64) -> DMatrix<f64> {
    let n = a.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    if a.iter().all(|v| *v == 0.0) {
        return DMatrix::zeros(n, n);
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let mapped = eig.eigenvalues.map(|ev| f(ev, max));
    let v = &eig.eigenvectors;
    v * DMatrix::from_diagonal(&mapped) * v.transpose()
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    let sym = (a + a.transpose()) * 0.5;
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// `Σ aᵢbᵢ` with four independent accumulators; the summation order is
/// fixed, so every caller sees identical rounding.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}
