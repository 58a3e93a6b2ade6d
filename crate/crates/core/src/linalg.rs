//! Small dense linear algebra: a row-major matrix, a pivoted Gauss-Jordan
//! inverse, and an envelope-bounded LU for the M-matrices `I - Q` that come
//! out of absorbing chains.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is singular at pivot {pivot}")]
    Singular { pivot: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(LinalgError::Dimension { expected: c, got: row.len() });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { rows: r, cols: c, data })
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::Dimension { expected: rows * cols, got: data.len() });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn mul(&self, rhs: &Matrix) -> Result<Matrix, LinalgError> {
        if self.cols != rhs.rows {
            return Err(LinalgError::Dimension { expected: self.cols, got: rhs.rows });
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let src = rhs.row(k);
                let dst = out.row_mut(i);
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        Ok(out)
    }

    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix, LinalgError> {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return Err(LinalgError::Dimension { expected: self.data.len(), got: rhs.data.len() });
        }
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| if v.abs() > m { v.abs() } else { m })
    }

    pub fn max_abs_diff(&self, rhs: &Matrix) -> f64 {
        self.data.iter().zip(&rhs.data).fold(0.0, |m, (a, b)| {
            let d = (a - b).abs();
            if d > m {
                d
            } else {
                m
            }
        })
    }

    /// `I - self` for a square matrix.
    pub fn identity_minus(&self) -> Matrix {
        let mut m = self.clone();
        for v in &mut m.data {
            *v = -*v;
        }
        for i in 0..self.rows.min(self.cols) {
            m[(i, i)] += 1.0;
        }
        m
    }

    /// Inverse by Gauss-Jordan elimination with partial pivoting.
    pub fn inverse(&self) -> Result<Matrix, LinalgError> {
        if !self.is_square() {
            return Err(LinalgError::Dimension { expected: self.rows, got: self.cols });
        }
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = Matrix::identity(n);
        for col in 0..n {
            let mut piv = col;
            let mut best = a[(col, col)].abs();
            for r in col + 1..n {
                let v = a[(r, col)].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best < 1e-300 || !best.is_finite() {
                return Err(LinalgError::Singular { pivot: col });
            }
            if piv != col {
                a.swap_rows(piv, col);
                inv.swap_rows(piv, col);
            }
            let d = a[(col, col)];
            for j in 0..n {
                a[(col, j)] /= d;
                inv[(col, j)] /= d;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = a[(r, col)];
                if f == 0.0 {
                    continue;
                }
                for j in 0..n {
                    a[(r, j)] -= f * a[(col, j)];
                    inv[(r, j)] -= f * inv[(col, j)];
                }
            }
        }
        Ok(inv)
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        let c = self.cols;
        for j in 0..c {
            self.data.swap(a * c + j, b * c + j);
        }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// LU factorization without pivoting whose loops are bounded by the
/// matrix envelope (first nonzero per row and per column).
///
/// Fill-in of unpivoted LU stays inside the envelope, so sparse banded
/// chains factor in roughly `n * lower_band * upper_band` work. Only use on
/// matrices where unpivoted elimination is stable, such as nonsingular
/// M-matrices `I - Q`.
#[derive(Debug, Clone)]
pub struct EnvelopeLu {
    n: usize,
    lu: Matrix,
    /// Largest row index with a (structurally) nonzero entry in column k below the diagonal.
    lower_reach: Vec<usize>,
    /// Largest column index with a nonzero entry in row k right of the diagonal.
    upper_reach: Vec<usize>,
}

impl EnvelopeLu {
    pub fn factor(a: &Matrix) -> Result<Self, LinalgError> {
        if !a.is_square() {
            return Err(LinalgError::Dimension { expected: a.rows, got: a.cols });
        }
        let n = a.rows;
        // envelope: first nonzero column of each row, first nonzero row of each column
        let mut row_first = vec![0usize; n];
        let mut col_first = vec![0usize; n];
        for i in 0..n {
            row_first[i] = (0..=i).find(|&j| a[(i, j)] != 0.0).unwrap_or(i);
        }
        for j in 0..n {
            col_first[j] = (0..=j).find(|&i| a[(i, j)] != 0.0).unwrap_or(j);
        }
        let mut lower_reach = vec![0usize; n];
        let mut upper_reach = vec![0usize; n];
        for k in 0..n {
            lower_reach[k] = (k..n).rev().find(|&i| row_first[i] <= k).unwrap_or(k);
            upper_reach[k] = (k..n).rev().find(|&j| col_first[j] <= k).unwrap_or(k);
        }
        let mut lu = a.clone();
        for k in 0..n {
            let pivot = lu[(k, k)];
            if pivot.abs() < 1e-300 || !pivot.is_finite() {
                return Err(LinalgError::Singular { pivot: k });
            }
            let uend = upper_reach[k];
            for i in k + 1..=lower_reach[k] {
                let l = lu[(i, k)];
                if l == 0.0 {
                    continue;
                }
                let l = l / pivot;
                lu[(i, k)] = l;
                for j in k + 1..=uend {
                    let u = lu[(k, j)];
                    if u != 0.0 {
                        lu[(i, j)] -= l * u;
                    }
                }
            }
        }
        Ok(Self { n, lu, lower_reach, upper_reach })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solve `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for k in 0..n {
            let bk = b[k];
            if bk != 0.0 {
                for i in k + 1..=self.lower_reach[k] {
                    b[i] -= self.lu[(i, k)] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            for j in k + 1..=self.upper_reach[k] {
                s -= self.lu[(k, j)] * b[j];
            }
            b[k] = s / self.lu[(k, k)];
        }
    }

    /// Solve `Aᵀ x = b` in place.
    pub fn solve_transpose_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        // Uᵀ y = b
        for k in 0..n {
            let yk = b[k] / self.lu[(k, k)];
            b[k] = yk;
            if yk != 0.0 {
                for j in k + 1..=self.upper_reach[k] {
                    b[j] -= self.lu[(k, j)] * yk;
                }
            }
        }
        // Lᵀ x = y
        for k in (0..n).rev() {
            let mut s = b[k];
            for i in k + 1..=self.lower_reach[k] {
                s -= self.lu[(i, k)] * b[i];
            }
            b[k] = s;
        }
    }
}
