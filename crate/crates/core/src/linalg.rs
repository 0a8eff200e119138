//! Row-major dense matrices and the handful of small dense decompositions
//! (thin QR, SVD, symmetric solves) the solvers need.
//!
//! Large objects are never decomposed densely; nalgebra is only used on
//! tall-thin blocks (m x p with small p) and on k x k / d x d cores.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{PumcError, Result};

/// Real matrix stored row by row, so `row(i)` is a contiguous slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(PumcError::DimensionMismatch(format!(
                "matrix must have at least one row and column, got {rows}x{cols}"
            )));
        }
        if values.len() != rows * cols {
            return Err(PumcError::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    /// Zero matrix. Unlike [`DenseMatrix::new`], zero-column shapes are
    /// allowed here so that rank-0 factor blocks can be represented.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                values.push(f(i, j));
            }
        }
        Self { rows, cols, values }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(PumcError::DimensionMismatch("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// `self * other`.
    pub fn matmul(&self, other: &DenseMatrix) -> Result<Self> {
        if self.cols != other.rows {
            return Err(PumcError::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.values[i * other.cols..(i + 1) * other.cols];
            for (l, &a) in self.row(i).iter().enumerate() {
                if a != 0.0 {
                    axpy(a, other.row(l), out_row);
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ * other` without forming the transpose.
    pub fn t_matmul(&self, other: &DenseMatrix) -> Result<Self> {
        if self.rows != other.rows {
            return Err(PumcError::DimensionMismatch(format!(
                "cannot multiply ({}x{})ᵀ by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.cols, other.cols);
        for l in 0..self.rows {
            let b = other.row(l);
            for (i, &a) in self.row(l).iter().enumerate() {
                if a != 0.0 {
                    axpy(a, b, &mut out.values[i * other.cols..(i + 1) * other.cols]);
                }
            }
        }
        Ok(out)
    }

    /// `self * otherᵀ`.
    pub fn matmul_t(&self, other: &DenseMatrix) -> Result<Self> {
        if self.cols != other.cols {
            return Err(PumcError::DimensionMismatch(format!(
                "cannot multiply {}x{} by ({}x{})ᵀ",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Self::from_fn(self.rows, other.rows, |i, j| {
            dot(self.row(i), other.row(j))
        }))
    }

    /// Gram matrix `selfᵀ self`.
    pub fn gram(&self) -> Self {
        let k = self.cols;
        let mut g = Self::zeros(k, k);
        for i in 0..self.rows {
            accumulate_outer(&mut g, self.row(i), 1.0);
        }
        g
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sq().sqrt()
    }

    /// Frobenius norm of `self - other`.
    pub fn distance(&self, other: &DenseMatrix) -> f64 {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Copy of the first `k` columns.
    pub fn leading_columns(&self, k: usize) -> Self {
        Self::from_fn(self.rows, k, |i, j| self.get(i, j))
    }

    /// Scales every row to unit Euclidean norm; zero rows are left alone.
    pub fn normalize_rows(&mut self) {
        for i in 0..self.rows {
            let row = self.row_mut(i);
            let norm = dot(row, row).sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
    }

    pub fn max_row_norm(&self) -> f64 {
        (0..self.rows)
            .map(|i| dot(self.row(i), self.row(i)).sqrt())
            .fold(0.0, f64::max)
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.values)
    }

    pub fn from_nalgebra(m: &DMatrix<f64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a * x`.
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `g += s * v vᵀ` for a square `g`.
#[inline]
pub fn accumulate_outer(g: &mut DenseMatrix, v: &[f64], s: f64) {
    let k = v.len();
    for (a, &va) in v.iter().enumerate() {
        let sv = s * va;
        if sv != 0.0 {
            axpy(sv, v, &mut g.values[a * k..(a + 1) * k]);
        }
    }
}

/// Orthonormal basis of the column space of a tall matrix (rows ≥ cols),
/// via Householder QR.
pub fn orthonormal_columns(a: &DenseMatrix) -> DenseMatrix {
    debug_assert!(a.rows >= a.cols);
    let qr = a.to_nalgebra().qr();
    DenseMatrix::from_nalgebra(&qr.q())
}

/// Full thin SVD `a = U diag(s) Vᵀ` with singular values sorted descending.
pub struct DenseSvd {
    pub u: DenseMatrix,
    pub singular_values: Vec<f64>,
    pub v: DenseMatrix,
}

pub fn dense_svd(a: &DenseMatrix) -> Result<DenseSvd> {
    let svd = a
        .to_nalgebra()
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or_else(|| PumcError::Numeric("dense SVD did not converge".into()))?;
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&x, &y| s[y].total_cmp(&s[x]));
    let r = order.len();
    Ok(DenseSvd {
        u: DenseMatrix::from_fn(a.rows, r, |i, j| u[(i, order[j])]),
        singular_values: order.iter().map(|&j| s[j]).collect(),
        v: DenseMatrix::from_fn(a.cols, r, |i, j| v_t[(order[j], i)]),
    })
}

/// Solves the symmetric positive semi-definite system `a x = b`.
///
/// Uses Cholesky when `a` is positive definite; otherwise returns the
/// minimum-norm least-squares solution from an SVD, which is an exact
/// minimizer whenever `b` lies in the range of `a` (as it does for normal
/// equations).
pub fn solve_spd(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let m = a.to_nalgebra();
    let rhs = nalgebra::DVector::from_column_slice(b);
    if let Some(ch) = m.clone().cholesky() {
        return Ok(ch.solve(&rhs).iter().copied().collect());
    }
    let svd = m.svd(true, true);
    let eps = svd.singular_values.max() * (a.rows as f64) * f64::EPSILON;
    let x = svd
        .solve(&rhs, eps)
        .map_err(|e| PumcError::Numeric(format!("pseudo-inverse solve failed: {e}")))?;
    Ok(x.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(DenseMatrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(DenseMatrix::new(0, 2, vec![]).is_err());
        assert!(DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    }

    #[test]
    fn products_agree() {
        let a = DenseMatrix::from_fn(3, 2, |i, j| (i * 2 + j) as f64 + 0.5);
        let b = DenseMatrix::from_fn(3, 4, |i, j| (i as f64 - j as f64) * 0.25);
        let direct = a.transpose().matmul(&b).unwrap();
        assert_eq!(a.t_matmul(&b).unwrap(), direct);
        let c = DenseMatrix::from_fn(4, 2, |i, j| (i + j) as f64);
        assert_eq!(a.matmul_t(&c).unwrap(), a.matmul(&c.transpose()).unwrap());
        assert!(a.gram().max_abs_diff(&a.t_matmul(&a).unwrap()) < 1e-14);
    }

    #[test]
    fn svd_sorted_and_reconstructs() {
        let a = DenseMatrix::from_fn(5, 3, |i, j| ((i * 7 + j * 3) % 5) as f64 - 1.5);
        let svd = dense_svd(&a).unwrap();
        assert!(svd.singular_values.windows(2).all(|w| w[0] >= w[1]));
        let us = DenseMatrix::from_fn(5, 3, |i, j| svd.u.get(i, j) * svd.singular_values[j]);
        let back = us.matmul_t(&svd.v).unwrap();
        assert!(back.max_abs_diff(&a) < 1e-12);
    }

    #[test]
    fn spd_solve_handles_singular_systems() {
        let a = DenseMatrix::from_rows(&[vec![4.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let x = solve_spd(&a, &[1.0, 2.0]).unwrap();
        assert!((4.0 * x[0] + x[1] - 1.0).abs() < 1e-12 && (x[0] + 3.0 * x[1] - 2.0).abs() < 1e-12);
        // rank one: minimum-norm solution of [[1,1],[1,1]] x = [2,2] is [1,1]
        let s = DenseMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let x = solve_spd(&s, &[2.0, 2.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-10 && (x[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn normalized_rows_have_unit_norm() {
        let mut a = DenseMatrix::from_fn(4, 3, |i, j| (i + 1) as f64 * (j as f64 - 0.7));
        a.normalize_rows();
        for i in 0..4 {
            assert!((dot(a.row(i), a.row(i)).sqrt() - 1.0).abs() < 1e-12);
        }
    }
}
