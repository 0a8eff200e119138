//! Core data types shared by every solver: the sparse set of revealed ones,
//! factored and inductive models, hyperparameters and run reports.

use std::ops::Range;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, PumcError, Result};
use crate::linalg::{dot, DenseMatrix};

/// Default cap on `rows * cols` for anything that materializes a full matrix.
pub const DEFAULT_MATERIALIZATION_CAP: usize = 100_000_000;

/// The revealed one-entries of an `m x n` binary matrix. Every other entry is
/// unlabeled and never stored.
///
/// Entries are kept sorted row-major and deduplicated. A CSR row index and a
/// transposed (column) index are built on construction so that solvers can
/// walk `Ω_i` for a row or the observed rows of a column directly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservedOnes {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize)>,
    row_offsets: Vec<usize>,
    col_of_entry: Vec<usize>,
    col_offsets: Vec<usize>,
    row_of_col_entry: Vec<usize>,
    position_of_col_entry: Vec<usize>,
}

impl ObservedOnes {
    /// Builds the set from arbitrary pairs; duplicates are merged.
    pub fn new(rows: usize, cols: usize, mut pairs: Vec<(usize, usize)>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(PumcError::DimensionMismatch(format!(
                "observation matrix must be at least 1x1, got {rows}x{cols}"
            )));
        }
        if let Some(&(row, col)) = pairs.iter().find(|&&(i, j)| i >= rows || j >= cols) {
            return Err(PumcError::IndexOutOfRange {
                row,
                col,
                rows,
                cols,
            });
        }
        pairs.sort_unstable();
        pairs.dedup();
        Ok(Self::from_sorted(rows, cols, pairs))
    }

    pub fn empty(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, Vec::new())
    }

    fn from_sorted(rows: usize, cols: usize, entries: Vec<(usize, usize)>) -> Self {
        let mut row_offsets = vec![0usize; rows + 1];
        let mut col_counts = vec![0usize; cols + 1];
        for &(i, j) in &entries {
            row_offsets[i + 1] += 1;
            col_counts[j + 1] += 1;
        }
        for i in 0..rows {
            row_offsets[i + 1] += row_offsets[i];
        }
        for j in 0..cols {
            col_counts[j + 1] += col_counts[j];
        }
        let col_offsets = col_counts.clone();
        let mut cursor = col_counts;
        let mut row_of_col_entry = vec![0usize; entries.len()];
        let mut position_of_col_entry = vec![0usize; entries.len()];
        for (pos, &(i, j)) in entries.iter().enumerate() {
            let slot = cursor[j];
            row_of_col_entry[slot] = i;
            position_of_col_entry[slot] = pos;
            cursor[j] += 1;
        }
        let col_of_entry = entries.iter().map(|&(_, j)| j).collect();
        Self {
            rows,
            cols,
            entries,
            row_offsets,
            col_of_entry,
            col_offsets,
            row_of_col_entry,
            position_of_col_entry,
        }
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
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sorted (row, col) pairs.
    #[inline]
    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }

    /// Positions in [`ObservedOnes::entries`] belonging to row `i`.
    #[inline]
    pub fn row_range(&self, i: usize) -> Range<usize> {
        self.row_offsets[i]..self.row_offsets[i + 1]
    }

    /// Observed column indices of row `i` (the set `Ω_i`), ascending.
    #[inline]
    pub fn row_cols(&self, i: usize) -> &[usize] {
        &self.col_of_entry[self.row_range(i)]
    }

    /// Observed row indices of column `j`, ascending.
    #[inline]
    pub fn col_rows(&self, j: usize) -> &[usize] {
        &self.row_of_col_entry[self.col_offsets[j]..self.col_offsets[j + 1]]
    }

    /// Entry positions (indices into `entries`) for column `j`, aligned with
    /// [`ObservedOnes::col_rows`].
    #[inline]
    pub fn col_positions(&self, j: usize) -> &[usize] {
        &self.position_of_col_entry[self.col_offsets[j]..self.col_offsets[j + 1]]
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        i < self.rows && self.row_cols(i).binary_search(&j).is_ok()
    }

    /// Fraction of revealed entries, `s̄ / (m n)`.
    pub fn density(&self) -> f64 {
        self.len() as f64 / (self.rows as f64 * self.cols as f64)
    }

    pub fn transpose(&self) -> Self {
        let pairs = self.entries.iter().map(|&(i, j)| (j, i)).collect();
        Self::new(self.cols, self.rows, pairs).expect("transpose of a valid set is valid")
    }

    /// Adds `(j, i)` for every `(i, j)`. Requires a square shape.
    pub fn symmetrize(&self) -> Result<Self> {
        if self.rows != self.cols {
            return Err(PumcError::DimensionMismatch(
                "symmetric closure needs a square matrix".into(),
            ));
        }
        let mut pairs = self.entries.clone();
        pairs.extend(self.entries.iter().map(|&(i, j)| (j, i)));
        Self::new(self.rows, self.cols, pairs)
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && self.entries.iter().all(|&(i, j)| self.contains(j, i))
    }

    /// Dense 0/1 matrix `A`.
    pub fn to_dense(&self) -> DenseMatrix {
        let mut a = DenseMatrix::zeros(self.rows, self.cols);
        for &(i, j) in &self.entries {
            a.set(i, j, 1.0);
        }
        a
    }
}

/// Anything that predicts the `(i, j)` entry of an `m x n` matrix.
pub trait MatrixModel {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;

    /// Prediction without bounds checks beyond slice indexing.
    fn predict_unchecked(&self, i: usize, j: usize) -> f64;

    fn predict_entry(&self, i: usize, j: usize) -> Result<f64> {
        if i >= self.rows() || j >= self.cols() {
            return Err(PumcError::IndexOutOfRange {
                row: i,
                col: j,
                rows: self.rows(),
                cols: self.cols(),
            });
        }
        Ok(self.predict_unchecked(i, j))
    }

    /// Dense `m x n` prediction; refuses when `m n` exceeds `cap`.
    fn materialize(&self, cap: usize) -> Result<DenseMatrix> {
        let (m, n) = (self.rows(), self.cols());
        if m.saturating_mul(n) > cap {
            return Err(PumcError::SizeLimit(format!(
                "materializing {m}x{n} exceeds the cap of {cap} entries"
            )));
        }
        Ok(DenseMatrix::from_fn(m, n, |i, j| self.predict_unchecked(i, j)))
    }
}

/// `X = W Hᵀ` kept in factored form. Rows of both factors are contiguous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowRankFactors {
    pub w: DenseMatrix,
    pub h: DenseMatrix,
}

impl LowRankFactors {
    pub fn new(w: DenseMatrix, h: DenseMatrix) -> Result<Self> {
        if w.cols() != h.cols() {
            return Err(PumcError::DimensionMismatch(format!(
                "factor ranks differ: W has {} columns, H has {}",
                w.cols(),
                h.cols()
            )));
        }
        check_finite("W", w.values())?;
        check_finite("H", h.values())?;
        Ok(Self { w, h })
    }

    pub fn zeros(m: usize, n: usize, k: usize) -> Self {
        Self {
            w: DenseMatrix::zeros(m, k),
            h: DenseMatrix::zeros(n, k),
        }
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.w.cols()
    }

    /// `‖W Hᵀ‖_F² = trace((WᵀW)(HᵀH))`, without forming the product.
    pub fn product_frobenius_sq(&self) -> f64 {
        let gw = self.w.gram();
        let gh = self.h.gram();
        // both Gram matrices are symmetric, so the trace is an elementwise sum
        gw.values().iter().zip(gh.values()).map(|(a, b)| a * b).sum()
    }

    pub fn factor_frobenius_sq(&self) -> f64 {
        self.w.frobenius_norm_sq() + self.h.frobenius_norm_sq()
    }
}

impl MatrixModel for LowRankFactors {
    fn rows(&self) -> usize {
        self.w.rows()
    }

    fn cols(&self) -> usize {
        self.h.rows()
    }

    #[inline]
    fn predict_unchecked(&self, i: usize, j: usize) -> f64 {
        dot(self.w.row(i), self.h.row(j))
    }
}

/// `X = F_u D F_vᵀ` with row features `F_u` (m x d) and column features
/// `F_v` (n x d).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InductiveModel {
    pub fu: DenseMatrix,
    pub fv: DenseMatrix,
    pub d: DenseMatrix,
    pub feature_row_norm_max_u: f64,
    pub feature_row_norm_max_v: f64,
}

impl InductiveModel {
    pub fn new(fu: DenseMatrix, fv: DenseMatrix, d: DenseMatrix) -> Result<Self> {
        if d.rows() != fu.cols() || d.cols() != fv.cols() {
            return Err(PumcError::DimensionMismatch(format!(
                "core is {}x{} but features have {} and {} columns",
                d.rows(),
                d.cols(),
                fu.cols(),
                fv.cols()
            )));
        }
        let feature_row_norm_max_u = fu.max_row_norm();
        let feature_row_norm_max_v = fv.max_row_norm();
        Ok(Self {
            fu,
            fv,
            d,
            feature_row_norm_max_u,
            feature_row_norm_max_v,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.d.rows()
    }

    /// The model as explicit factors `W = F_u D`, `H = F_v`.
    pub fn to_factors(&self) -> LowRankFactors {
        let w = self.fu.matmul(&self.d).expect("shapes checked at construction");
        LowRankFactors {
            w,
            h: self.fv.clone(),
        }
    }
}

impl MatrixModel for InductiveModel {
    fn rows(&self) -> usize {
        self.fu.rows()
    }

    fn cols(&self) -> usize {
        self.fv.rows()
    }

    fn predict_unchecked(&self, i: usize, j: usize) -> f64 {
        let u = self.fu.row(i);
        let v = self.fv.row(j);
        u.iter()
            .enumerate()
            .filter(|(_, &ua)| ua != 0.0)
            .map(|(a, &ua)| ua * dot(self.d.row(a), v))
            .sum()
    }
}

/// Hyperparameters of the PU estimators.
///
/// `rho` is the probability that a true one is hidden, `alpha` the weight on
/// revealed ones in the biased loss, `lambda` the nuclear-norm (or factor
/// ridge) weight, `t` the trace-norm budget of the constrained formulations
/// and `q` the recovery threshold. `t` and `lambda` are separate
/// parameterizations and are never converted into one another.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PuHyperParams {
    pub rho: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub t: f64,
    pub q: f64,
    pub rank_k: usize,
}

impl PuHyperParams {
    pub fn new(rho: f64, alpha: f64, lambda: f64, rank_k: usize) -> Result<Self> {
        let p = Self {
            rho,
            alpha,
            lambda,
            t: f64::INFINITY,
            q: 0.5,
            rank_k,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_rho(self.rho)?;
        check_alpha(self.alpha)?;
        check_unit_open("q", self.q)?;
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(PumcError::InvalidParameter(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.t >= 0.0) {
            return Err(PumcError::InvalidParameter(format!("t must be >= 0, got {}", self.t)));
        }
        if self.rank_k == 0 {
            return Err(PumcError::InvalidParameter("rank_k must be >= 1".into()));
        }
        Ok(())
    }
}

pub(crate) fn check_rho(rho: f64) -> Result<()> {
    if (0.0..1.0).contains(&rho) {
        Ok(())
    } else {
        Err(PumcError::InvalidParameter(format!("rho must lie in [0, 1), got {rho}")))
    }
}

/// Solvers accept `alpha = 1` (positive-only loss) in addition to the open
/// interval.
pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(PumcError::InvalidParameter(format!("alpha must lie in (0, 1], got {alpha}")))
    }
}

pub(crate) fn check_unit_open(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(PumcError::InvalidParameter(format!("{name} must lie in (0, 1), got {v}")))
    }
}

/// Per-run diagnostics returned by every solver.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    /// Objective at the starting point followed by one value per sweep.
    pub objective_per_sweep: Vec<f64>,
    pub sweeps_run: usize,
    pub converged: bool,
    pub flop_counter: u64,
    pub wall_clock: Duration,
}

impl SolverReport {
    /// Largest relative increase between consecutive objective values.
    pub fn max_relative_increase(&self) -> f64 {
        self.objective_per_sweep
            .windows(2)
            .map(|w| (w[1] - w[0]) / w[0].abs().max(f64::MIN_POSITIVE))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.objective_per_sweep.last().copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factors(m: usize, n: usize, k: usize, seed: u64) -> LowRankFactors {
        let mut s = seed;
        let mut next = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let w = DenseMatrix::from_fn(m, k, |_, _| next());
        let h = DenseMatrix::from_fn(n, k, |_, _| next());
        LowRankFactors::new(w, h).unwrap()
    }

    #[test]
    fn observed_ones_sorted_dedup_and_indexed() {
        let obs = ObservedOnes::new(3, 4, vec![(2, 1), (0, 3), (0, 1), (2, 1), (1, 0)]).unwrap();
        assert_eq!(obs.entries(), &[(0, 1), (0, 3), (1, 0), (2, 1)]);
        assert_eq!(obs.row_cols(0), &[1, 3]);
        assert_eq!(obs.row_cols(2), &[1]);
        assert_eq!(obs.col_rows(1), &[0, 2]);
        for j in 0..4 {
            for (&i, &pos) in obs.col_rows(j).iter().zip(obs.col_positions(j)) {
                assert_eq!(obs.entries()[pos], (i, j));
            }
        }
        assert!(obs.contains(0, 3) && !obs.contains(0, 2));
    }

    #[test]
    fn observed_ones_range_checked() {
        assert!(matches!(
            ObservedOnes::new(2, 2, vec![(0, 2)]),
            Err(PumcError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn orthogonal_factor_rows() {
        let w = DenseMatrix::new(2, 1, vec![1.0, 0.0]).unwrap();
        let f = LowRankFactors::new(w.clone(), w).unwrap();
        assert_eq!(f.predict_entry(0, 0).unwrap(), 1.0);
        assert_eq!(f.predict_entry(0, 1).unwrap(), 0.0);
        assert!(f.predict_entry(2, 0).is_err());
    }

    #[test]
    fn predict_matches_dense_product() {
        let f = factors(4, 4, 2, 7);
        let dense = f.w.matmul(&f.h.transpose()).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((f.predict_entry(i, j).unwrap() - dense.get(i, j)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn materialize_small_cases() {
        let f = LowRankFactors::new(
            DenseMatrix::new(1, 1, vec![2.0]).unwrap(),
            DenseMatrix::new(1, 1, vec![3.0]).unwrap(),
        )
        .unwrap();
        assert_eq!(f.materialize(10).unwrap().values(), &[6.0]);
        let z = LowRankFactors::zeros(3, 2, 2);
        assert!(z.materialize(10).unwrap().values().iter().all(|&v| v == 0.0));
        let g = factors(8, 6, 3, 11);
        let x = g.materialize(DEFAULT_MATERIALIZATION_CAP).unwrap();
        for i in 0..8 {
            for j in 0..6 {
                assert!((x.get(i, j) - g.predict_entry(i, j).unwrap()).abs() <= 1e-12);
            }
        }
        assert!(matches!(g.materialize(47), Err(PumcError::SizeLimit(_))));
    }

    #[test]
    fn inductive_identity_features_read_core() {
        let d = DenseMatrix::from_fn(3, 3, |i, j| (i * 3 + j) as f64 - 4.0);
        let model =
            InductiveModel::new(DenseMatrix::identity(3), DenseMatrix::identity(3), d.clone()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(model.predict_entry(i, j).unwrap(), d.get(i, j));
            }
        }
        assert_eq!(model.feature_row_norm_max_u, 1.0);
    }

    #[test]
    fn inductive_identity_reproduces_factor_model() {
        let f = factors(10, 10, 3, 3);
        let d = f.materialize(1000).unwrap();
        let model =
            InductiveModel::new(DenseMatrix::identity(10), DenseMatrix::identity(10), d).unwrap();
        let a = model.materialize(1000).unwrap();
        let b = f.materialize(1000).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn trace_identity_matches_materialized_norm() {
        let f = factors(10, 7, 3, 5);
        let dense = f.materialize(1000).unwrap();
        assert!((f.product_frobenius_sq() - dense.frobenius_norm_sq()).abs() < 1e-12);
    }

    #[test]
    fn hyperparameter_ranges() {
        assert!(PuHyperParams::new(0.9, 0.95, 0.1, 5).is_ok());
        assert!(PuHyperParams::new(1.0, 0.95, 0.1, 5).is_err());
        assert!(PuHyperParams::new(0.5, 1.0, 0.1, 5).is_ok());
        assert!(PuHyperParams::new(0.5, 1.5, 0.1, 5).is_err());
        assert!(PuHyperParams::new(0.5, 0.0, 0.1, 5).is_err());
        assert!(PuHyperParams::new(0.5, 0.7, -1.0, 5).is_err());
        assert!(PuHyperParams::new(0.5, 0.7, 0.0, 0).is_err());
    }

    #[test]
    fn model_types_are_send_and_sync() {
        fn assert_send_sync<T: Send + Sync>() {}
        assert_send_sync::<ObservedOnes>();
        assert_send_sync::<LowRankFactors>();
        assert_send_sync::<InductiveModel>();
        assert_send_sync::<SolverReport>();
    }
}
