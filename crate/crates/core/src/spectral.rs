//! Matrix-free spectral kernel.
//!
//! The proximal BiasMC step needs the leading singular triplets of
//! `G = X - η∇f_b(X)` where `X = W Hᵀ` is never formed. [`BiasGradientOperator`]
//! applies `G` to a thin block using
//!
//! ```text
//! G P = (1 - 2η(1-α)) W (Hᵀ P) + 2η(1-α) A P - 2η(2α-1) R P
//! ```
//!
//! with `R = (X - A)` restricted to the revealed ones, and [`topk_svd`] runs
//! seeded randomized subspace iteration against any [`LinearOperator`].

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, PumcError, Result};
use crate::linalg::{dense_svd, dot, orthonormal_columns, DenseMatrix};
use crate::losses::{check_dims, predictions_on_observed};
use crate::model::{check_alpha, LowRankFactors, ObservedOnes};

/// Default proximal step; below `1/L = 0.5` for the biased loss.
pub const DEFAULT_PROX_STEP: f64 = 0.4;

/// A real `rows x cols` operator known only through block products.
///
/// Blocks are row-major: `apply_block` takes a `cols x p` block and returns
/// `rows x p`; `apply_transpose_block` maps `rows x p` to `cols x p`.
pub trait LinearOperator {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn apply_block(&self, p: &DenseMatrix) -> Result<DenseMatrix>;
    fn apply_transpose_block(&self, q: &DenseMatrix) -> Result<DenseMatrix>;

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let p = DenseMatrix::new(v.len(), 1, v.to_vec())?;
        Ok(self.apply_block(&p)?.into_values())
    }

    fn apply_transpose(&self, u: &[f64]) -> Result<Vec<f64>> {
        let q = DenseMatrix::new(u.len(), 1, u.to_vec())?;
        Ok(self.apply_transpose_block(&q)?.into_values())
    }
}

fn check_block(name: &str, expected_rows: usize, block: &DenseMatrix) -> Result<()> {
    if block.rows() != expected_rows {
        return Err(PumcError::DimensionMismatch(format!(
            "{name}: block has {} rows, operator expects {expected_rows}",
            block.rows()
        )));
    }
    Ok(())
}

/// An explicit dense matrix used as an operator.
pub struct DenseOperator<'a>(pub &'a DenseMatrix);

impl LinearOperator for DenseOperator<'_> {
    fn rows(&self) -> usize {
        self.0.rows()
    }

    fn cols(&self) -> usize {
        self.0.cols()
    }

    fn apply_block(&self, p: &DenseMatrix) -> Result<DenseMatrix> {
        self.0.matmul(p)
    }

    fn apply_transpose_block(&self, q: &DenseMatrix) -> Result<DenseMatrix> {
        self.0.t_matmul(q)
    }
}

type BlockFn<'a> = Box<dyn Fn(&DenseMatrix) -> Result<DenseMatrix> + Send + Sync + 'a>;

/// Operator defined by a pair of caller-supplied closures.
pub struct FnOperator<'a> {
    rows: usize,
    cols: usize,
    apply: BlockFn<'a>,
    apply_transpose: BlockFn<'a>,
}

impl<'a> FnOperator<'a> {
    pub fn new(
        rows: usize,
        cols: usize,
        apply: impl Fn(&DenseMatrix) -> Result<DenseMatrix> + Send + Sync + 'a,
        apply_transpose: impl Fn(&DenseMatrix) -> Result<DenseMatrix> + Send + Sync + 'a,
    ) -> Self {
        Self {
            rows,
            cols,
            apply: Box::new(apply),
            apply_transpose: Box::new(apply_transpose),
        }
    }
}

impl LinearOperator for FnOperator<'_> {
    fn rows(&self) -> usize {
        self.rows
    }

    fn cols(&self) -> usize {
        self.cols
    }

    fn apply_block(&self, p: &DenseMatrix) -> Result<DenseMatrix> {
        check_block("apply", self.cols, p)?;
        (self.apply)(p)
    }

    fn apply_transpose_block(&self, q: &DenseMatrix) -> Result<DenseMatrix> {
        check_block("apply_transpose", self.rows, q)?;
        (self.apply_transpose)(q)
    }
}

/// The 0/1 observation matrix `A` as an operator.
pub struct ObservationOperator<'a>(pub &'a ObservedOnes);

impl LinearOperator for ObservationOperator<'_> {
    fn rows(&self) -> usize {
        self.0.rows()
    }

    fn cols(&self) -> usize {
        self.0.cols()
    }

    fn apply_block(&self, p: &DenseMatrix) -> Result<DenseMatrix> {
        check_block("apply", self.0.cols(), p)?;
        let mut out = DenseMatrix::zeros(self.0.rows(), p.cols());
        sparse_accumulate(self.0, None, 1.0, p, &mut out, false);
        Ok(out)
    }

    fn apply_transpose_block(&self, q: &DenseMatrix) -> Result<DenseMatrix> {
        check_block("apply_transpose", self.0.rows(), q)?;
        let mut out = DenseMatrix::zeros(self.0.cols(), q.cols());
        sparse_accumulate(self.0, None, 1.0, q, &mut out, true);
        Ok(out)
    }
}

/// `out += scale * S p` (or `Sᵀ p` when `transpose`), where `S` has the
/// sparsity of `obs` and entry values `values` (all ones when `None`).
fn sparse_accumulate(
    obs: &ObservedOnes,
    values: Option<&[f64]>,
    scale: f64,
    p: &DenseMatrix,
    out: &mut DenseMatrix,
    transpose: bool,
) {
    for (pos, &(i, j)) in obs.entries().iter().enumerate() {
        let v = scale * values.map_or(1.0, |vals| vals[pos]);
        let (src, dst) = if transpose { (i, j) } else { (j, i) };
        crate::linalg::axpy(v, p.row(src), out.row_mut(dst));
    }
}

/// `G = X - η∇f_b(X)` for `X = W Hᵀ`, applied without materializing.
pub struct BiasGradientOperator<'a> {
    model: &'a LowRankFactors,
    obs: &'a ObservedOnes,
    residual: Vec<f64>,
    coef_low_rank: f64,
    coef_a: f64,
    coef_r: f64,
    flops: AtomicU64,
}

impl BiasGradientOperator<'_> {
    /// Floating point operations spent so far (construction plus every
    /// application).
    pub fn flops(&self) -> u64 {
        self.flops.load(Ordering::Relaxed)
    }

    /// Residual `X_ij - 1` on the revealed ones, in entry order.
    pub fn residual(&self) -> &[f64] {
        &self.residual
    }

    fn count(&self, p_cols: usize, transpose: bool) {
        let m = self.model.w.rows() as u64;
        let n = self.model.h.rows() as u64;
        let k = self.model.rank() as u64;
        let s = self.obs.len() as u64;
        let p = p_cols as u64;
        let out_rows = if transpose { n } else { m };
        // two thin products, scaling of the low-rank part, two sparse passes
        // (multiply-add each, plus the residual scaling)
        self.flops
            .fetch_add(2 * (m + n) * k * p + out_rows * p + 5 * s * p, Ordering::Relaxed);
    }

    fn low_rank_part(&self, left: &DenseMatrix, right: &DenseMatrix, p: &DenseMatrix) -> Result<DenseMatrix> {
        let core = right.t_matmul(p)?;
        left.matmul(&core)
    }
}

/// Builds the structured operator for one proximal step.
pub fn gradient_operator_bias<'a>(
    model: &'a LowRankFactors,
    obs: &'a ObservedOnes,
    alpha: f64,
    eta: f64,
) -> Result<BiasGradientOperator<'a>> {
    check_alpha(alpha)?;
    check_dims(model, obs)?;
    if !(eta >= 0.0) {
        return Err(PumcError::InvalidParameter(format!("step must be >= 0, got {eta}")));
    }
    let residual: Vec<f64> = predictions_on_observed(model, obs)
        .into_iter()
        .map(|x| x - 1.0)
        .collect();
    let flops = AtomicU64::new(2 * obs.len() as u64 * model.rank() as u64);
    Ok(BiasGradientOperator {
        model,
        obs,
        residual,
        coef_low_rank: 1.0 - 2.0 * eta * (1.0 - alpha),
        coef_a: 2.0 * eta * (1.0 - alpha),
        coef_r: -2.0 * eta * (2.0 * alpha - 1.0),
        flops,
    })
}

impl LinearOperator for BiasGradientOperator<'_> {
    fn rows(&self) -> usize {
        self.model.w.rows()
    }

    fn cols(&self) -> usize {
        self.model.h.rows()
    }

    fn apply_block(&self, p: &DenseMatrix) -> Result<DenseMatrix> {
        check_block("apply", self.cols(), p)?;
        let mut out = self.low_rank_part(&self.model.w, &self.model.h, p)?;
        out.scale(self.coef_low_rank);
        sparse_accumulate(self.obs, None, self.coef_a, p, &mut out, false);
        sparse_accumulate(self.obs, Some(&self.residual), self.coef_r, p, &mut out, false);
        self.count(p.cols(), false);
        Ok(out)
    }

    fn apply_transpose_block(&self, q: &DenseMatrix) -> Result<DenseMatrix> {
        check_block("apply_transpose", self.rows(), q)?;
        let mut out = self.low_rank_part(&self.model.h, &self.model.w, q)?;
        out.scale(self.coef_low_rank);
        sparse_accumulate(self.obs, None, self.coef_a, q, &mut out, true);
        sparse_accumulate(self.obs, Some(&self.residual), self.coef_r, q, &mut out, true);
        self.count(q.cols(), true);
        Ok(out)
    }
}

/// Leading singular triplets: `U` (m x k), `V` (n x k), values descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedSvd {
    pub u: DenseMatrix,
    pub singular_values: Vec<f64>,
    pub v: DenseMatrix,
}

impl TruncatedSvd {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }
}

const OVERSAMPLING: usize = 10;

/// Randomized subspace iteration for the top `k` singular triplets.
///
/// Starts from a seeded Gaussian block of `k + 10` columns (capped at
/// `min(rows, cols)`), re-orthonormalizes with QR after every product and
/// stops once every leading singular value estimate moves by less than
/// `tol * σ₁` between iterations, or after `max_iters`.
pub fn topk_svd(
    op: &dyn LinearOperator,
    k: usize,
    max_iters: usize,
    tol: f64,
    seed: u64,
) -> Result<TruncatedSvd> {
    let (m, n) = (op.rows(), op.cols());
    let full = m.min(n);
    if k > full {
        return Err(PumcError::InvalidParameter(format!(
            "requested {k} singular values from a {m}x{n} operator"
        )));
    }
    if k == 0 {
        return Ok(TruncatedSvd {
            u: DenseMatrix::zeros(m, 0),
            singular_values: Vec::new(),
            v: DenseMatrix::zeros(n, 0),
        });
    }
    let p = (k + OVERSAMPLING).min(full);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = DenseMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));

    let mut q = orthonormal_columns(&checked(op.apply_block(&omega)?)?);
    let mut previous: Option<Vec<f64>> = None;
    let mut iter = 0;
    loop {
        // Bᵀ = Gᵀ Q, so G ≈ Q B = Q (V S Wᵀ)ᵀ.
        let bt = checked(op.apply_transpose_block(&q)?)?;
        let svd = dense_svd(&bt)?;
        let values = &svd.singular_values;
        let converged = previous.as_ref().is_some_and(|prev| {
            let scale = values[0].max(f64::MIN_POSITIVE);
            (0..k).all(|i| (values[i] - prev[i]).abs() <= tol * scale)
        }) || values[0] == 0.0;
        iter += 1;
        if converged || iter >= max_iters.max(1) {
            let u = q.matmul(&svd.v)?;
            return Ok(TruncatedSvd {
                u: u.leading_columns(k),
                singular_values: values[..k].to_vec(),
                v: svd.u.leading_columns(k),
            });
        }
        previous = Some(values.clone());
        q = orthonormal_columns(&checked(op.apply_block(&svd.u)?)?);
    }
}

fn checked(block: DenseMatrix) -> Result<DenseMatrix> {
    check_finite("operator output", block.values())?;
    Ok(block)
}

/// Singular-value shrinkage: keeps components with `σ > λ`, reduced by `λ`,
/// and splits `sqrt(σ - λ)` symmetrically into both factors.
pub fn soft_threshold(svd: &TruncatedSvd, lambda: f64) -> LowRankFactors {
    let kept: Vec<(usize, f64)> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > lambda)
        .map(|(i, &s)| (i, (s - lambda).sqrt()))
        .collect();
    let r = kept.len();
    let w = DenseMatrix::from_fn(svd.u.rows(), r, |i, c| svd.u.get(i, kept[c].0) * kept[c].1);
    let h = DenseMatrix::from_fn(svd.v.rows(), r, |j, c| svd.v.get(j, kept[c].0) * kept[c].1);
    LowRankFactors { w, h }
}

/// Subspace iteration settings used inside proximal steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvdSettings {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for SvdSettings {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-10,
        }
    }
}

/// One proximal gradient step on `f_b + λ‖X‖_*`:
/// `X ← S(X - η∇f_b(X), ηλ)` with at most `k` retained components.
///
/// Returns the new factors and the flops spent in operator applications.
pub fn prox_step_bias_with(
    model: &LowRankFactors,
    obs: &ObservedOnes,
    alpha: f64,
    eta: f64,
    lambda: f64,
    k: usize,
    seed: u64,
    settings: SvdSettings,
) -> Result<(LowRankFactors, u64)> {
    if lambda < 0.0 {
        return Err(PumcError::InvalidParameter(format!("lambda must be >= 0, got {lambda}")));
    }
    let op = gradient_operator_bias(model, obs, alpha, eta)?;
    let k = k.min(obs.rows().min(obs.cols()));
    let svd = topk_svd(&op, k, settings.max_iters, settings.tol, seed)?;
    let threshold = eta * lambda;
    if k < obs.rows().min(obs.cols()) && svd.singular_values.last().is_some_and(|&s| s > threshold) {
        log::warn!(
            "rank cap {k} reached: smallest retained singular value {:.3e} exceeds the threshold {:.3e}",
            svd.singular_values[k - 1],
            threshold
        );
    }
    Ok((soft_threshold(&svd, threshold), op.flops()))
}

pub fn prox_step_bias(
    model: &LowRankFactors,
    obs: &ObservedOnes,
    alpha: f64,
    eta: f64,
    lambda: f64,
    k: usize,
    seed: u64,
) -> Result<LowRankFactors> {
    Ok(prox_step_bias_with(model, obs, alpha, eta, lambda, k, seed, SvdSettings::default())?.0)
}

/// Nuclear norm of `W Hᵀ` from the factors alone.
///
/// With `W = P_w (WᵀW)^{1/2}` and `H = P_h (HᵀH)^{1/2}` for partial isometries
/// `P_w`, `P_h`, the nonzero singular values of `W Hᵀ` are those of the
/// `k x k` matrix `(WᵀW)^{1/2} (HᵀH)^{1/2}`.
pub fn nuclear_norm(model: &LowRankFactors) -> Result<f64> {
    if model.rank() == 0 {
        return Ok(0.0);
    }
    let sw = psd_sqrt(&model.w.gram());
    let sh = psd_sqrt(&model.h.gram());
    let core = sw * sh;
    let svd = core
        .try_svd(false, false, f64::EPSILON, 0)
        .ok_or_else(|| PumcError::Numeric("core SVD did not converge".into()))?;
    Ok(svd.singular_values.iter().sum())
}

fn psd_sqrt(g: &DenseMatrix) -> DMatrix<f64> {
    let eig = g.to_nalgebra().symmetric_eigen();
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `⟨G v, u⟩ - ⟨v, Gᵀ u⟩` for the given probe vectors.
pub fn adjointness_gap(op: &dyn LinearOperator, v: &[f64], u: &[f64]) -> Result<f64> {
    let gv = op.apply(v)?;
    let gtu = op.apply_transpose(u)?;
    Ok(dot(&gv, u) - dot(v, &gtu))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{objective_bias, Regularizer};
    use crate::model::MatrixModel;
    use rand::Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn gaussian(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(r))
    }

    fn random_obs(r: &mut ChaCha8Rng, m: usize, n: usize, p: f64) -> ObservedOnes {
        let mut pairs = Vec::new();
        for i in 0..m {
            for j in 0..n {
                if r.random::<f64>() < p {
                    pairs.push((i, j));
                }
            }
        }
        ObservedOnes::new(m, n, pairs).unwrap()
    }

    /// Dense `X - η∇f_b(X)` by a double loop.
    fn dense_gradient_step(model: &LowRankFactors, obs: &ObservedOnes, alpha: f64, eta: f64) -> DenseMatrix {
        let x = model.materialize(usize::MAX).unwrap();
        DenseMatrix::from_fn(x.rows(), x.cols(), |i, j| {
            let xij = x.get(i, j);
            let grad = if obs.contains(i, j) {
                2.0 * alpha * (xij - 1.0)
            } else {
                2.0 * (1.0 - alpha) * xij
            };
            xij - eta * grad
        })
    }

    fn dense_shrink(g: &DenseMatrix, lambda: f64) -> DenseMatrix {
        let svd = dense_svd(g).unwrap();
        let r = svd.singular_values.len();
        let us = DenseMatrix::from_fn(g.rows(), r, |i, c| {
            svd.u.get(i, c) * (svd.singular_values[c] - lambda).max(0.0)
        });
        us.matmul_t(&svd.v).unwrap()
    }

    #[test]
    fn zero_step_operator_is_x() {
        let mut r = rng(1);
        let model = LowRankFactors::new(gaussian(&mut r, 6, 2), gaussian(&mut r, 5, 2)).unwrap();
        let obs = random_obs(&mut r, 6, 5, 0.3);
        let op = gradient_operator_bias(&model, &obs, 0.5, 0.0).unwrap();
        let v: Vec<f64> = (0..5).map(|_| r.random::<f64>() - 0.5).collect();
        let got = op.apply(&v).unwrap();
        let x = model.materialize(100).unwrap();
        for i in 0..6 {
            let expected = dot(x.row(i), &v);
            assert!((got[i] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_operator_matches_dense_oracle() {
        let mut r = rng(2);
        let model = LowRankFactors::new(gaussian(&mut r, 8, 3), gaussian(&mut r, 7, 3)).unwrap();
        let obs = random_obs(&mut r, 8, 7, 0.4);
        for &(alpha, eta) in &[(0.95, 0.4), (0.7, 0.25), (1.0, 0.1)] {
            let op = gradient_operator_bias(&model, &obs, alpha, eta).unwrap();
            let dense = dense_gradient_step(&model, &obs, alpha, eta);
            for _ in 0..10 {
                let v: Vec<f64> = (0..7).map(|_| StandardNormal.sample(&mut r)).collect();
                let got = op.apply(&v).unwrap();
                for i in 0..8 {
                    assert!((got[i] - dot(dense.row(i), &v)).abs() < 1e-9);
                }
                let u: Vec<f64> = (0..8).map(|_| StandardNormal.sample(&mut r)).collect();
                assert!(adjointness_gap(&op, &v, &u).unwrap().abs() < 1e-8);
            }
        }
    }

    #[test]
    fn empty_observations_with_alpha_one_leave_x() {
        let mut r = rng(3);
        let model = LowRankFactors::new(gaussian(&mut r, 5, 2), gaussian(&mut r, 4, 2)).unwrap();
        let obs = ObservedOnes::empty(5, 4).unwrap();
        let op = gradient_operator_bias(&model, &obs, 1.0, 0.4).unwrap();
        let x = model.materialize(100).unwrap();
        let g = op.apply_block(&DenseMatrix::identity(4)).unwrap();
        assert!(g.max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn topk_on_diagonal_and_identity() {
        let diag = DenseMatrix::from_fn(3, 3, |i, j| if i == j { [3.0, 1.0, 0.2][i] } else { 0.0 });
        let svd = topk_svd(&DenseOperator(&diag), 2, 50, 1e-12, 9).unwrap();
        assert!((svd.singular_values[0] - 3.0).abs() < 1e-8);
        assert!((svd.singular_values[1] - 1.0).abs() < 1e-8);

        let eye = DenseMatrix::identity(10);
        let svd = topk_svd(&DenseOperator(&eye), 3, 50, 1e-12, 4).unwrap();
        assert!(svd.singular_values.iter().all(|s| (s - 1.0).abs() < 1e-8));
        let utu = svd.u.t_matmul(&svd.u).unwrap();
        assert!(utu.max_abs_diff(&DenseMatrix::identity(3)) < 1e-8);
    }

    #[test]
    fn topk_rejects_large_k() {
        let eye = DenseMatrix::identity(4);
        assert!(topk_svd(&DenseOperator(&eye), 5, 10, 1e-8, 0).is_err());
    }

    #[test]
    fn topk_deterministic_under_seed() {
        let mut r = rng(5);
        let a = gaussian(&mut r, 40, 25);
        let s1 = topk_svd(&DenseOperator(&a), 4, 8, 1e-14, 77).unwrap();
        let s2 = topk_svd(&DenseOperator(&a), 4, 8, 1e-14, 77).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn soft_threshold_cases() {
        let diag = DenseMatrix::from_fn(3, 3, |i, j| if i == j { [3.0, 1.0, 0.2][i] } else { 0.0 });
        let exact = TruncatedSvd {
            u: DenseMatrix::identity(3),
            singular_values: vec![3.0, 1.0, 0.2],
            v: DenseMatrix::identity(3),
        };
        let kept = soft_threshold(&exact, 1.0);
        assert_eq!(kept.rank(), 1);
        assert!((nuclear_norm(&kept).unwrap() - 2.0).abs() < 1e-10);
        let svd = topk_svd(&DenseOperator(&diag), 3, 50, 1e-12, 1).unwrap();
        let same = soft_threshold(&svd, 0.0).materialize(100).unwrap();
        assert!(same.max_abs_diff(&diag) < 1e-10);

        let mut r = rng(6);
        let g = gaussian(&mut r, 20, 20);
        let svd = topk_svd(&DenseOperator(&g), 20, 50, 1e-13, 2).unwrap();
        let got = soft_threshold(&svd, 0.7).materialize(1000).unwrap();
        assert!(got.distance(&dense_shrink(&g, 0.7)) < 1e-8);
    }

    #[test]
    fn nuclear_norm_matches_dense_svd() {
        let mut r = rng(7);
        for (m, n, k) in [(9, 6, 3), (4, 5, 7), (12, 12, 12)] {
            let f = LowRankFactors::new(gaussian(&mut r, m, k), gaussian(&mut r, n, k)).unwrap();
            let dense = f.materialize(1000).unwrap();
            let expected: f64 = dense_svd(&dense).unwrap().singular_values.iter().sum();
            assert!((nuclear_norm(&f).unwrap() - expected).abs() < 1e-9 * expected.max(1.0));
        }
    }

    #[test]
    fn prox_step_limits() {
        let mut r = rng(8);
        let model = LowRankFactors::new(gaussian(&mut r, 10, 3), gaussian(&mut r, 9, 3)).unwrap();
        let obs = random_obs(&mut r, 10, 9, 0.3);
        let killed = prox_step_bias(&model, &obs, 0.9, 0.4, 1e6, 5, 1).unwrap();
        assert_eq!(killed.rank(), 0);
        let fixed = prox_step_bias(&model, &obs, 0.9, 0.0, 0.0, 9, 1).unwrap();
        let before = model.materialize(1000).unwrap();
        let after = fixed.materialize(1000).unwrap();
        assert!(after.max_abs_diff(&before) < 1e-8);
    }

    #[test]
    fn prox_step_matches_dense_oracle() {
        let mut r = rng(9);
        let model = LowRankFactors::new(gaussian(&mut r, 10, 4), gaussian(&mut r, 10, 4)).unwrap();
        let obs = random_obs(&mut r, 10, 10, 0.35);
        let (alpha, eta, lambda) = (0.9, 0.4, 0.8);
        let got = prox_step_bias(&model, &obs, alpha, eta, lambda, 10, 3).unwrap();
        let oracle = dense_shrink(&dense_gradient_step(&model, &obs, alpha, eta), eta * lambda);
        assert!(got.materialize(1000).unwrap().distance(&oracle) <= 1e-6);
    }

    #[test]
    fn prox_step_never_increases_convex_objective() {
        for seed in 0..20u64 {
            let mut r = rng(100 + seed);
            let mut model =
                LowRankFactors::new(gaussian(&mut r, 15, 3), gaussian(&mut r, 15, 3)).unwrap();
            let obs = random_obs(&mut r, 15, 15, 0.3);
            let alpha = 0.5 + 0.5 * r.random::<f64>();
            let lambda = 0.5;
            let mut prev = objective_bias(&model, &obs, alpha, lambda, Regularizer::Nuclear).unwrap();
            for step in 0..5 {
                model = prox_step_bias(&model, &obs, alpha, 0.4, lambda, 15, step).unwrap();
                let cur = objective_bias(&model, &obs, alpha, lambda, Regularizer::Nuclear).unwrap();
                assert!(cur <= prev + 1e-9 * prev.abs(), "seed {seed}: {prev} -> {cur}");
                prev = cur;
            }
        }
    }

    #[test]
    fn gradient_operator_cost_linear_in_observations() {
        let (m, n, k) = (20, 20, 1);
        let mut r = rng(11);
        let model = LowRankFactors::new(gaussian(&mut r, m, k), gaussian(&mut r, n, k)).unwrap();
        let all: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
        let mut costs = Vec::new();
        for s in [100usize, 200, 400] {
            let obs = ObservedOnes::new(m, n, all.iter().copied().step_by(all.len() / s).take(s).collect()).unwrap();
            assert_eq!(obs.len(), s);
            let op = gradient_operator_bias(&model, &obs, 0.9, 0.4).unwrap();
            let before = op.flops();
            let v = vec![1.0; n];
            op.apply(&v).unwrap();
            op.apply_transpose(&vec![1.0; m]).unwrap();
            costs.push((op.flops() - before) as f64);
        }
        for w in costs.windows(2) {
            let ratio = w[1] / w[0];
            assert!((ratio / 2.0 - 1.0).abs() <= 0.15, "ratio {ratio}");
        }
    }
}
