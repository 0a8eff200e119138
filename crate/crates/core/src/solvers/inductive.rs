//! Inductive solvers: `X = F_u D F_vᵀ` with known features.
//!
//! Features are orthonormalized first (`F T = Q` with `QᵀQ = I`), which
//! makes the Frobenius and nuclear norms of `X` equal to those of the core
//! `D'` in the new basis. Proximal gradient then runs on the small dense
//! core, and the result is mapped back as `D = T_u D' T_vᵀ`.

use crate::error::{PumcError, Result};
use crate::linalg::{dense_svd, dot, DenseMatrix};
use crate::model::{check_alpha, check_rho, InductiveModel, MatrixModel, ObservedOnes, SolverReport};

use super::{Progress, SolverConfig};

/// Row and column features without a core.
#[derive(Debug, Clone, PartialEq)]
pub struct InductiveFeatures {
    pub fu: DenseMatrix,
    pub fv: DenseMatrix,
}

impl InductiveFeatures {
    pub fn new(fu: DenseMatrix, fv: DenseMatrix) -> Self {
        Self { fu, fv }
    }

    /// Identity features, which turn inductive completion into plain completion.
    pub fn identity(m: usize, n: usize) -> Self {
        Self::new(DenseMatrix::identity(m), DenseMatrix::identity(n))
    }
}

/// `F T = Q`: orthonormal basis of the column space of `F`.
struct Basis {
    q: DenseMatrix,
    t: DenseMatrix,
}

fn orthonormalize(f: &DenseMatrix, name: &str) -> Result<Basis> {
    let svd = dense_svd(f)?;
    let top = svd.singular_values.first().copied().unwrap_or(0.0);
    let cutoff = top * f.rows().max(f.cols()) as f64 * f64::EPSILON;
    let r = svd.singular_values.iter().take_while(|&&s| s > cutoff).count();
    if r == 0 {
        return Err(PumcError::Data(format!("feature matrix {name} is zero")));
    }
    let q = svd.u.leading_columns(r);
    let t = DenseMatrix::from_fn(f.cols(), r, |a, b| svd.v.get(a, b) / svd.singular_values[b]);
    Ok(Basis { q, t })
}

/// Shared setup: validated features, bases and the per-entry basis rows.
struct Problem<'a> {
    obs: &'a ObservedOnes,
    bu: Basis,
    bv: Basis,
    /// `Σ_{Ω₁} q_i p_jᵀ`, the observed matrix in the reduced basis.
    a_reduced: DenseMatrix,
}

impl<'a> Problem<'a> {
    fn new(obs: &'a ObservedOnes, features: &InductiveFeatures, cfg: &SolverConfig) -> Result<Self> {
        let (fu, fv) = (&features.fu, &features.fv);
        if fu.rows() != obs.rows() || fv.rows() != obs.cols() {
            return Err(PumcError::DimensionMismatch(format!(
                "features have {} and {} rows but observations are {}x{}",
                fu.rows(),
                fv.rows(),
                obs.rows(),
                obs.cols()
            )));
        }
        let d = fu.cols().max(fv.cols());
        if d > cfg.feature_dim_cap {
            return Err(PumcError::SizeLimit(format!(
                "feature dimension {d} exceeds the cap of {}",
                cfg.feature_dim_cap
            )));
        }
        let bu = orthonormalize(fu, "F_u")?;
        let bv = orthonormalize(fv, "F_v")?;
        let mut a_reduced = DenseMatrix::zeros(bu.q.cols(), bv.q.cols());
        accumulate_entries(&mut a_reduced, obs, &bu.q, &bv.q, |_| 1.0);
        Ok(Self { obs, bu, bv, a_reduced })
    }

    fn predictions(&self, core: &DenseMatrix) -> Vec<f64> {
        self.obs
            .entries()
            .iter()
            .map(|&(i, j)| bilinear(self.bu.q.row(i), core, self.bv.q.row(j)))
            .collect()
    }

    fn finish(&self, features: &InductiveFeatures, core: &DenseMatrix) -> Result<InductiveModel> {
        let d = self.bu.t.matmul(core)?.matmul_t(&self.bv.t)?;
        InductiveModel::new(features.fu.clone(), features.fv.clone(), d)
    }

    /// Flops of one pass over `Ω₁` in the reduced basis.
    fn entry_flops(&self) -> u64 {
        let (ru, rv) = (self.bu.q.cols() as u64, self.bv.q.cols() as u64);
        self.obs.len() as u64 * 4 * ru * rv
    }
}

fn bilinear(u: &[f64], core: &DenseMatrix, v: &[f64]) -> f64 {
    u.iter()
        .enumerate()
        .filter(|(_, &ua)| ua != 0.0)
        .map(|(a, &ua)| ua * dot(core.row(a), v))
        .sum()
}

/// `out += Σ_e weight(e) q_{i_e} p_{j_e}ᵀ`.
fn accumulate_entries(
    out: &mut DenseMatrix,
    obs: &ObservedOnes,
    qu: &DenseMatrix,
    qv: &DenseMatrix,
    weight: impl Fn(usize) -> f64,
) {
    for (e, &(i, j)) in obs.entries().iter().enumerate() {
        let w = weight(e);
        if w == 0.0 {
            continue;
        }
        let p = qv.row(j);
        for (a, &qa) in qu.row(i).iter().enumerate() {
            if qa != 0.0 {
                crate::linalg::axpy(w * qa, p, out.row_mut(a));
            }
        }
    }
}

/// Singular value soft-thresholding of a small dense matrix. Returns the
/// shrunk matrix and its nuclear norm.
fn shrink(m: &DenseMatrix, threshold: f64) -> Result<(DenseMatrix, f64)> {
    let svd = dense_svd(m)?;
    let mut out = DenseMatrix::zeros(m.rows(), m.cols());
    let mut nuclear = 0.0;
    for (c, &s) in svd.singular_values.iter().enumerate() {
        let shrunk = s - threshold;
        if shrunk <= 0.0 {
            break;
        }
        nuclear += shrunk;
        for a in 0..m.rows() {
            let ua = svd.u.get(a, c) * shrunk;
            if ua != 0.0 {
                for b in 0..m.cols() {
                    out.values_mut()[a * m.cols() + b] += ua * svd.v.get(b, c);
                }
            }
        }
    }
    Ok((out, nuclear))
}

/// Inductive α-weighted estimator with nuclear penalty on the core.
pub fn solve_bias_imc(
    obs: &ObservedOnes,
    features: &InductiveFeatures,
    cfg: &SolverConfig,
) -> Result<(InductiveModel, SolverReport)> {
    cfg.validate()?;
    let p = cfg.params;
    check_alpha(p.alpha)?;
    let prob = Problem::new(obs, features, cfg)?;
    let (ru, rv) = (prob.bu.q.cols(), prob.bv.q.cols());
    let s_bar = obs.len() as f64;
    let objective = |core: &DenseMatrix, preds: &[f64], nuclear: f64| {
        let sum_x: f64 = preds.iter().sum();
        let sum_sq: f64 = preds.iter().map(|x| (x - 1.0) * (x - 1.0)).sum();
        (1.0 - p.alpha) * (core.frobenius_norm_sq() - 2.0 * sum_x + s_bar)
            + (2.0 * p.alpha - 1.0) * sum_sq
            + p.lambda * nuclear
    };
    let mut core = DenseMatrix::zeros(ru, rv);
    let mut preds = prob.predictions(&core);
    let mut progress = Progress::new(objective(&core, &preds, 0.0), cfg.tolerance)?;
    let eta = cfg.prox_step;
    let svd_flops = (ru * rv * ru.min(rv) * 12) as u64;
    for _ in 0..cfg.max_sweeps {
        // ∇ = 2(1-α)(D' - Â) + 2(2α-1) Σ_{Ω₁} (x - 1) q pᵀ
        let mut grad = core.clone();
        grad.values_mut()
            .iter_mut()
            .zip(prob.a_reduced.values())
            .for_each(|(g, a)| *g = 2.0 * (1.0 - p.alpha) * (*g - a));
        let coef = 2.0 * (2.0 * p.alpha - 1.0);
        accumulate_entries(&mut grad, obs, &prob.bu.q, &prob.bv.q, |e| coef * (preds[e] - 1.0));
        let mut step = core.clone();
        step.values_mut().iter_mut().zip(grad.values()).for_each(|(s, g)| *s -= eta * g);
        let (next, nuclear) = shrink(&step, eta * p.lambda)?;
        core = next;
        preds = prob.predictions(&core);
        progress.add_flops(2 * prob.entry_flops() + svd_flops);
        if progress.record(objective(&core, &preds, nuclear))? {
            break;
        }
    }
    Ok((prob.finish(features, &core)?, progress.finish()))
}

/// Inductive shifted estimator. The box `0 ≤ F_u D F_vᵀ ≤ 1` is enforced by
/// the quadratic penalty `μ Σ [max(0, x-1)² + max(0, -x)²]`, with `μ`
/// multiplied by `penalty.growth` after each sweep up to `penalty.max`. The
/// step shrinks as `prox_step / (1 + μ)` to stay below `1/L`. Needs the dense
/// prediction matrix, so `m n` is bounded by `materialization_cap`.
pub fn solve_shift_imc(
    obs: &ObservedOnes,
    features: &InductiveFeatures,
    cfg: &SolverConfig,
) -> Result<(InductiveModel, SolverReport)> {
    cfg.validate()?;
    let p = cfg.params;
    check_rho(p.rho)?;
    let (m, n) = (obs.rows(), obs.cols());
    if m.saturating_mul(n) > cfg.materialization_cap {
        return Err(PumcError::SizeLimit(format!(
            "the box penalty needs a dense {m}x{n} prediction, above the cap of {} entries",
            cfg.materialization_cap
        )));
    }
    let prob = Problem::new(obs, features, cfg)?;
    let (qu, qv) = (&prob.bu.q, &prob.bv.q);
    let (ru, rv) = (qu.cols(), qv.cols());
    let target = 1.0 / (1.0 - p.rho);
    let s_bar = obs.len() as f64;

    // shifted data term in the reduced basis: ‖D'‖² - 2c Σx + c² s̄
    let objective = |core: &DenseMatrix, x: &DenseMatrix, mu: f64, nuclear: f64| {
        let sum_x: f64 = obs.entries().iter().map(|&(i, j)| x.get(i, j)).sum();
        let penalty: f64 = x.values().iter().map(|&v| (v - 1.0).max(0.0).powi(2) + (-v).max(0.0).powi(2)).sum();
        core.frobenius_norm_sq() - 2.0 * target * sum_x + target * target * s_bar + mu * penalty + p.lambda * nuclear
    };
    let predict = |core: &DenseMatrix| -> Result<DenseMatrix> { qu.matmul(core)?.matmul_t(qv) };

    let mut core = DenseMatrix::zeros(ru, rv);
    let mut x = predict(&core)?;
    let mut mu = cfg.penalty.start;
    let mut progress = Progress::new(objective(&core, &x, mu, 0.0), cfg.tolerance)?;
    let dense_flops = (6 * m * n * ru.min(rv) + 2 * m * ru * rv + 2 * n * ru * rv) as u64;
    let svd_flops = (ru * rv * ru.min(rv) * 12) as u64;
    // Nesterov extrapolation: large μ makes the penalty stiff, and plain
    // steps of size 1/L then crawl along the directions the box leaves free
    let mut anchor = core.clone();
    let mut momentum = 1.0_f64;
    for _ in 0..cfg.max_sweeps {
        let eta = cfg.prox_step / (1.0 + mu);
        let xa = predict(&anchor)?;
        // violation matrix V, pulled back as Q_uᵀ V Q_v
        let viol = DenseMatrix::from_fn(m, n, |i, j| {
            let v = xa.get(i, j);
            (v - 1.0).max(0.0) - (-v).max(0.0)
        });
        let pulled = qu.t_matmul(&viol)?.matmul(qv)?;
        let mut step = anchor.clone();
        for ((s, a), v) in step.values_mut().iter_mut().zip(prob.a_reduced.values()).zip(pulled.values()) {
            let grad = 2.0 * *s - 2.0 * target * a + 2.0 * mu * v;
            *s -= eta * grad;
        }
        let (next, nuclear) = shrink(&step, eta * p.lambda)?;
        // restart when the step points against the momentum direction
        let against: f64 = anchor
            .values()
            .iter()
            .zip(next.values())
            .zip(core.values())
            .map(|((y, n), c)| (y - n) * (n - c))
            .sum();
        let next_momentum = if against > 0.0 {
            1.0
        } else {
            0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt())
        };
        let beta = if against > 0.0 { 0.0 } else { (momentum - 1.0) / next_momentum };
        anchor = next.clone();
        anchor
            .values_mut()
            .iter_mut()
            .zip(core.values())
            .for_each(|(y, c)| *y += beta * (*y - c));
        momentum = next_momentum;
        core = next;
        x = predict(&core)?;
        progress.add_flops(dense_flops + svd_flops);
        let capped = mu >= cfg.penalty.max;
        let converged = progress.record(objective(&core, &x, mu, nuclear))?;
        if converged && capped {
            break;
        }
        mu = (mu * cfg.penalty.growth).min(cfg.penalty.max);
    }
    let mut report = progress.finish();
    report.converged &= mu >= cfg.penalty.max;
    Ok((prob.finish(features, &core)?, report))
}

/// Binary recovery `Ŷ_ij = 1` iff the prediction is strictly above `q`.
pub fn threshold_predictions(model: &dyn MatrixModel, q: f64, cap: usize) -> Result<DenseMatrix> {
    let mut x = model.materialize(cap)?;
    x.values_mut().iter_mut().for_each(|v| *v = if *v > q { 1.0 } else { 0.0 });
    Ok(x)
}
