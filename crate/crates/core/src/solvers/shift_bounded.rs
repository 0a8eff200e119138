//! Shifted loss with every entry of `X = W Hᵀ` constrained to `[0, 1]`.
//!
//! Each coordinate of a factor row moves along a line in the corresponding
//! row of `X`; the feasible step is an interval computed from that row, so
//! coordinate descent can minimize exactly while staying feasible. `X` is
//! kept dense, which makes a sweep `O(m n k)`.

use rayon::prelude::*;

use crate::error::{PumcError, Result};
use crate::linalg::{axpy, dot, DenseMatrix};
use crate::losses::{objective_shift, Regularizer};
use crate::model::{check_rho, LowRankFactors, ObservedOnes, SolverReport};

use super::{init_factors, Progress, SolverConfig};

/// Largest entry of the starting product.
const INTERIOR_START: f64 = 0.25;

pub fn solve_shift_bounded(obs: &ObservedOnes, cfg: &SolverConfig) -> Result<(LowRankFactors, SolverReport)> {
    cfg.validate()?;
    let p = cfg.params;
    check_rho(p.rho)?;
    let (m, n, k) = (obs.rows(), obs.cols(), p.rank_k);
    if m.saturating_mul(n) > cfg.materialization_cap {
        return Err(PumcError::SizeLimit(format!(
            "bounded solver needs a dense {m}x{n} matrix, above the cap of {} entries; use solve_shift_relax instead",
            cfg.materialization_cap
        )));
    }
    let target = 1.0 / (1.0 - p.rho);
    let mut model = init_factors(m, n, k, cfg.init_scale, cfg.seed);
    // start well inside the box: coordinates that begin next to an active
    // bound tend to stay pinned there
    let largest = model.w.matmul_t(&model.h)?.values().iter().copied().fold(0.0, f64::max);
    if largest > INTERIOR_START {
        let s = (INTERIOR_START / largest).sqrt();
        model.w.scale(s);
        model.h.scale(s);
    }
    let objective = |f: &LowRankFactors| objective_shift(f, obs, p.rho, p.lambda, Regularizer::FactorRidge);
    let mut progress = Progress::new(objective(&model)?, cfg.tolerance)?;
    let transposed = obs.transpose();
    let per_half = |rows: usize, cols: usize| (12 * rows * cols * k) as u64;
    for _ in 0..cfg.max_sweeps {
        bounded_half_sweep(&mut model.w, &model.h, obs, target, p.lambda);
        bounded_half_sweep(&mut model.h, &model.w, &transposed, target, p.lambda);
        progress.add_flops(per_half(m, n) + per_half(n, m));
        if progress.record(objective(&model)?)? {
            break;
        }
    }
    Ok((model, progress.finish()))
}

/// Updates every row of `left` with `right` fixed, keeping `left rightᵀ`
/// inside `[0, 1]`. `obs` is indexed by rows of `left`.
///
/// Each row subproblem is a small convex QP in `k` variables with `2n`
/// inequality constraints; it is solved by a primal active-set method started
/// from the current (feasible) row, so the objective never increases.
fn bounded_half_sweep(left: &mut DenseMatrix, right: &DenseMatrix, obs: &ObservedOnes, target: f64, lambda: f64) {
    let k = left.cols();
    if k == 0 {
        return;
    }
    let mut hessian = right.gram();
    hessian.scale(2.0);
    for c in 0..k {
        hessian.set(c, c, hessian.get(c, c) + lambda);
    }
    left.values_mut().par_chunks_mut(k).enumerate().for_each(|(i, w)| {
        let mut q = vec![0.0; k];
        for &j in obs.row_cols(i) {
            axpy(2.0 * target, right.row(j), &mut q);
        }
        box_qp_row(&hessian, &q, right, w);
    });
}

fn quad_form(a: &DenseMatrix, v: &[f64]) -> f64 {
    (0..a.rows()).map(|r| v[r] * dot(a.row(r), v)).sum()
}

#[derive(Clone, Copy, PartialEq)]
enum Bound {
    Lower,
    Upper,
}

/// Minimizes `½ wᵀ P w - qᵀ w` subject to `0 ≤ H w ≤ 1`, starting from a
/// feasible `w`. Stops early (still feasible, never worse) if the working set
/// becomes degenerate or the iteration budget runs out.
fn box_qp_row(p: &DenseMatrix, q: &[f64], h: &DenseMatrix, w: &mut [f64]) {
    let k = w.len();
    let n = h.rows();
    // the row of X is recomputed from the factors, so rounding never accumulates across sweeps
    let mut x: Vec<f64> = (0..n).map(|j| dot(w, h.row(j))).collect();
    let mut working: Vec<(usize, Bound)> = Vec::new();
    for _ in 0..(4 * k + 20) {
        let grad: Vec<f64> = (0..k).map(|a| dot(p.row(a), w) - q[a]).collect();
        // equality-constrained step: [P Aᵀ; A 0] [d; y] = [-g; 0]
        let size = k + working.len();
        let mut kkt = nalgebra::DMatrix::<f64>::zeros(size, size);
        let mut rhs = nalgebra::DVector::<f64>::zeros(size);
        for a in 0..k {
            for b in 0..k {
                kkt[(a, b)] = p.get(a, b);
            }
            rhs[a] = -grad[a];
        }
        for (r, &(j, _)) in working.iter().enumerate() {
            for (a, &v) in h.row(j).iter().enumerate() {
                kkt[(k + r, a)] = v;
                kkt[(a, k + r)] = v;
            }
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { return };
        let step: Vec<f64> = sol.iter().take(k).copied().collect();
        let scale = 1.0 + dot(w, w).sqrt();
        if dot(&step, &step).sqrt() <= 1e-12 * scale {
            // stationary on the working set: check multiplier signs, λ = -y
            let worst = working
                .iter()
                .enumerate()
                .map(|(r, &(_, side))| {
                    let lam = -sol[k + r];
                    let violation = match side {
                        Bound::Lower => -lam,
                        Bound::Upper => lam,
                    };
                    (r, violation)
                })
                .filter(|&(_, v)| v > 1e-12)
                .max_by(|a, b| a.1.total_cmp(&b.1));
            match worst {
                Some((r, _)) => {
                    working.remove(r);
                    continue;
                }
                None => return,
            }
        }
        let x_step: Vec<f64> = (0..n).map(|j| dot(&step, h.row(j))).collect();
        let mut length = 1.0;
        let mut blocking = None;
        let step_norm = dot(&step, &step).sqrt();
        for j in 0..n {
            let d = x_step[j];
            // working constraints only move by rounding, unless the working
            // set is degenerate, in which case the ratio test still guards them
            if d.abs() <= 1e-12 * step_norm && working.iter().any(|&(wj, _)| wj == j) {
                continue;
            }
            let (room, side) = if d > 0.0 {
                ((1.0 - x[j]) / d, Bound::Upper)
            } else if d < 0.0 {
                (-x[j] / d, Bound::Lower)
            } else {
                continue;
            };
            let room = room.max(0.0);
            if room < length {
                length = room;
                blocking = Some((j, side));
            }
        }
        // a degenerate working set can yield a non-descent step; the change
        // of a quadratic along a line is exact, so test it directly
        let change = length * dot(&grad, &step) + 0.5 * length * length * quad_form(p, &step);
        if change > 0.0 {
            return;
        }
        axpy(length, &step, w);
        axpy(length, &x_step, &mut x);
        match blocking {
            Some(b) if working.len() < k && !working.iter().any(|&(wj, _)| wj == b.0) => working.push(b),
            Some(_) => return,
            None => {}
        }
    }
}
