use crate::error::Result;
use crate::linalg::{accumulate_outer, axpy, solve_spd, DenseMatrix};
use crate::losses::WeightedData;
use crate::model::{check_alpha, LowRankFactors, ObservedOnes, SolverReport};

use super::cd_engine::{CdState, RowProblem, RowSolver};
use super::{init_factors, Progress, SolverConfig};

/// Exact ridge solve of one row:
/// `(2 w_off G + 2 (w_on - w_off) Σ h hᵀ + λ I) w = 2 w_on t Σ h`.
pub(crate) struct WeightedRowSolve {
    pub data: WeightedData,
    pub lambda: f64,
}

impl WeightedRowSolve {
    pub(crate) fn normal_matrix(&self, problem: &RowProblem<'_>) -> (DenseMatrix, Vec<f64>) {
        let k = problem.gram.rows();
        let mut n = problem.gram.clone();
        n.scale(2.0 * self.data.weight_off);
        for a in 0..k {
            n.set(a, a, n.get(a, a) + self.lambda);
        }
        let mut rhs = vec![0.0; k];
        let on_coef = 2.0 * (self.data.weight_on - self.data.weight_off);
        let rhs_coef = 2.0 * self.data.weight_on * self.data.target_on;
        for h in &problem.partners {
            accumulate_outer(&mut n, h, on_coef);
            axpy(rhs_coef, h, &mut rhs);
        }
        (n, rhs)
    }
}

impl RowSolver for WeightedRowSolve {
    fn solve(&self, problem: &RowProblem<'_>) -> (Vec<f64>, u64) {
        let k = problem.gram.rows() as u64;
        let (n, rhs) = self.normal_matrix(problem);
        let flops = k * k + (2 * k * k + 2 * k) * problem.partners.len() as u64 + k * k * k / 3 + 2 * k * k;
        // normal matrices are PSD with the right-hand side in their range, so
        // the fallback pseudo-inverse still returns an exact minimizer
        let row = solve_spd(&n, &rhs).unwrap_or_else(|_| problem.old.to_vec());
        (row, flops)
    }
}

/// Alternating exact row minimization of
/// `w_on Σ_{Ω₁}(x - t)² + w_off Σ_{not Ω₁} x² + (λ/2)(‖W‖² + ‖H‖²)`.
pub fn solve_weighted_cd(
    obs: &ObservedOnes,
    data: WeightedData,
    cfg: &SolverConfig,
) -> Result<(LowRankFactors, SolverReport)> {
    cfg.validate()?;
    let p = cfg.params;
    let init = init_factors(obs.rows(), obs.cols(), p.rank_k, cfg.init_scale, cfg.seed);
    let mut state = CdState::new(init, obs);
    let (obj, f) = state.objective(data, p.lambda);
    let mut progress = Progress::new(obj, cfg.tolerance)?;
    progress.add_flops(f);
    let solver = WeightedRowSolve {
        data,
        lambda: p.lambda,
    };
    for _ in 0..cfg.max_sweeps {
        progress.add_flops(state.sweep(&solver));
        let (obj, f) = state.objective(data, p.lambda);
        progress.add_flops(f);
        if progress.record(obj)? {
            break;
        }
    }
    Ok((state.into_model(), progress.finish()))
}

/// α-weighted (biased) estimator with factor ridge.
pub fn solve_bias_cd(obs: &ObservedOnes, cfg: &SolverConfig) -> Result<(LowRankFactors, SolverReport)> {
    check_alpha(cfg.params.alpha)?;
    solve_weighted_cd(obs, WeightedData::bias(cfg.params.alpha), cfg)
}

/// Unweighted, unshifted least squares on the observed 0/1 matrix. This is
/// the naive baseline that treats every unlabeled entry as a true zero.
pub fn solve_plain_cd(obs: &ObservedOnes, cfg: &SolverConfig) -> Result<(LowRankFactors, SolverReport)> {
    solve_weighted_cd(obs, WeightedData::plain(), cfg)
}
