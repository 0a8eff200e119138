use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::axpy;
use crate::losses::WeightedData;
use crate::model::{check_rho, LowRankFactors, ObservedOnes, SolverReport};

use super::cd_engine::{CdState, RowProblem, RowSolver};
use super::{init_factors, Progress, SolverConfig};

/// Target placed on revealed ones by [`solve_shift_relax`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// Fit the observed 0/1 matrix itself.
    #[default]
    RawA,
    /// Fit `1/(1-ρ)` on revealed ones.
    Shifted,
}

/// Cyclic coordinate minimization over one row, each coordinate projected
/// onto `[0, upper]`. Uses the other factor's Gram matrix so each coordinate
/// costs `O(|Ω_i| + k)`.
struct BoxRowSolve {
    target: f64,
    lambda: f64,
    upper: f64,
}

impl RowSolver for BoxRowSolve {
    fn solve(&self, problem: &RowProblem<'_>) -> (Vec<f64>, u64) {
        let g = problem.gram;
        let k = g.rows();
        // b = t Σ_{Ω_i} h_j
        let mut b = vec![0.0; k];
        for h in &problem.partners {
            axpy(self.target, h, &mut b);
        }
        let mut w = problem.old.to_vec();
        for c in 0..k {
            let cross: f64 = (0..k).filter(|&s| s != c).map(|s| w[s] * g.get(s, c)).sum();
            let num = b[c] - cross;
            let den = g.get(c, c) + 0.5 * self.lambda;
            w[c] = if den > 0.0 {
                (num / den).clamp(0.0, self.upper)
            } else if num > 0.0 {
                self.upper
            } else if num < 0.0 {
                0.0
            } else {
                w[c]
            };
        }
        let flops = (2 * k * problem.partners.len() + 2 * k * k + 3 * k) as u64;
        (w, flops)
    }
}

/// Least squares on all entries with factors boxed in `[0, √(1/k)]`, which
/// keeps every entry of `W Hᵀ` in `[0, 1]` without materializing it.
pub fn solve_shift_relax(
    obs: &ObservedOnes,
    cfg: &SolverConfig,
    target_mode: TargetMode,
) -> Result<(LowRankFactors, SolverReport)> {
    cfg.validate()?;
    let p = cfg.params;
    let target = match target_mode {
        TargetMode::RawA => 1.0,
        TargetMode::Shifted => {
            check_rho(p.rho)?;
            1.0 / (1.0 - p.rho)
        }
    };
    let data = WeightedData {
        weight_on: 1.0,
        weight_off: 1.0,
        target_on: target,
    };
    let k = p.rank_k;
    let upper = (1.0 / k as f64).sqrt();
    let mut init = init_factors(obs.rows(), obs.cols(), k, cfg.init_scale, cfg.seed);
    for v in init.w.values_mut().iter_mut().chain(init.h.values_mut()) {
        *v = v.min(upper);
    }
    let mut state = CdState::new(init, obs);
    let (obj, f) = state.objective(data, p.lambda);
    let mut progress = Progress::new(obj, cfg.tolerance)?;
    progress.add_flops(f);
    let solver = BoxRowSolve {
        target,
        lambda: p.lambda,
        upper,
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseMatrix;
    use crate::losses::WeightedData;
    use crate::model::{MatrixModel, PuHyperParams};

    fn cfg(rho: f64, lambda: f64, k: usize) -> SolverConfig {
        SolverConfig::new(PuHyperParams::new(rho, 0.9, lambda, k).unwrap())
    }

    fn random_obs(m: usize, n: usize, count: usize, seed: u64) -> ObservedOnes {
        let mut s = seed.wrapping_mul(0x9E3779B97F4A7C15) | 1;
        let pairs = (0..count)
            .map(|_| {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                ((s % m as u64) as usize, ((s >> 32) % n as u64) as usize)
            })
            .collect();
        ObservedOnes::new(m, n, pairs).unwrap()
    }

    #[test]
    fn factors_at_upper_bound_predict_one() {
        let k = 7;
        let u = (1.0 / k as f64).sqrt();
        let f = LowRankFactors::new(DenseMatrix::from_fn(3, k, |_, _| u), DenseMatrix::from_fn(4, k, |_, _| u)).unwrap();
        let x = f.materialize(100).unwrap();
        assert!(x.values().iter().all(|v| (v - 1.0).abs() <= 1e-15));
    }

    #[test]
    fn monotone_bounded_and_consistent() {
        for seed in 0..20 {
            let obs = random_obs(18, 14, 60, seed + 7);
            let mode = if seed % 2 == 0 { TargetMode::RawA } else { TargetMode::Shifted };
            let c = cfg(0.8, 0.05, 4).with_sweeps(40, 1e-13).with_seed(seed);
            let (model, report) = solve_shift_relax(&obs, &c, mode).unwrap();
            assert!(report.max_relative_increase() <= 1e-10, "seed {seed}");
            let u = 0.5 + 1e-15;
            assert!(model.w.values().iter().chain(model.h.values()).all(|&v| (0.0..=u).contains(&v)));
            let x = model.materialize(1000).unwrap();
            assert!(x.values().iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
            let t = if mode == TargetMode::RawA { 1.0 } else { 5.0 };
            let data = WeightedData { weight_on: 1.0, weight_off: 1.0, target_on: t };
            let direct = data.evaluate(&model, &obs).unwrap() + 0.025 * model.factor_frobenius_sq();
            assert!((direct - report.final_objective().unwrap()).abs() <= 1e-9 * direct.max(1.0));
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let obs = random_obs(30, 30, 120, 2);
        let c = cfg(0.5, 0.01, 5).with_sweeps(8, 1e-12).with_seed(11);
        let a = solve_shift_relax(&obs, &c, TargetMode::Shifted).unwrap();
        let b = solve_shift_relax(&obs, &c, TargetMode::Shifted).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1.objective_per_sweep, b.1.objective_per_sweep);
    }
}
