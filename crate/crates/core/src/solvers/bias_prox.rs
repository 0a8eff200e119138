use crate::error::Result;
use crate::losses::{objective_bias, Regularizer};
use crate::model::{LowRankFactors, ObservedOnes, SolverReport};
use crate::spectral::prox_step_bias_with;

use super::{Progress, SolverConfig};

/// Proximal gradient on `f_b(X) + λ‖X‖_*`, starting from `X = 0`. The rank of
/// each iterate is capped at `params.rank_k`.
pub fn solve_bias_prox(obs: &ObservedOnes, cfg: &SolverConfig) -> Result<(LowRankFactors, SolverReport)> {
    cfg.validate()?;
    let p = cfg.params;
    let mut model = LowRankFactors::zeros(obs.rows(), obs.cols(), 0);
    let objective = |m: &LowRankFactors| objective_bias(m, obs, p.alpha, p.lambda, Regularizer::Nuclear);
    let mut progress = Progress::new(objective(&model)?, cfg.tolerance)?;
    for sweep in 0..cfg.max_sweeps {
        let (next, flops) = prox_step_bias_with(
            &model,
            obs,
            p.alpha,
            cfg.prox_step,
            p.lambda,
            p.rank_k,
            cfg.seed.wrapping_add(sweep as u64),
            cfg.svd,
        )?;
        progress.add_flops(flops);
        model = next;
        if progress.record(objective(&model)?)? {
            break;
        }
    }
    Ok((model, progress.finish()))
}
