//! PU solvers.
//!
//! * [`solve_bias_cd`]: α-weighted loss with factor ridge, alternating exact
//!   row solves.
//! * [`solve_bias_prox`]: α-weighted loss with nuclear penalty, proximal
//!   gradient on the matrix-free gradient operator.
//! * [`solve_shift_bounded`]: shifted loss with every entry of `W Hᵀ` kept in
//!   `[0, 1]`; dense, desk-scale only.
//! * [`solve_shift_relax`]: box-constrained factors, scalable.
//! * [`solve_bias_imc`] / [`solve_shift_imc`]: inductive variants that learn
//!   a small core between feature matrices.

use std::time::Instant;

use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{PumcError, Result};
use crate::linalg::DenseMatrix;
use crate::model::{LowRankFactors, PuHyperParams, SolverReport, DEFAULT_MATERIALIZATION_CAP};
use crate::sampling::seeded_rng;
use crate::spectral::{SvdSettings, DEFAULT_PROX_STEP};

mod bias_cd;
mod bias_prox;
mod cd_engine;
mod inductive;
mod shift_bounded;
mod shift_relax;

pub use bias_cd::{solve_bias_cd, solve_plain_cd, solve_weighted_cd};
pub use bias_prox::solve_bias_prox;
pub use inductive::{solve_bias_imc, solve_shift_imc, threshold_predictions, InductiveFeatures};
pub use shift_bounded::solve_shift_bounded;
pub use shift_relax::{solve_shift_relax, TargetMode};

const STREAM_INIT: u64 = 7;

/// Growth schedule of the box penalty used by the inductive shifted solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySchedule {
    pub start: f64,
    pub growth: f64,
    pub max: f64,
}

impl Default for PenaltySchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            growth: 2.0,
            max: 1e4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub params: PuHyperParams,
    pub max_sweeps: usize,
    /// Stop once the relative objective change over one sweep drops below this.
    pub tolerance: f64,
    pub seed: u64,
    /// Initial factor entries are uniform in `[0, init_scale / √k]`.
    pub init_scale: f64,
    pub materialization_cap: usize,
    /// Proximal step size; must not exceed `1/L` of the smooth part.
    pub prox_step: f64,
    pub svd: SvdSettings,
    /// Largest feature dimension the inductive solvers accept.
    pub feature_dim_cap: usize,
    pub penalty: PenaltySchedule,
}

impl SolverConfig {
    pub fn new(params: PuHyperParams) -> Self {
        Self {
            params,
            max_sweeps: 100,
            tolerance: 1e-6,
            seed: 0,
            init_scale: 1.0,
            materialization_cap: DEFAULT_MATERIALIZATION_CAP,
            prox_step: DEFAULT_PROX_STEP,
            svd: SvdSettings::default(),
            feature_dim_cap: 2000,
            penalty: PenaltySchedule::default(),
        }
    }

    pub fn with_sweeps(mut self, max_sweeps: usize, tolerance: f64) -> Self {
        self.max_sweeps = max_sweeps;
        self.tolerance = tolerance;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.max_sweeps == 0 {
            return Err(PumcError::InvalidParameter("max_sweeps must be at least 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(PumcError::InvalidParameter(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(PumcError::InvalidParameter(format!(
                "init_scale must be positive, got {}",
                self.init_scale
            )));
        }
        if !(self.prox_step > 0.0 && self.prox_step.is_finite()) {
            return Err(PumcError::InvalidParameter(format!(
                "prox_step must be positive, got {}",
                self.prox_step
            )));
        }
        let p = self.penalty;
        if !(p.start > 0.0 && p.growth >= 1.0 && p.max >= p.start) {
            return Err(PumcError::InvalidParameter(format!(
                "penalty schedule needs start > 0, growth >= 1, max >= start; got {p:?}"
            )));
        }
        Ok(())
    }
}

/// Random nonnegative starting factors, entries uniform in `[0, scale/√k]`.
pub fn init_factors(m: usize, n: usize, k: usize, scale: f64, seed: u64) -> LowRankFactors {
    let upper = scale / (k.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(0.0, upper).expect("finite non-negative bound");
    let mut rng = seeded_rng(seed, STREAM_INIT);
    let w = DenseMatrix::from_fn(m, k, |_, _| dist.sample(&mut rng));
    let h = DenseMatrix::from_fn(n, k, |_, _| dist.sample(&mut rng));
    LowRankFactors { w, h }
}

pub(crate) fn relative_change(prev: f64, cur: f64) -> f64 {
    let diff = (prev - cur).abs();
    if diff == 0.0 {
        0.0
    } else {
        diff / prev.abs().max(cur.abs()).max(f64::MIN_POSITIVE)
    }
}

/// Collects the objective trace and decides when to stop.
pub(crate) struct Progress {
    report: SolverReport,
    start: Instant,
    tolerance: f64,
}

impl Progress {
    pub(crate) fn new(initial_objective: f64, tolerance: f64) -> Result<Self> {
        check_objective(initial_objective, 0)?;
        Ok(Self {
            report: SolverReport {
                objective_per_sweep: vec![initial_objective],
                ..SolverReport::default()
            },
            start: Instant::now(),
            tolerance,
        })
    }

    pub(crate) fn add_flops(&mut self, flops: u64) {
        self.report.flop_counter += flops;
    }

    /// Records one sweep; returns true when the run has converged.
    pub(crate) fn record(&mut self, objective: f64) -> Result<bool> {
        self.report.sweeps_run += 1;
        check_objective(objective, self.report.sweeps_run)?;
        let prev = *self.report.objective_per_sweep.last().expect("initial value present");
        self.report.objective_per_sweep.push(objective);
        self.report.converged = relative_change(prev, objective) < self.tolerance;
        Ok(self.report.converged)
    }

    pub(crate) fn finish(mut self) -> SolverReport {
        self.report.wall_clock = self.start.elapsed();
        self.report
    }
}

fn check_objective(value: f64, sweep: usize) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(PumcError::Numeric(format!("objective diverged to {value} at sweep {sweep}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = init_factors(6, 5, 4, 1.0, 3);
        let b = init_factors(6, 5, 4, 1.0, 3);
        assert_eq!(a, b);
        assert!(a.w.values().iter().chain(b.h.values()).all(|&v| (0.0..=0.5).contains(&v)));
        assert_ne!(a, init_factors(6, 5, 4, 1.0, 4));
    }

    #[test]
    fn config_validation() {
        let p = PuHyperParams::new(0.5, 0.8, 0.1, 2).unwrap();
        assert!(SolverConfig::new(p).validate().is_ok());
        assert!(SolverConfig::new(p).with_sweeps(0, 1e-6).validate().is_err());
        assert!(SolverConfig::new(p).with_sweeps(5, 0.0).validate().is_err());
    }

    #[test]
    fn progress_flags_divergence() {
        let mut p = Progress::new(1.0, 1e-6).unwrap();
        assert!(!p.record(0.5).unwrap());
        assert!(p.record(0.5).unwrap());
        assert!(matches!(p.record(f64::NAN), Err(PumcError::Numeric(_))));
    }
}
