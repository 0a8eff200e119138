//! Experiment harness: configuration, orchestration and result emission.
//!
//! A run is `ingest or generate -> (optional ρ selection) -> solve -> score
//! -> write`. Everything random is derived from the configured seed, and the
//! manifest written next to the results holds the full configuration plus
//! every seed consumed, so replaying it reproduces `metrics.csv` byte for
//! byte (unless timing output was requested).

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PumcError, Result};
use crate::eval::{
    baseline_common_neighbors, baseline_katz, baseline_svd_katz, clustering_sign_error, fpr_fnr, mse, rank_model,
    recovery_error, FprFnrCurve, RankedPredictions, Universe, DEFAULT_KATZ_BETA, DEFAULT_KATZ_MAX_LEN,
};
use crate::io::{
    atomic_write, read_binary_cache, read_edge_list, read_feature_matrix, read_labels, write_curves, write_metrics,
    EdgeListOptions, MetricsRow,
};
use crate::linalg::DenseMatrix;
use crate::losses::alpha_star;
use crate::model::{
    InductiveModel, LowRankFactors, MatrixModel, ObservedOnes, PuHyperParams, SolverReport,
    DEFAULT_MATERIALIZATION_CAP,
};
use crate::sampling::{generate_instance, holdout_split, rho_grid, QPolicy, Setting, SyntheticSpec};
use crate::solvers::{
    solve_bias_cd, solve_bias_imc, solve_bias_prox, solve_plain_cd, solve_shift_bounded, solve_shift_imc,
    solve_shift_relax, InductiveFeatures, SolverConfig, TargetMode,
};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CURVE_FILE: &str = "curve.csv";
pub const MANIFEST_FILE: &str = "report.json";
pub const MODEL_FILE: &str = "model.json";

/// Offsets added to the run seed for the auxiliary random streams.
const HOLDOUT_SEED_OFFSET: u64 = 0x5EED_0001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    SynthNondet,
    SynthDet,
    LinkPredict,
    Cluster,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::SynthNondet => "synth_nondet",
            Task::SynthDet => "synth_det",
            Task::LinkPredict => "link_predict",
            Task::Cluster => "cluster",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    BiasCd,
    BiasProx,
    ShiftBounded,
    ShiftRelax,
    BiasImc,
    ShiftImc,
    /// Unweighted least squares on the observed 0/1 matrix; the baseline
    /// without shifting or biasing.
    PlainCd,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::BiasCd => "bias_cd",
            SolverKind::BiasProx => "bias_prox",
            SolverKind::ShiftBounded => "shift_bounded",
            SolverKind::ShiftRelax => "shift_relax",
            SolverKind::BiasImc => "bias_imc",
            SolverKind::ShiftImc => "shift_imc",
            SolverKind::PlainCd => "plain_cd",
        }
    }

    pub fn is_inductive(self) -> bool {
        matches!(self, SolverKind::BiasImc | SolverKind::ShiftImc)
    }

    fn is_shift(self) -> bool {
        matches!(self, SolverKind::ShiftBounded | SolverKind::ShiftRelax | SolverKind::ShiftImc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKeyword {
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoKeyword {
    Auto,
}

/// A fixed noise rate, or `"grid"` for holdout selection over the
/// candidate grid built from the observation density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RhoChoice {
    Value(f64),
    Grid(GridKeyword),
}

/// A fixed bias weight, or `"auto"` for `α = (1 + ρ)/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaChoice {
    Value(f64),
    Auto(AutoKeyword),
}

impl Default for AlphaChoice {
    fn default() -> Self {
        AlphaChoice::Auto(AutoKeyword::Auto)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaScaling {
    /// Use `lambda` as given.
    #[default]
    Constant,
    /// Multiply `lambda` by `√max(m, n)`, the growth rate of the spectral
    /// norm of the sampling noise.
    SqrtN,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParamsConfig {
    /// Model noise rate. Unset means the generating rate for synthetic tasks
    /// and grid selection otherwise.
    pub rho: Option<RhoChoice>,
    pub alpha: AlphaChoice,
    pub lambda: f64,
    pub lambda_scaling: LambdaScaling,
    pub rank: usize,
    pub target_mode: TargetMode,
}

impl Default for ParamsConfig {
    fn default() -> Self {
        Self {
            rho: None,
            alpha: AlphaChoice::default(),
            lambda: 1.0,
            lambda_scaling: LambdaScaling::Constant,
            rank: 10,
            target_mode: TargetMode::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub max_sweeps: usize,
    pub tolerance: f64,
    pub init_scale: f64,
    pub prox_step: f64,
    pub materialization_cap: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_sweeps: 100,
            tolerance: 1e-6,
            init_scale: 1.0,
            prox_step: 0.4,
            materialization_cap: DEFAULT_MATERIALIZATION_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub sizes: Vec<usize>,
    /// Rank of the ground truth.
    pub k: usize,
    /// Generating noise rate.
    pub rho: f64,
    /// Threshold for the deterministic setting; unset means balanced.
    pub q: Option<f64>,
    /// Independent instances per size, seeded `seed, seed + 1, ...`.
    pub replicates: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sizes: vec![256],
            k: 10,
            rho: 0.9,
            q: None,
            replicates: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            train: None,
            test: None,
            features: None,
            labels: None,
            pairs: None,
            out: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Ranking length for link prediction; unset means the number of test
    /// edges.
    pub top: Option<usize>,
    /// Also score the reference methods (plain least squares, or the
    /// graph heuristics for link prediction, or the unweighted inductive fit
    /// for clustering).
    pub baselines: bool,
    pub katz_beta: f64,
    pub katz_max_len: usize,
    /// Rank of the SVD-Katz approximation; unset means `params.rank`.
    pub svd_katz_rank: Option<usize>,
    pub holdout_fraction: f64,
    /// Threshold applied before computing recovery error.
    pub threshold: f64,
    pub normalize_features: bool,
    /// Fill the `wall_clock` column. Timed outputs do not replay bitwise.
    pub timing: bool,
    pub save_model: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            top: None,
            baselines: true,
            katz_beta: DEFAULT_KATZ_BETA,
            katz_max_len: DEFAULT_KATZ_MAX_LEN,
            svd_katz_rank: None,
            holdout_fraction: 0.1,
            threshold: 0.5,
            normalize_features: false,
            timing: false,
            save_model: true,
        }
    }
}

/// One experiment. Serialized as TOML for config files and inside the JSON
/// manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub solver: SolverKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub params: ParamsConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn new(task: Task, solver: SolverKind) -> Self {
        Self {
            task,
            solver,
            seed: 0,
            params: ParamsConfig::default(),
            optimizer: OptimizerConfig::default(),
            synth: SynthConfig::default(),
            paths: PathsConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| PumcError::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PumcError::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| PumcError::Config(e.to_string()))
    }

    /// Checks task/solver compatibility, required inputs and parameter
    /// ranges. Runs before any data is touched.
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |msg: String| Err(PumcError::Config(msg));
        let (task, solver) = (self.task, self.solver);
        match task {
            Task::Cluster if !solver.is_inductive() => {
                return cfg_err(format!(
                    "task cluster needs an inductive solver (bias_imc or shift_imc), got {}",
                    solver.name()
                ))
            }
            Task::SynthNondet | Task::SynthDet | Task::LinkPredict if solver.is_inductive() => {
                return cfg_err(format!(
                    "solver {} needs feature files, which only task cluster reads",
                    solver.name()
                ))
            }
            _ => {}
        }
        let need = |name: &str, p: &Option<PathBuf>| match p {
            Some(_) => Ok(()),
            None => cfg_err(format!("task {} needs paths.{name}", task.name())),
        };
        match task {
            Task::LinkPredict => {
                need("train", &self.paths.train)?;
                need("test", &self.paths.test)?;
            }
            Task::Cluster => {
                need("features", &self.paths.features)?;
                need("labels", &self.paths.labels)?;
                need("pairs", &self.paths.pairs)?;
            }
            Task::SynthNondet | Task::SynthDet => {
                if self.synth.sizes.is_empty() || self.synth.sizes.contains(&0) {
                    return cfg_err("synth.sizes must list positive sizes".into());
                }
                if self.synth.replicates == 0 {
                    return cfg_err("synth.replicates must be at least 1".into());
                }
                if self.synth.k == 0 {
                    return cfg_err("synth.k must be at least 1".into());
                }
                if !(0.0..1.0).contains(&self.synth.rho) {
                    return cfg_err(format!("synth.rho must lie in [0, 1), got {}", self.synth.rho));
                }
            }
        }
        if let Some(RhoChoice::Value(r)) = self.params.rho {
            if !(0.0..1.0).contains(&r) {
                return cfg_err(format!("params.rho must lie in [0, 1), got {r}"));
            }
        }
        if let AlphaChoice::Value(a) = self.params.alpha {
            if !(a > 0.0 && a <= 1.0) {
                return cfg_err(format!("params.alpha must lie in (0, 1], got {a}"));
            }
        }
        if !(self.params.lambda >= 0.0 && self.params.lambda.is_finite()) {
            return cfg_err(format!("params.lambda must be finite and nonnegative, got {}", self.params.lambda));
        }
        if self.params.rank == 0 {
            return cfg_err("params.rank must be at least 1".into());
        }
        let e = &self.eval;
        if !(e.holdout_fraction > 0.0 && e.holdout_fraction < 1.0) {
            return cfg_err(format!("eval.holdout_fraction must lie in (0, 1), got {}", e.holdout_fraction));
        }
        if !(e.katz_beta >= 0.0 && e.katz_beta.is_finite()) {
            return cfg_err(format!("eval.katz_beta must be finite and nonnegative, got {}", e.katz_beta));
        }
        if !e.threshold.is_finite() {
            return cfg_err("eval.threshold must be finite".into());
        }
        let o = &self.optimizer;
        if o.max_sweeps == 0 || !(o.tolerance > 0.0) || !(o.init_scale > 0.0) || !(o.prox_step > 0.0) {
            return cfg_err(format!("optimizer settings out of range: {o:?}"));
        }
        Ok(())
    }

    fn solver_config(&self, params: PuHyperParams, seed: u64) -> SolverConfig {
        let mut c = SolverConfig::new(params).with_sweeps(self.optimizer.max_sweeps, self.optimizer.tolerance);
        c.seed = seed;
        c.init_scale = self.optimizer.init_scale;
        c.prox_step = self.optimizer.prox_step;
        c.materialization_cap = self.optimizer.materialization_cap;
        c
    }

    fn lambda_for(&self, m: usize, n: usize) -> f64 {
        match self.params.lambda_scaling {
            LambdaScaling::Constant => self.params.lambda,
            LambdaScaling::SqrtN => self.params.lambda * (m.max(n) as f64).sqrt(),
        }
    }

    fn alpha_for(&self, rho: f64) -> Result<f64> {
        match self.params.alpha {
            AlphaChoice::Value(a) => Ok(a),
            AlphaChoice::Auto(_) => alpha_star(rho),
        }
    }
}

/// A fitted model of either kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedModel {
    Factors(LowRankFactors),
    Inductive(InductiveModel),
}

impl MatrixModel for FittedModel {
    fn rows(&self) -> usize {
        match self {
            FittedModel::Factors(f) => f.rows(),
            FittedModel::Inductive(f) => f.rows(),
        }
    }

    fn cols(&self) -> usize {
        match self {
            FittedModel::Factors(f) => f.cols(),
            FittedModel::Inductive(f) => f.cols(),
        }
    }

    fn predict_unchecked(&self, i: usize, j: usize) -> f64 {
        match self {
            FittedModel::Factors(f) => f.predict_unchecked(i, j),
            FittedModel::Inductive(f) => f.predict_unchecked(i, j),
        }
    }
}

pub fn save_model(path: &Path, model: &FittedModel) -> Result<()> {
    let json = serde_json::to_vec(model).map_err(|e| PumcError::Data(format!("model encoding failed: {e}")))?;
    atomic_write(path, &json)
}

pub fn load_model(path: &Path) -> Result<FittedModel> {
    let bytes = std::fs::read(path).map_err(|e| PumcError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| PumcError::Data(format!("{}: not a saved model: {e}", path.display())))
}

/// Fits `kind` on `obs`. Inductive solvers need `features`.
pub fn fit(
    kind: SolverKind,
    obs: &ObservedOnes,
    cfg: &SolverConfig,
    target_mode: TargetMode,
    features: Option<&InductiveFeatures>,
) -> Result<(FittedModel, SolverReport)> {
    let factors = |r: Result<(LowRankFactors, SolverReport)>| r.map(|(m, rep)| (FittedModel::Factors(m), rep));
    let need_features = || {
        features.ok_or_else(|| PumcError::Config(format!("solver {} needs features", kind.name())))
    };
    match kind {
        SolverKind::BiasCd => factors(solve_bias_cd(obs, cfg)),
        SolverKind::BiasProx => factors(solve_bias_prox(obs, cfg)),
        SolverKind::ShiftBounded => factors(solve_shift_bounded(obs, cfg)),
        SolverKind::ShiftRelax => factors(solve_shift_relax(obs, cfg, target_mode)),
        SolverKind::PlainCd => factors(solve_plain_cd(obs, cfg)),
        SolverKind::BiasImc => {
            solve_bias_imc(obs, need_features()?, cfg).map(|(m, r)| (FittedModel::Inductive(m), r))
        }
        SolverKind::ShiftImc => {
            solve_shift_imc(obs, need_features()?, cfg).map(|(m, r)| (FittedModel::Inductive(m), r))
        }
    }
}

/// The solver's own data term on held-out ones, per held-out entry: targets
/// are `1/(1-ρ)` for shifted solvers and 1 otherwise, weighted by `α` for
/// the biased ones.
pub fn validation_loss(kind: SolverKind, model: &dyn MatrixModel, held_out: &ObservedOnes, params: &PuHyperParams) -> f64 {
    let (target, weight) = if kind.is_shift() {
        (1.0 / (1.0 - params.rho), 1.0)
    } else if kind == SolverKind::PlainCd {
        (1.0, 1.0)
    } else {
        (1.0, params.alpha)
    };
    let total: f64 = held_out
        .entries()
        .iter()
        .map(|&(i, j)| weight * (model.predict_unchecked(i, j) - target).powi(2))
        .sum();
    total / held_out.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoSelection {
    pub label: String,
    pub candidates: Vec<f64>,
    pub validation_loss: Vec<f64>,
    pub chosen: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub purpose: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub label: String,
    pub seconds: f64,
}

/// Run manifest written as `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedRecord>,
    pub rho_selection: Vec<RhoSelection>,
    pub outputs: Vec<String>,
    /// Present only for timed runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<Vec<TimingRecord>>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| PumcError::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| PumcError::Config(format!("{}: not a run manifest: {e}", path.display())))
    }
}

/// Everything a run produced, before or after writing.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub metrics: Vec<MetricsRow>,
    pub curves: Vec<(String, FprFnrCurve)>,
    pub manifest: Manifest,
    /// The model fitted last (the only one for link and cluster tasks).
    pub model: Option<FittedModel>,
}

struct Recorder<'a> {
    cfg: &'a ExperimentConfig,
    metrics: Vec<MetricsRow>,
    curves: Vec<(String, FprFnrCurve)>,
    seeds: Vec<SeedRecord>,
    selections: Vec<RhoSelection>,
    timings: Vec<TimingRecord>,
}

impl<'a> Recorder<'a> {
    fn new(cfg: &'a ExperimentConfig) -> Self {
        Self {
            cfg,
            metrics: Vec::new(),
            curves: Vec::new(),
            seeds: Vec::new(),
            selections: Vec::new(),
            timings: Vec::new(),
        }
    }

    fn seed(&mut self, purpose: impl Into<String>, seed: u64) {
        self.seeds.push(SeedRecord {
            purpose: purpose.into(),
            seed,
        });
    }

    #[allow(clippy::too_many_arguments)]
    fn row(&mut self, solver: &str, n: usize, k: usize, p: Option<&PuHyperParams>, metric: &str, value: f64, sweeps: usize, secs: f64) {
        let (rho, alpha, lambda) = p.map_or((0.0, 0.0, 0.0), |p| (p.rho, p.alpha, p.lambda));
        self.metrics.push(MetricsRow {
            task: self.cfg.task.name().into(),
            solver: solver.into(),
            n,
            k,
            rho,
            alpha,
            lambda,
            metric: metric.into(),
            value,
            sweeps,
            wall_clock: self.cfg.eval.timing.then_some(secs),
        });
        if self.cfg.eval.timing {
            self.timings.push(TimingRecord {
                label: format!("{solver} n={n} {metric}"),
                seconds: secs,
            });
        }
    }
}

/// Resolves `ρ` for a fit on `obs`: the configured value, or the grid
/// candidate with the smallest validation loss. Grid points run in parallel,
/// each on the same split.
fn choose_rho(
    cfg: &ExperimentConfig,
    rec: &mut Recorder<'_>,
    label: &str,
    obs: &ObservedOnes,
    default: Option<f64>,
    features: Option<&InductiveFeatures>,
    lambda: f64,
    seed: u64,
) -> Result<f64> {
    let choice = cfg.params.rho.or(default.map(RhoChoice::Value)).unwrap_or(RhoChoice::Grid(GridKeyword::Grid));
    let RhoChoice::Grid(_) = choice else {
        let RhoChoice::Value(r) = choice else { unreachable!() };
        return Ok(r);
    };
    let candidates = rho_grid(obs).map_err(|e| e.context("rho grid"))?;
    let split_seed = seed.wrapping_add(HOLDOUT_SEED_OFFSET);
    rec.seed(format!("{label}: holdout split"), split_seed);
    let (train, held_out) =
        holdout_split(obs, cfg.eval.holdout_fraction, split_seed).map_err(|e| e.context("rho grid holdout"))?;
    let losses: Vec<f64> = candidates
        .par_iter()
        .map(|&rho| -> Result<f64> {
            let params = PuHyperParams::new(rho, cfg.alpha_for(rho)?, lambda, cfg.params.rank)?;
            let scfg = cfg.solver_config(params, seed);
            let (model, _) = fit(cfg.solver, &train, &scfg, cfg.params.target_mode, features)?;
            Ok(validation_loss(cfg.solver, &model, &held_out, &params))
        })
        .collect::<Result<_>>()
        .map_err(|e| e.context("rho grid"))?;
    // first minimum wins, so ties resolve toward the smaller candidate
    let best = losses
        .iter()
        .enumerate()
        .fold(0, |b, (i, &l)| if l < losses[b] { i } else { b });
    let chosen = candidates[best];
    rec.selections.push(RhoSelection {
        label: label.into(),
        candidates,
        validation_loss: losses,
        chosen,
    });
    Ok(chosen)
}

fn run_synthetic(cfg: &ExperimentConfig, rec: &mut Recorder<'_>) -> Result<Option<FittedModel>> {
    let setting = if cfg.task == Task::SynthNondet {
        Setting::NonDeterministic
    } else {
        Setting::Deterministic
    };
    let q_policy = cfg.synth.q.map_or(QPolicy::Balanced, QPolicy::Fixed);
    let mut last = None;
    for &n in &cfg.synth.sizes {
        for r in 0..cfg.synth.replicates {
            let seed = cfg.seed.wrapping_add(r as u64);
            let label = format!("n={n} replicate={r}");
            rec.seed(format!("{label}: instance and solver init"), seed);
            let spec = SyntheticSpec {
                n,
                k: cfg.synth.k,
                setting,
                rho: cfg.synth.rho,
                q_policy,
                seed,
            };
            let inst = generate_instance(&spec).map_err(|e| e.context(format!("generate {label}")))?;
            let lambda = cfg.lambda_for(n, n);
            let rho = choose_rho(cfg, rec, &label, &inst.observed, Some(cfg.synth.rho), None, lambda, seed)?;
            let mut solvers = vec![cfg.solver];
            if cfg.eval.baselines && cfg.solver != SolverKind::PlainCd {
                solvers.push(SolverKind::PlainCd);
            }
            for kind in solvers {
                let params = PuHyperParams::new(rho, cfg.alpha_for(rho)?, lambda, cfg.params.rank)?;
                let start = Instant::now();
                let (model, report) = fit(kind, &inst.observed, &cfg.solver_config(params, seed), cfg.params.target_mode, None)
                    .map_err(|e| e.context(format!("solve {} {label}", kind.name())))?;
                let secs = start.elapsed().as_secs_f64();
                let x = model.materialize(cfg.optimizer.materialization_cap)?;
                let (metric, value) = match setting {
                    Setting::NonDeterministic => ("mse", mse(&x, &inst.ground_truth_m)?),
                    Setting::Deterministic => ("recovery_error", recovery_error(&x, &inst.clean_y, cfg.eval.threshold)?),
                };
                rec.row(kind.name(), n, cfg.params.rank, Some(&params), metric, value, report.sweeps_run, secs);
                if kind == cfg.solver {
                    last = Some(model);
                }
            }
        }
    }
    Ok(last)
}

/// Reads an edge list, or a binary cache when the extension is `bin`.
pub fn read_graph(path: &Path, nodes: Option<usize>) -> Result<ObservedOnes> {
    if path.extension().is_some_and(|e| e == "bin") {
        let g = read_binary_cache(path)?;
        return match nodes {
            Some(n) if n != g.rows() => ObservedOnes::new(n, n, g.entries().to_vec()),
            _ => Ok(g),
        };
    }
    read_edge_list(path, EdgeListOptions { undirected: true, nodes })
}

/// Train and test graphs on a common node count.
pub fn read_link_split(train: &Path, test: &Path) -> Result<(ObservedOnes, ObservedOnes)> {
    let a = read_graph(train, None).map_err(|e| e.context("read train graph"))?;
    let b = read_graph(test, None).map_err(|e| e.context("read test graph"))?;
    let n = a.rows().max(b.rows());
    let a = if a.rows() == n { a } else { ObservedOnes::new(n, n, a.entries().to_vec())? };
    let b = if b.rows() == n { b } else { ObservedOnes::new(n, n, b.entries().to_vec())? };
    Ok((a, b))
}

fn undirected_count(g: &ObservedOnes) -> usize {
    g.entries().iter().filter(|(i, j)| i < j).count()
}

/// FPR/FNR curve of a ranking over all node pairs.
pub fn score_ranking(pred: &RankedPredictions, test: &ObservedOnes) -> Result<FprFnrCurve> {
    fpr_fnr(pred, test, &Universe::AllPairs)
}

fn run_link(cfg: &ExperimentConfig, rec: &mut Recorder<'_>) -> Result<Option<FittedModel>> {
    let paths = &cfg.paths;
    let (train, test) = read_link_split(paths.train.as_deref().expect("validated"), paths.test.as_deref().expect("validated"))?;
    let n = train.rows();
    let top = cfg.eval.top.unwrap_or_else(|| undirected_count(&test));
    rec.seed("solver init", cfg.seed);
    let lambda = cfg.lambda_for(n, n);
    let rho = choose_rho(cfg, rec, "train graph", &train, None, None, lambda, cfg.seed)?;
    let params = PuHyperParams::new(rho, cfg.alpha_for(rho)?, lambda, cfg.params.rank)?;
    let start = Instant::now();
    let (model, report) = fit(cfg.solver, &train, &cfg.solver_config(params, cfg.seed), cfg.params.target_mode, None)
        .map_err(|e| e.context(format!("solve {}", cfg.solver.name())))?;
    let ranking = rank_model(&model, &train, top)?;
    let secs = start.elapsed().as_secs_f64();
    let curve = score_ranking(&ranking, &test).map_err(|e| e.context("score"))?;
    let at = curve.at(top);
    let k = cfg.params.rank;
    rec.row(cfg.solver.name(), n, k, Some(&params), "fnr", at.fnr, report.sweeps_run, secs);
    rec.row(cfg.solver.name(), n, k, Some(&params), "fpr", at.fpr, report.sweeps_run, secs);
    rec.curves.push((cfg.solver.name().into(), curve));
    if cfg.eval.baselines {
        let e = &cfg.eval;
        let svd_rank = e.svd_katz_rank.unwrap_or(k);
        let baselines: [(&str, usize, Box<dyn Fn() -> Result<RankedPredictions> + '_>); 3] = [
            ("common_neighbors", 0, Box::new(|| baseline_common_neighbors(&train, top))),
            ("katz", 0, Box::new(|| baseline_katz(&train, e.katz_beta, e.katz_max_len, top))),
            ("svd_katz", svd_rank, Box::new(|| baseline_svd_katz(&train, svd_rank, e.katz_beta, e.katz_max_len, top))),
        ];
        for (name, rank, run) in baselines {
            let start = Instant::now();
            let pred = run().map_err(|e| e.context(format!("baseline {name}")))?;
            let secs = start.elapsed().as_secs_f64();
            let curve = score_ranking(&pred, &test)?;
            let at = curve.at(top);
            rec.row(name, n, rank, None, "fnr", at.fnr, 0, secs);
            rec.row(name, n, rank, None, "fpr", at.fpr, 0, secs);
            rec.curves.push((name.into(), curve));
        }
    }
    Ok(Some(model))
}

/// Features, labels and observed positive pairs for clustering.
pub fn read_cluster_inputs(
    features: &Path,
    labels: &Path,
    pairs: &Path,
    normalize: bool,
) -> Result<(DenseMatrix, Vec<usize>, ObservedOnes)> {
    let f = read_feature_matrix(features, normalize).map_err(|e| e.context("read features"))?;
    let labels = read_labels(labels).map_err(|e| e.context("read labels"))?;
    if labels.len() != f.rows() {
        return Err(PumcError::Data(format!(
            "{} labels for {} feature rows",
            labels.len(),
            f.rows()
        )));
    }
    let pairs = read_graph(pairs, Some(f.rows())).map_err(|e| e.context("read pairs"))?;
    Ok((f, labels, pairs))
}

fn run_cluster(cfg: &ExperimentConfig, rec: &mut Recorder<'_>) -> Result<Option<FittedModel>> {
    let p = &cfg.paths;
    let (f, labels, pairs) = read_cluster_inputs(
        p.features.as_deref().expect("validated"),
        p.labels.as_deref().expect("validated"),
        p.pairs.as_deref().expect("validated"),
        cfg.eval.normalize_features,
    )?;
    let n = f.rows();
    let features = InductiveFeatures::new(f.clone(), f);
    rec.seed("solver init", cfg.seed);
    let lambda = cfg.lambda_for(n, n);
    let rho = choose_rho(cfg, rec, "pairs", &pairs, None, Some(&features), lambda, cfg.seed)?;
    let mut runs = vec![(cfg.solver.name(), cfg.alpha_for(rho)?, cfg.solver)];
    if cfg.eval.baselines {
        // every unobserved pair treated as a zero, the unweighted fit
        runs.push(("mc_inductive", 0.5, SolverKind::BiasImc));
    }
    let mut main = None;
    for (name, alpha, kind) in runs {
        let params = PuHyperParams::new(rho, alpha, lambda, cfg.params.rank)?;
        let start = Instant::now();
        let (model, report) = fit(kind, &pairs, &cfg.solver_config(params, cfg.seed), cfg.params.target_mode, Some(&features))
            .map_err(|e| e.context(format!("solve {name}")))?;
        let secs = start.elapsed().as_secs_f64();
        let x = model.materialize(cfg.optimizer.materialization_cap)?;
        let err = clustering_sign_error(&x, &labels)?;
        rec.row(name, n, cfg.params.rank, Some(&params), "sign_error", err, report.sweeps_run, secs);
        if main.is_none() {
            main = Some(model);
        }
    }
    Ok(main)
}

/// Runs an experiment without writing anything.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut rec = Recorder::new(cfg);
    let model = match cfg.task {
        Task::SynthNondet | Task::SynthDet => run_synthetic(cfg, &mut rec)?,
        Task::LinkPredict => run_link(cfg, &mut rec)?,
        Task::Cluster => run_cluster(cfg, &mut rec)?,
    };
    let mut outputs = vec![METRICS_FILE.to_string()];
    if !rec.curves.is_empty() {
        outputs.push(CURVE_FILE.into());
    }
    if cfg.eval.save_model && model.is_some() {
        outputs.push(MODEL_FILE.into());
    }
    outputs.push(MANIFEST_FILE.into());
    let manifest = Manifest {
        tool: "pumc".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        seeds: rec.seeds,
        rho_selection: rec.selections,
        outputs,
        timings: cfg.eval.timing.then_some(rec.timings),
    };
    Ok(RunOutcome {
        metrics: rec.metrics,
        curves: rec.curves,
        manifest,
        model,
    })
}

/// Writes a run's outputs into `dir`.
pub fn emit(outcome: &RunOutcome, dir: &Path) -> Result<()> {
    write_metrics(&dir.join(METRICS_FILE), &outcome.metrics)?;
    if !outcome.curves.is_empty() {
        write_curves(&dir.join(CURVE_FILE), &outcome.curves)?;
    }
    if let Some(model) = &outcome.model {
        if outcome.manifest.config.eval.save_model {
            save_model(&dir.join(MODEL_FILE), model)?;
        }
    }
    let json = serde_json::to_vec_pretty(&outcome.manifest)
        .map_err(|e| PumcError::Data(format!("manifest encoding failed: {e}")))?;
    atomic_write(&dir.join(MANIFEST_FILE), &json)
}

/// Makes input paths absolute so the manifest replays from any directory.
fn absolutize(cfg: &mut ExperimentConfig) -> Result<()> {
    let p = &mut cfg.paths;
    for path in [&mut p.train, &mut p.test, &mut p.features, &mut p.labels, &mut p.pairs].into_iter().flatten() {
        *path = std::path::absolute(&*path).map_err(|e| PumcError::io(path.clone(), e))?;
    }
    Ok(())
}

/// Validates, runs and writes into `cfg.paths.out`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let mut cfg = cfg.clone();
    cfg.validate()?;
    absolutize(&mut cfg)?;
    let outcome = execute(&cfg)?;
    emit(&outcome, &cfg.paths.out).map_err(|e| e.context("write results"))?;
    Ok(outcome)
}

/// Re-runs the configuration stored in a manifest, writing into `out`.
pub fn replay(manifest: &Path, out: &Path) -> Result<RunOutcome> {
    let mut cfg = Manifest::load(manifest)?.config;
    cfg.paths.out = out.to_path_buf();
    run_experiment(&cfg)
}

/// Link-prediction scores of a saved model on a train/test split.
pub fn rescore_link(
    model: &FittedModel,
    train: &ObservedOnes,
    test: &ObservedOnes,
    top: Option<usize>,
) -> Result<(Vec<MetricsRow>, FprFnrCurve)> {
    let top = top.unwrap_or_else(|| undirected_count(test));
    let curve = score_ranking(&rank_model(model, train, top)?, test)?;
    let at = curve.at(top);
    let row = |metric: &str, value: f64| MetricsRow {
        task: Task::LinkPredict.name().into(),
        solver: "saved_model".into(),
        n: train.rows(),
        k: model_rank(model),
        rho: 0.0,
        alpha: 0.0,
        lambda: 0.0,
        metric: metric.into(),
        value,
        sweeps: 0,
        wall_clock: None,
    };
    Ok((vec![row("fnr", at.fnr), row("fpr", at.fpr)], curve))
}

/// Clustering sign error of a saved model.
pub fn rescore_cluster(model: &FittedModel, labels: &[usize], cap: usize) -> Result<MetricsRow> {
    let err = clustering_sign_error(&model.materialize(cap)?, labels)?;
    Ok(MetricsRow {
        task: Task::Cluster.name().into(),
        solver: "saved_model".into(),
        n: labels.len(),
        k: model_rank(model),
        rho: 0.0,
        alpha: 0.0,
        lambda: 0.0,
        metric: "sign_error".into(),
        value: err,
        sweeps: 0,
        wall_clock: None,
    })
}

fn model_rank(model: &FittedModel) -> usize {
    match model {
        FittedModel::Factors(f) => f.rank(),
        FittedModel::Inductive(m) => m.d.rows(),
    }
}
