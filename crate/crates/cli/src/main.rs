//! `pumc`: positive-unlabeled matrix completion from the command line.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! failure. `PUMC_THREADS` caps the worker pool.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pumc::experiment::{
    load_model, read_link_split, replay, rescore_cluster, rescore_link, run_experiment, AlphaChoice, AutoKeyword,
    ExperimentConfig, GridKeyword, LambdaScaling, RhoChoice, SolverKind, Task, CURVE_FILE, METRICS_FILE,
};
use pumc::io::{read_labels, write_curves, write_metrics};
use pumc::{PumcError, Result};

#[derive(Parser)]
#[command(name = "pumc", version, about = "Matrix completion from positive and unlabeled entries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic recovery experiment.
    Synth(SynthArgs),
    /// Link prediction on a train/test edge split.
    Link(LinkArgs),
    /// Semi-supervised clustering from positive pairs and features.
    Cluster(ClusterArgs),
    /// Re-score a saved model.
    Eval(EvalArgs),
    /// Re-run a manifest written by an earlier run.
    Replay(ReplayArgs),
    /// Run a configuration file as is.
    Run(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SettingArg {
    Nondet,
    Det,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum SolverArg {
    BiasCd,
    BiasProx,
    ShiftBounded,
    ShiftRelax,
    BiasImc,
    ShiftImc,
    PlainCd,
}

impl From<SolverArg> for SolverKind {
    fn from(s: SolverArg) -> Self {
        match s {
            SolverArg::BiasCd => SolverKind::BiasCd,
            SolverArg::BiasProx => SolverKind::BiasProx,
            SolverArg::ShiftBounded => SolverKind::ShiftBounded,
            SolverArg::ShiftRelax => SolverKind::ShiftRelax,
            SolverArg::BiasImc => SolverKind::BiasImc,
            SolverArg::ShiftImc => SolverKind::ShiftImc,
            SolverArg::PlainCd => SolverKind::PlainCd,
        }
    }
}

/// Flags shared by the experiment subcommands. Each mirrors a config key and
/// wins over the file.
#[derive(Args)]
struct Common {
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    solver: Option<SolverArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fixed noise rate.
    #[arg(long, conflicts_with = "rho_grid")]
    rho: Option<f64>,
    /// Select the noise rate on a holdout of the observed ones.
    #[arg(long)]
    rho_grid: bool,
    #[arg(long, conflicts_with = "auto_alpha")]
    alpha: Option<f64>,
    /// Use α = (1 + ρ)/2.
    #[arg(long)]
    auto_alpha: bool,
    #[arg(long)]
    lambda: Option<f64>,
    /// Multiply lambda by √n.
    #[arg(long)]
    lambda_sqrt_n: bool,
    /// Model rank.
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    max_sweeps: Option<usize>,
    #[arg(long)]
    tolerance: Option<f64>,
    /// Skip the reference methods.
    #[arg(long)]
    no_baselines: bool,
    /// Record wall-clock times (outputs then no longer replay bitwise).
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    setting: Option<SettingArg>,
    /// Matrix sizes; repeat or comma-separate.
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    /// Rank of the ground truth.
    #[arg(long)]
    k: Option<usize>,
    /// Generating noise rate; also the model's unless --rho-grid is set.
    #[arg(long)]
    true_rho: Option<f64>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Fixed threshold for the deterministic setting.
    #[arg(long)]
    q: Option<f64>,
}

#[derive(Args)]
struct LinkArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    /// Ranking length; defaults to the number of test edges.
    #[arg(long)]
    top: Option<usize>,
}

#[derive(Args)]
struct ClusterArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Scale feature rows to unit norm.
    #[arg(long)]
    normalize: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// `model.json` from an earlier run.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, requires = "test")]
    train: Option<PathBuf>,
    #[arg(long, requires = "train")]
    test: Option<PathBuf>,
    #[arg(long)]
    top: Option<usize>,
    #[arg(long, conflicts_with_all = ["train", "test"])]
    labels: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    /// `report.json` written by an earlier run.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Fail unless the new metrics.csv matches the one next to the manifest.
    #[arg(long)]
    check: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// The config file if given, else defaults. `task` overrides the file's
/// task when set and is the default otherwise.
fn base_config(path: Option<&Path>, task: Option<Task>, fallback: (Task, SolverKind)) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::new(fallback.0, fallback.1),
    };
    if let Some(t) = task {
        cfg.task = t;
    }
    Ok(cfg)
}

fn apply_common(cfg: &mut ExperimentConfig, c: &Common) {
    if let Some(s) = c.solver {
        cfg.solver = s.into();
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(r) = c.rho {
        cfg.params.rho = Some(RhoChoice::Value(r));
    }
    if c.rho_grid {
        cfg.params.rho = Some(RhoChoice::Grid(GridKeyword::Grid));
    }
    if let Some(a) = c.alpha {
        cfg.params.alpha = AlphaChoice::Value(a);
    }
    if c.auto_alpha {
        cfg.params.alpha = AlphaChoice::Auto(AutoKeyword::Auto);
    }
    if let Some(l) = c.lambda {
        cfg.params.lambda = l;
    }
    if c.lambda_sqrt_n {
        cfg.params.lambda_scaling = LambdaScaling::SqrtN;
    }
    if let Some(k) = c.rank {
        cfg.params.rank = k;
    }
    if let Some(s) = c.max_sweeps {
        cfg.optimizer.max_sweeps = s;
    }
    if let Some(t) = c.tolerance {
        cfg.optimizer.tolerance = t;
    }
    if c.no_baselines {
        cfg.eval.baselines = false;
    }
    if c.timing {
        cfg.eval.timing = true;
    }
    if let Some(o) = &c.out {
        cfg.paths.out = o.clone();
    }
}

fn report(outcome: &pumc::experiment::RunOutcome, out: &Path) {
    for row in &outcome.metrics {
        println!("{:<18} n={:<6} {:<15} {:.6}", row.solver, row.n, row.metric, row.value);
    }
    println!("results written to {}", out.display());
}

fn run_synth(a: SynthArgs) -> Result<()> {
    let task = a.setting.map(|s| match s {
        SettingArg::Det => Task::SynthDet,
        SettingArg::Nondet => Task::SynthNondet,
    });
    let mut cfg = base_config(a.common.config.as_deref(), task, (Task::SynthNondet, SolverKind::ShiftBounded))?;
    apply_common(&mut cfg, &a.common);
    if !a.n.is_empty() {
        cfg.synth.sizes = a.n;
    }
    if let Some(k) = a.k {
        cfg.synth.k = k;
    }
    if let Some(r) = a.true_rho.or(a.common.rho) {
        cfg.synth.rho = r;
    }
    if let Some(r) = a.replicates {
        cfg.synth.replicates = r;
    }
    if a.q.is_some() {
        cfg.synth.q = a.q;
    }
    let outcome = run_experiment(&cfg)?;
    report(&outcome, &cfg.paths.out);
    Ok(())
}

fn run_link(a: LinkArgs) -> Result<()> {
    let mut cfg = base_config(a.common.config.as_deref(), Some(Task::LinkPredict), (Task::LinkPredict, SolverKind::BiasCd))?;
    apply_common(&mut cfg, &a.common);
    if a.train.is_some() {
        cfg.paths.train = a.train;
    }
    if a.test.is_some() {
        cfg.paths.test = a.test;
    }
    if a.top.is_some() {
        cfg.eval.top = a.top;
    }
    let outcome = run_experiment(&cfg)?;
    report(&outcome, &cfg.paths.out);
    Ok(())
}

fn run_cluster(a: ClusterArgs) -> Result<()> {
    let mut cfg = base_config(a.common.config.as_deref(), Some(Task::Cluster), (Task::Cluster, SolverKind::BiasImc))?;
    apply_common(&mut cfg, &a.common);
    for (slot, v) in [
        (&mut cfg.paths.features, a.features),
        (&mut cfg.paths.labels, a.labels),
        (&mut cfg.paths.pairs, a.pairs),
    ] {
        if v.is_some() {
            *slot = v;
        }
    }
    if a.normalize {
        cfg.eval.normalize_features = true;
    }
    let outcome = run_experiment(&cfg)?;
    report(&outcome, &cfg.paths.out);
    Ok(())
}

fn run_eval(a: EvalArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let rows = match (&a.train, &a.test, &a.labels) {
        (Some(train), Some(test), None) => {
            let (train, test) = read_link_split(train, test)?;
            let (rows, curve) = rescore_link(&model, &train, &test, a.top)?;
            write_curves(&a.out.join(CURVE_FILE), &[("saved_model".into(), curve)])?;
            rows
        }
        (None, None, Some(labels)) => {
            let labels = read_labels(labels)?;
            vec![rescore_cluster(&model, &labels, pumc::DEFAULT_MATERIALIZATION_CAP)?]
        }
        _ => {
            return Err(PumcError::Config(
                "eval needs either --train and --test, or --labels".into(),
            ))
        }
    };
    write_metrics(&a.out.join(METRICS_FILE), &rows)?;
    for row in &rows {
        println!("{:<15} {:.6}", row.metric, row.value);
    }
    Ok(())
}

fn run_replay(a: ReplayArgs) -> Result<()> {
    let outcome = replay(&a.manifest, &a.out)?;
    report(&outcome, &a.out);
    if a.check {
        let dir = a.manifest.parent().unwrap_or(Path::new("."));
        let read = |p: PathBuf| std::fs::read(&p).map_err(|e| PumcError::Io { path: p, source: e });
        let original = read(dir.join(METRICS_FILE))?;
        let fresh = read(a.out.join(METRICS_FILE))?;
        if original != fresh {
            return Err(PumcError::Data("replayed metrics.csv differs from the original".into()));
        }
        println!("metrics.csv reproduced exactly");
    }
    Ok(())
}

fn run_config(a: RunArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::from_file(&a.config)?;
    if let Some(o) = a.out {
        cfg.paths.out = o;
    }
    let outcome = run_experiment(&cfg)?;
    report(&outcome, &cfg.paths.out);
    Ok(())
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("PUMC_THREADS") else { return Ok(()) };
    let threads: usize = v
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| PumcError::Config(format!("PUMC_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| PumcError::Config(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| match cli.command {
        Command::Synth(a) => run_synth(a),
        Command::Link(a) => run_link(a),
        Command::Cluster(a) => run_cluster(a),
        Command::Eval(a) => run_eval(a),
        Command::Replay(a) => run_replay(a),
        Command::Run(a) => run_config(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
