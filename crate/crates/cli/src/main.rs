//! `lari`: simulate, subsample and fit SDE movement models, and run the
//! seeded experiment recipes.
//!
//! Exit codes: 0 success, 2 usage, 3 data error, 4 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lari_core::experiment::{Recipe, Scale, StageFailure};

#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "lari", version, about = "SDE animal-movement simulation, LARI/regular subsampling and estimation")]
struct Cli {
    /// Worker threads for replicate-level parallelism (all cores by default).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate paths for a recipe and write one CSV per individual.
    Simulate(SimulateArgs),
    /// Split paths into observed and unobserved parts.
    Subsample(SubsampleArgs),
    /// Whitened least-squares fit of the quadratic or sign-drift model.
    FitOls(FitOlsArgs),
    /// Adaptive Metropolis-within-Gibbs fit with imputed positions.
    FitMcmc(FitMcmcArgs),
    /// Three-step penalized estimate of potential and motility surfaces.
    FitPls(FitPlsArgs),
    /// Chain and surface diagnostics.
    Diagnose(DiagnoseArgs),
    /// Regular vs LARI design comparison.
    Compare(CompareArgs),
    /// Run a named experiment recipe end to end.
    RunExperiment(RunExperimentArgs),
}

fn parse_recipe(s: &str) -> Result<Recipe, String> {
    s.parse().map_err(|e: lari_core::Error| e.to_string())
}

fn parse_scale(s: &str) -> Result<Scale, String> {
    s.parse().map_err(|e: lari_core::Error| e.to_string())
}

fn parse_pair(s: &str) -> Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected X,Y, got '{s}'"));
    }
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("'{t}': {e}"));
    Ok([num(parts[0])?, num(parts[1])?])
}

#[derive(Args)]
pub struct SimulateArgs {
    /// JSON file with any of: recipe, seed, replicates, sim.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_recipe)]
    recipe: Option<Recipe>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Friction of the quadratic-potential recipes.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Number of time points per path.
    #[arg(long)]
    n: Option<usize>,
    /// Time step.
    #[arg(long)]
    h: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum DesignKind {
    Regular,
    Lari,
}

#[derive(Args)]
pub struct SubsampleArgs {
    /// Path CSV (`id,time,x,y`).
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    design: DesignKind,
    /// Mean observation spacing.
    #[arg(long)]
    h: f64,
    /// LARI intermediate times restricted to multiples of this from the interval start.
    #[arg(long)]
    resolution: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output prefix; writes `<out>_obs.csv` and `<out>_unobs.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ModelKind {
    Quadratic,
    Sign,
}

#[derive(Args)]
pub struct FitOlsArgs {
    /// Path CSV; rows of all paths are pooled.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "quadratic")]
    model: ModelKind,
    /// Attractor of the sign-drift model.
    #[arg(long, value_parser = parse_pair)]
    attractor: Option<[f64; 2]>,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// JSON report file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct FitMcmcArgs {
    /// Observed path CSV (one path).
    #[arg(long)]
    obs: PathBuf,
    /// Unobserved times with true positions, used for imputation and scoring.
    #[arg(long)]
    unobs: Option<PathBuf>,
    /// Without `--unobs`, impute positions every `dt` between observations.
    #[arg(long)]
    dt: Option<f64>,
    /// JSON file with `mcmc` and `priors` objects.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    adapt: Option<usize>,
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// True `alpha,beta,sigma` for coverage and PMSE.
    #[arg(long, value_delimiter = ',')]
    truth: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct FitPlsArgs {
    /// One or more path CSVs.
    #[arg(long, num_args = 1.., required = true)]
    input: Vec<PathBuf>,
    /// ASCII raster defining the grid and its active cells.
    #[arg(long, conflicts_with_all = ["nx", "ny", "cell", "origin"])]
    grid: Option<PathBuf>,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    ny: Option<usize>,
    #[arg(long)]
    cell: Option<f64>,
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    origin: Option<[f64; 2]>,
    /// JSON file overlaying the estimator settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    holdout: Option<f64>,
    /// Offset of the gradient rows (one cell by default).
    #[arg(long)]
    fd_step: Option<f64>,
    /// Candidate log smoothing parameters, comma separated (default -8..8).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    log_lambda: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct DiagnoseArgs {
    /// Draws CSV with one column per quantity.
    #[arg(long)]
    draws: Option<PathBuf>,
    /// True values as `name=value`, repeatable.
    #[arg(long)]
    truth: Vec<String>,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, default_value_t = 30)]
    bins: usize,
    /// Estimated and reference potential rasters.
    #[arg(long, requires = "p_ref")]
    p_hat: Option<PathBuf>,
    #[arg(long, requires = "p_hat")]
    p_ref: Option<PathBuf>,
    /// Estimated and reference motility rasters.
    #[arg(long, requires = "m_ref")]
    m_hat: Option<PathBuf>,
    #[arg(long, requires = "m_hat")]
    m_ref: Option<PathBuf>,
    /// Compare motility on the log scale.
    #[arg(long)]
    log_scale: bool,
    /// Restrict surface metrics to cells within `radius` of `center`.
    #[arg(long, value_parser = parse_pair, requires = "radius")]
    center: Option<[f64; 2]>,
    #[arg(long, requires = "center")]
    radius: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct CompareArgs {
    /// JSON file overlaying the comparison settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    adapt: Option<usize>,
    #[arg(long)]
    sample: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct RunExperimentArgs {
    #[arg(long, value_parser = parse_recipe, required_unless_present = "manifest")]
    recipe: Option<Recipe>,
    #[arg(long, value_parser = parse_scale, default_value = "desk")]
    scale: Scale,
    /// JSON file overlaying the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Re-run the configuration recorded in a manifest.
    #[arg(long, conflicts_with_all = ["recipe", "config"])]
    manifest: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    adapt: Option<usize>,
    #[arg(long)]
    sample: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 2;
        }
        if let Some(f) = cause.downcast_ref::<StageFailure>() {
            return if f.error.is_numerical() { 4 } else { 3 };
        }
        if let Some(e) = cause.downcast_ref::<lari_core::Error>() {
            return if e.is_numerical() { 4 } else { 3 };
        }
    }
    3
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| UsageError(format!("--threads: {e}")))?;
    }
    match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Subsample(a) => commands::subsample(a),
        Command::FitOls(a) => commands::fit_ols(a),
        Command::FitMcmc(a) => commands::fit_mcmc(a),
        Command::FitPls(a) => commands::fit_pls(a),
        Command::Diagnose(a) => commands::diagnose(a),
        Command::Compare(a) => commands::compare(a),
        Command::RunExperiment(a) => commands::run_experiment(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
