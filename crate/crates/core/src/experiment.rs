//! Named, seeded experiment recipes and the files they write.
//!
//! Every random draw comes from a substream keyed by `(replicate, purpose)`,
//! so results do not depend on the number of worker threads.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    gradient_vector_metrics, motility_error, score_fit, summarize, CellSubset, CompareConfig,
    DesignComparisonReport, FitMetrics, GradientMetrics, MotilityError, TrueParams, PARAM_NAMES,
};
use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::mcmc::{credible_interval, run_mwg, MCMCConfig, Priors};
use crate::ols::{build_whitened_quadratic, fit_ols};
use crate::path::{write_paths_csv, MovementPath};
use crate::pls::{fit_full, PLSFit, PlsConfig};
use crate::rng::{stream_id, substream};
use crate::sampling::{subsample_regular, SamplingDesign, Subsample};
use crate::sim::{simulate_em, simulate_quadratic_ar2, step_size_stats, ModelParams, QuadraticSimParams, StepSizeSummary};
use crate::surfaces::{AnalyticSurface, GriddedSurface, Surface};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Recipe {
    /// Regular vs LARI MCMC fits of quadratic-potential paths.
    SimStudy,
    /// `sim-study` with inflated prior variances.
    PriorRobustness,
    /// Step-length summaries under a two-level motility surface.
    Capability,
    /// OLS and MCMC on every other point without imputing the gaps.
    NoInfill,
    /// Bias of the penalized surface estimator.
    PlsStudy,
    /// Penalized fits to full, regular and LARI subsamples of the same paths.
    LariVsRegularPls,
}

impl Recipe {
    pub const ALL: [Recipe; 6] = [
        Recipe::SimStudy,
        Recipe::PriorRobustness,
        Recipe::Capability,
        Recipe::NoInfill,
        Recipe::PlsStudy,
        Recipe::LariVsRegularPls,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Recipe::SimStudy => "sim-study",
            Recipe::PriorRobustness => "prior-robustness",
            Recipe::Capability => "capability",
            Recipe::NoInfill => "no-infill",
            Recipe::PlsStudy => "pls-study",
            Recipe::LariVsRegularPls => "lari-vs-regular-pls",
        }
    }
}

impl FromStr for Recipe {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Recipe::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown recipe '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Desk,
    Full,
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "full" => Ok(Scale::Full),
            _ => Err(Error::Parameter(format!("unknown scale '{s}' (desk or full)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub recipe: Recipe,
    pub seed: u64,
    pub replicates: usize,
    /// MCMC sweeps; `sample_iters = 0` skips MCMC in `no-infill`.
    pub adapt_iters: usize,
    pub sample_iters: usize,
    /// Factor applied to the prior variances.
    pub prior_widening: f64,
}

impl ExperimentConfig {
    pub fn preset(recipe: Recipe, scale: Scale) -> Self {
        let full = scale == Scale::Full;
        let (replicates, iters) = match recipe {
            Recipe::SimStudy | Recipe::PriorRobustness => (if full { 150 } else { 20 }, if full { 100_000 } else { 20_000 }),
            Recipe::Capability => (1, 0),
            Recipe::NoInfill => (if full { 150 } else { 50 }, if full { 100_000 } else { 20_000 }),
            Recipe::PlsStudy => (if full { 100 } else { 10 }, 0),
            Recipe::LariVsRegularPls => (if full { 50 } else { 5 }, 0),
        };
        ExperimentConfig {
            recipe,
            seed: 2024,
            replicates,
            adapt_iters: iters,
            sample_iters: iters,
            prior_widening: if recipe == Recipe::PriorRobustness { 10.0 } else { 1.0 },
        }
    }

    pub fn desk(recipe: Recipe) -> Self {
        Self::preset(recipe, Scale::Desk)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Parameter("replicate count must be >= 1".into()));
        }
        if !(self.prior_widening > 0.0) {
            return Err(Error::Parameter(format!("prior widening must be > 0, got {}", self.prior_widening)));
        }
        Ok(())
    }

    fn mcmc(&self) -> MCMCConfig {
        MCMCConfig {
            adapt_iters: self.adapt_iters,
            sample_iters: self.sample_iters,
            ..MCMCConfig::default()
        }
    }

    fn priors(&self) -> Priors {
        Priors::default().widened(self.prior_widening)
    }

    /// Design comparison settings for `sim-study` and `prior-robustness`.
    pub fn compare_config(&self) -> CompareConfig {
        CompareConfig {
            replicates: self.replicates,
            seed: self.seed,
            mcmc: self.mcmc(),
            priors: self.priors(),
            ..CompareConfig::desk()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Simulate,
    Subsample,
    Fit,
    Diagnose,
    Compare,
    Write,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::Simulate => "simulate",
            Stage::Subsample => "subsample",
            Stage::Fit => "fit",
            Stage::Diagnose => "diagnose",
            Stage::Compare => "compare",
            Stage::Write => "write",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {error}")]
pub struct StageFailure {
    pub stage: Stage,
    #[source]
    pub error: Error,
}

pub type StageResult<T> = std::result::Result<T, StageFailure>;

trait AtStage<T> {
    fn at(self, stage: Stage) -> StageResult<T>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> StageResult<T> {
        self.map_err(|error| StageFailure { stage, error })
    }
}

/// Collects per-replicate results in order, reporting the lowest failing replicate.
fn ordered<T>(results: Vec<StageResult<T>>) -> StageResult<Vec<T>> {
    results.into_iter().collect()
}

fn sim_truth(sim: &QuadraticSimParams) -> TrueParams {
    TrueParams {
        alpha: sim.alpha,
        beta: sim.beta,
        sigma: sim.sigma,
    }
}

/// Same draws and rows as [`crate::diagnostics::design_compare`], with
/// failures attributed to a stage.
pub fn sim_study(cfg: &ExperimentConfig) -> StageResult<DesignComparisonReport> {
    cfg.validate().at(Stage::Simulate)?;
    let cc = cfg.compare_config();
    let truth = sim_truth(&cc.sim);
    let per_rep = (0..cc.replicates)
        .into_par_iter()
        .map(|replicate| {
            let rep = replicate as u64;
            let path = simulate_quadratic_ar2(&cc.sim, &mut substream(cc.seed, stream_id(rep, 0))).at(Stage::Simulate)?;
            cc.designs
                .iter()
                .enumerate()
                .map(|(d, design)| {
                    let d = d as u64;
                    let sub = design
                        .apply(&path, &mut substream(cc.seed, stream_id(rep, 1 + 2 * d)))
                        .at(Stage::Subsample)?;
                    let mut rng = substream(cc.seed, stream_id(rep, 2 + 2 * d));
                    let draws = run_mwg(&sub, &cc.priors, &cc.mcmc, &mut rng).at(Stage::Fit)?;
                    Ok(score_fit(replicate, design.name(), &draws, &sub, Some(truth), cc.level, cc.geweke_on_sigma2))
                })
                .collect::<StageResult<Vec<FitMetrics>>>()
        })
        .collect();
    let rows: Vec<FitMetrics> = ordered(per_rep)?.into_iter().flatten().collect();
    let summaries = summarize(&rows);
    Ok(DesignComparisonReport { rows, summaries })
}

#[derive(Debug, Clone, Serialize)]
pub struct CapabilityRun {
    pub replicate: usize,
    pub steps: StepSizeSummary,
    /// Mean step length of the high-motility group minus the low-motility group.
    pub mean_step_difference: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CapabilityReport {
    pub runs: Vec<CapabilityRun>,
    #[serde(skip)]
    pub paths: Vec<MovementPath>,
}

/// Drift toward −x everywhere, motility 20 above the x axis and 5 below.
pub fn capability_params() -> ModelParams {
    ModelParams::new(
        0.4,
        0.5,
        Surface::Analytic(AnalyticSurface::LinearX { c: 1.0 }),
        Surface::Analytic(AnalyticSurface::StepY {
            low: 5.0,
            high: 20.0,
            threshold: 0.0,
        }),
    )
    .expect("valid constants")
}

pub fn capability(cfg: &ExperimentConfig) -> StageResult<CapabilityReport> {
    cfg.validate().at(Stage::Simulate)?;
    let params = capability_params();
    let times: Vec<f64> = (0..1000).map(f64::from).collect();
    let mut runs = Vec::new();
    let mut paths = Vec::new();
    for replicate in 0..cfg.replicates {
        let mut rng = substream(cfg.seed, stream_id(replicate as u64, 0));
        let path = simulate_em(&params, &times, [[0.0, 0.0]; 2], &mut rng)
            .at(Stage::Simulate)?
            .with_id(format!("capability-{replicate}"));
        let steps = step_size_stats(&path, &params.motility, 30).at(Stage::Diagnose)?;
        let mean_of = |m: f64| steps.groups.iter().find(|g| g.motility == m).map_or(f64::NAN, |g| g.mean);
        runs.push(CapabilityRun {
            replicate,
            mean_step_difference: mean_of(20.0) - mean_of(5.0),
            steps,
        });
        paths.push(path);
    }
    Ok(CapabilityReport { runs, paths })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoInfillRow {
    pub replicate: usize,
    pub method: String,
    /// Ordered `α, β, σ²`.
    pub estimates: [f64; 3],
    pub ci: [[f64; 2]; 3],
    pub covers: [bool; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoInfillReport {
    pub rows: Vec<NoInfillRow>,
    /// Per method, the fraction of replicates whose interval covers `α, β, σ²`.
    pub coverage: Vec<(String, [f64; 3])>,
}

fn covers3(ci: &[[f64; 2]; 3], truth: [f64; 3]) -> [bool; 3] {
    std::array::from_fn(|i| ci[i][0] <= truth[i] && truth[i] <= ci[i][1])
}

/// Fits every other point of each simulated path by OLS and, unless
/// `sample_iters` is zero, by MCMC without latent positions.
pub fn no_infill(cfg: &ExperimentConfig) -> StageResult<NoInfillReport> {
    cfg.validate().at(Stage::Simulate)?;
    let sim = QuadraticSimParams::default();
    let truth = [sim.alpha, sim.beta, sim.sigma * sim.sigma];
    let with_mcmc = cfg.sample_iters > 0;
    let (mcmc, priors) = (cfg.mcmc(), cfg.priors());
    let per_rep = (0..cfg.replicates)
        .into_par_iter()
        .map(|replicate| {
            let rep = replicate as u64;
            let path = simulate_quadratic_ar2(&sim, &mut substream(cfg.seed, stream_id(rep, 0))).at(Stage::Simulate)?;
            let sub = subsample_regular(&path, 2.0 * sim.h).at(Stage::Subsample)?;
            let fit = build_whitened_quadratic(&sub.observed)
                .and_then(|rows| fit_ols(&rows, 0.95))
                .at(Stage::Fit)?;
            let estimates = [fit.coef[0], fit.coef[1], fit.sigma2];
            let ci = [fit.ci[0], fit.ci[1], fit.sigma2_ci];
            let mut rows = vec![NoInfillRow {
                replicate,
                method: "ols".into(),
                estimates,
                ci,
                covers: covers3(&ci, truth),
            }];
            if with_mcmc {
                let bare = Subsample {
                    observed: sub.observed.clone(),
                    unobserved_times: Vec::new(),
                    unobserved_truth: Some(Vec::new()),
                };
                let draws = run_mwg(&bare, &priors, &mcmc, &mut substream(cfg.seed, stream_id(rep, 1))).at(Stage::Fit)?;
                let sigma2 = draws.sigma2();
                let chains: [&[f64]; 3] = [&draws.alpha, &draws.beta, &sigma2];
                let ci = chains.map(|c| credible_interval(c, 0.95));
                rows.push(NoInfillRow {
                    replicate,
                    method: "mcmc".into(),
                    estimates: chains.map(|c| c.iter().sum::<f64>() / c.len() as f64),
                    ci,
                    covers: covers3(&ci, truth),
                });
            }
            Ok(rows)
        })
        .collect();
    let rows: Vec<NoInfillRow> = ordered(per_rep)?.into_iter().flatten().collect();
    let mut coverage = Vec::new();
    for method in ["ols", "mcmc"] {
        let sel: Vec<&NoInfillRow> = rows.iter().filter(|r| r.method == method).collect();
        if sel.is_empty() {
            continue;
        }
        let frac = std::array::from_fn(|i| sel.iter().filter(|r| r.covers[i]).count() as f64 / sel.len() as f64);
        coverage.push((method.to_string(), frac));
    }
    Ok(NoInfillReport { rows, coverage })
}

/// Linear motility `0.02y + 2`, quadratic potential centered at (50, 50),
/// analysed on a 50×50 grid of 2×2 cells.
#[derive(Debug, Clone)]
pub struct SurfaceStudy {
    pub params: ModelParams,
    pub grid: GriddedSurface,
    pub true_potential: GriddedSurface,
    pub true_motility: GriddedSurface,
    pub subset: CellSubset,
    pub n_paths: usize,
    pub n_steps: usize,
    pub init: [[f64; 2]; 2],
    /// Gradient rows compare positions one coordinate unit either side,
    /// which on 2×2 cells means adjacent cells.
    pub pls: PlsConfig,
}

impl Default for SurfaceStudy {
    fn default() -> Self {
        let potential = AnalyticSurface::Quadratic {
            k: 0.02,
            center: [50.0, 50.0],
        };
        let motility = AnalyticSurface::LinearY {
            slope: 0.02,
            intercept: 2.0,
        };
        let grid = GriddedSurface::filled(50, 50, [0.0, 0.0], 2.0, 0.0).expect("valid grid");
        SurfaceStudy {
            true_potential: GriddedSurface::from_fn(50, 50, [0.0, 0.0], 2.0, |r| potential.evaluate(r)).expect("valid grid"),
            true_motility: GriddedSurface::from_fn(50, 50, [0.0, 0.0], 2.0, |r| motility.evaluate(r)).expect("valid grid"),
            params: ModelParams::new(0.5, 1.0, Surface::Analytic(potential), Surface::Analytic(motility)).expect("valid constants"),
            grid,
            subset: CellSubset::Radius {
                center: [50.0, 50.0],
                radius: 23.0,
            },
            n_paths: 5,
            n_steps: 2000,
            init: [[50.0, 50.0]; 2],
            pls: PlsConfig {
                fd_step: Some(1.0),
                ..PlsConfig::default()
            },
        }
    }
}

/// Substream purposes below this are reserved; path attempts use the rest.
const PATH_PURPOSE_BASE: u64 = 16;

impl SurfaceStudy {
    /// Simulates `n_paths` paths, redrawing any path that leaves the grid.
    /// Returns the paths and the number of redraws.
    pub fn simulate(&self, seed: u64, replicate: usize) -> Result<(Vec<MovementPath>, usize)> {
        let times: Vec<f64> = (0..self.n_steps).map(|i| i as f64).collect();
        let mut paths = Vec::with_capacity(self.n_paths);
        let mut purpose = PATH_PURPOSE_BASE;
        while paths.len() < self.n_paths {
            if purpose > 0xff {
                return Err(Error::DomainExit { step: 0 });
            }
            let mut rng = substream(seed, stream_id(replicate as u64, purpose));
            purpose += 1;
            let path = simulate_em(&self.params, &times, self.init, &mut rng)?;
            if path.positions().iter().all(|&r| self.grid.active_index(r).is_some()) {
                paths.push(path.with_id(format!("run{replicate}-path{}", paths.len())));
            }
        }
        let redraws = (purpose - PATH_PURPOSE_BASE) as usize - self.n_paths;
        Ok((paths, redraws))
    }

    pub fn fraction_within_subset(&self, paths: &[MovementPath]) -> f64 {
        let CellSubset::Radius { center, radius } = &self.subset else {
            return f64::NAN;
        };
        let (mut inside, mut total) = (0usize, 0usize);
        for p in paths {
            for r in p.positions() {
                total += 1;
                if (r[0] - center[0]).hypot(r[1] - center[1]) <= *radius {
                    inside += 1;
                }
            }
        }
        inside as f64 / total as f64
    }

    pub fn score(&self, fit: &PLSFit) -> Result<(GradientMetrics, MotilityError)> {
        Ok((
            gradient_vector_metrics(&fit.p_hat, &self.true_potential, &self.subset)?,
            motility_error(&fit.m_hat, &self.true_motility, false, &self.subset)?,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlsRun {
    pub run: usize,
    pub beta_hat: f64,
    pub log_lambda: f64,
    pub smoothing_lambda: f64,
    pub gradient: GradientMetrics,
    pub motility: MotilityError,
    pub fraction_within_radius: f64,
    pub path_redraws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlsStudyReport {
    pub runs: Vec<PlsRun>,
    pub mean_angle_error: f64,
    pub runs_with_negative_magnitude_error: usize,
    pub runs_with_negative_motility_error: usize,
    pub mean_fraction_within_radius: f64,
    /// Fit of the first run, kept for surface output.
    #[serde(skip)]
    pub example: Option<PLSFit>,
}

pub fn pls_study(cfg: &ExperimentConfig) -> StageResult<PlsStudyReport> {
    cfg.validate().at(Stage::Simulate)?;
    let study = SurfaceStudy::default();
    let pls = &study.pls;
    let per_run = (0..cfg.replicates)
        .into_par_iter()
        .map(|run| {
            let (paths, path_redraws) = study.simulate(cfg.seed, run).at(Stage::Simulate)?;
            let mut rng = substream(cfg.seed, stream_id(run as u64, 1));
            let fit = fit_full(&paths, &study.grid, pls, &mut rng).at(Stage::Fit)?;
            let (gradient, motility) = study.score(&fit).at(Stage::Diagnose)?;
            let row = PlsRun {
                run,
                beta_hat: fit.beta_hat,
                log_lambda: fit.log_lambda,
                smoothing_lambda: fit.smoothing_lambda,
                gradient,
                motility,
                fraction_within_radius: study.fraction_within_subset(&paths),
                path_redraws,
            };
            Ok((row, (run == 0).then_some(fit)))
        })
        .collect();
    let mut runs = Vec::new();
    let mut example = None;
    for (row, fit) in ordered(per_run)? {
        runs.push(row);
        example = example.or(fit);
    }
    let n = runs.len() as f64;
    Ok(PlsStudyReport {
        mean_angle_error: runs.iter().map(|r| r.gradient.mean_angle_error).sum::<f64>() / n,
        runs_with_negative_magnitude_error: runs.iter().filter(|r| r.gradient.mean_magnitude_error < 0.0).count(),
        runs_with_negative_motility_error: runs.iter().filter(|r| r.motility.mean_signed < 0.0).count(),
        mean_fraction_within_radius: runs.iter().map(|r| r.fraction_within_radius).sum::<f64>() / n,
        runs,
        example,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignPlsRow {
    pub replicate: usize,
    pub design: String,
    pub n_observations: usize,
    pub log_lambda: f64,
    pub versus_truth: SurfaceScores,
    /// Against the fit to the full paths, as done when no truth is known.
    pub versus_full: Option<SurfaceScores>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurfaceScores {
    pub log_motility: MotilityError,
    pub gradient: GradientMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignPlsReport {
    pub rows: Vec<DesignPlsRow>,
}

fn surface_scores(fit: &PLSFit, potential: &GriddedSurface, motility: &GriddedSurface, subset: &CellSubset) -> Result<SurfaceScores> {
    Ok(SurfaceScores {
        log_motility: motility_error(&fit.m_hat, motility, true, subset)?,
        gradient: gradient_vector_metrics(&fit.p_hat, potential, subset)?,
    })
}

/// Fits the full paths and equal-size regular and LARI subsamples of them.
pub fn lari_vs_regular_pls(cfg: &ExperimentConfig) -> StageResult<DesignPlsReport> {
    cfg.validate().at(Stage::Simulate)?;
    let study = SurfaceStudy::default();
    let pls = &study.pls;
    let designs = [
        SamplingDesign::Regular { h: 5.0 },
        SamplingDesign::Lari { h: 5.0, resolution: None },
    ];
    let per_rep = (0..cfg.replicates)
        .into_par_iter()
        .map(|replicate| {
            let rep = replicate as u64;
            let (paths, _) = study.simulate(cfg.seed, replicate).at(Stage::Simulate)?;
            let full = fit_full(&paths, &study.grid, pls, &mut substream(cfg.seed, stream_id(rep, 1))).at(Stage::Fit)?;
            let mut rows = vec![DesignPlsRow {
                replicate,
                design: "full".into(),
                n_observations: paths.iter().map(MovementPath::len).sum(),
                log_lambda: full.log_lambda,
                versus_truth: surface_scores(&full, &study.true_potential, &study.true_motility, &study.subset).at(Stage::Diagnose)?,
                versus_full: None,
            }];
            for (d, design) in designs.iter().enumerate() {
                let d = d as u64;
                let mut rng = substream(cfg.seed, stream_id(rep, 2 + 2 * d));
                let observed: Vec<MovementPath> = paths
                    .iter()
                    .map(|p| design.apply(p, &mut rng).map(|s| s.observed))
                    .collect::<Result<_>>()
                    .at(Stage::Subsample)?;
                let fit = fit_full(&observed, &study.grid, pls, &mut substream(cfg.seed, stream_id(rep, 3 + 2 * d))).at(Stage::Fit)?;
                rows.push(DesignPlsRow {
                    replicate,
                    design: design.name().into(),
                    n_observations: observed.iter().map(MovementPath::len).sum(),
                    log_lambda: fit.log_lambda,
                    versus_truth: surface_scores(&fit, &study.true_potential, &study.true_motility, &study.subset).at(Stage::Diagnose)?,
                    versus_full: Some(surface_scores(&fit, &full.p_hat, &full.m_hat, &study.subset).at(Stage::Diagnose)?),
                });
            }
            Ok(rows)
        })
        .collect();
    Ok(DesignPlsReport {
        rows: ordered(per_rep)?.into_iter().flatten().collect(),
    })
}

/// Reproducibility record written next to every bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub status: String,
    pub failed_stage: Option<Stage>,
    pub error: Option<String>,
    pub files: Vec<String>,
    pub streams: String,
    pub tolerances: Vec<(String, f64)>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn manifest(cfg: &ExperimentConfig) -> RunManifest {
    RunManifest {
        tool: "lari".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        status: "complete".into(),
        failed_stage: None,
        error: None,
        files: Vec::new(),
        streams: "ChaCha20 substream (seed, replicate << 8 | purpose)".into(),
        tolerances: vec![
            ("geweke_abs_z".into(), 3.0),
            ("credible_level".into(), 0.95),
            ("holdout_fraction".into(), PlsConfig::default().holdout_fraction),
            ("metric_radius".into(), 23.0),
        ],
    }
}

/// `(file name, contents)` pairs of a bundle.
pub type Bundle = Vec<(String, Vec<u8>)>;

struct Table {
    w: csv::Writer<Vec<u8>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).expect("in-memory write");
        Table { w }
    }

    fn row(&mut self, cells: Vec<String>) {
        self.w.write_record(cells).expect("in-memory write");
    }

    fn finish(self) -> Vec<u8> {
        self.w.into_inner().expect("in-memory write")
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(v)?;
    out.push(b'\n');
    Ok(out)
}

fn paths_csv(paths: &[MovementPath]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_paths_csv(&mut out, paths)?;
    Ok(out)
}

fn grid_ascii(grid: &GriddedSurface) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    grid.write_ascii(&mut out)?;
    Ok(out)
}

/// Per-fit rows of a design comparison, one line per (replicate, design).
pub fn fits_csv(rows: &[FitMetrics]) -> Vec<u8> {
    let mut header = vec!["replicate".to_string(), "design".into(), "converged".into(), "covers_all".into()];
    for p in PARAM_NAMES {
        for f in ["mean", "ci_lo", "ci_hi", "ci_width", "covers", "pmse", "geweke_z"] {
            header.push(format!("{p}_{f}"));
        }
    }
    header.extend(["mspe_missing", "mspe_missing_mean", "mean_missing_ci_width", "param_acceptance", "position_acceptance"].map(String::from));
    let mut t = Table::new(&header.iter().map(String::as_str).collect::<Vec<_>>());
    for r in rows {
        let mut cells = vec![r.replicate.to_string(), r.design.clone(), r.converged.to_string(), r.covers_all.to_string()];
        for i in 0..3 {
            cells.extend([
                fmt_f64(r.means[i]),
                fmt_f64(r.ci[i][0]),
                fmt_f64(r.ci[i][1]),
                fmt_f64(r.ci_width[i]),
                r.covers[i].to_string(),
                fmt_f64(r.pmse[i]),
                opt(r.geweke[i]),
            ]);
        }
        cells.extend([
            opt(r.mspe_missing),
            opt(r.mspe_missing_mean),
            fmt_f64(r.mean_missing_ci_width),
            fmt_f64(r.param_acceptance),
            fmt_f64(r.position_acceptance),
        ]);
        t.row(cells);
    }
    t.finish()
}

/// Subset summaries of a design comparison as a plot-ready table.
pub fn summaries_csv(report: &DesignComparisonReport) -> Vec<u8> {
    let mut header = vec!["subset".to_string(), "design".into(), "count".into(), "convergence_rate".into(), "coverage_all".into()];
    for p in PARAM_NAMES {
        for f in ["coverage", "mean_ci_width", "mean_pmse"] {
            header.push(format!("{p}_{f}"));
        }
    }
    header.extend(["mean_mspe_missing", "median_mspe_missing", "mean_missing_ci_width"].map(String::from));
    let mut t = Table::new(&header.iter().map(String::as_str).collect::<Vec<_>>());
    for s in &report.summaries {
        let mut cells = vec![
            s.subset.clone(),
            s.design.clone(),
            s.count.to_string(),
            fmt_f64(s.convergence_rate),
            fmt_f64(s.coverage_all),
        ];
        for i in 0..3 {
            cells.extend([fmt_f64(s.coverage[i]), fmt_f64(s.mean_ci_width[i]), fmt_f64(s.mean_pmse[i])]);
        }
        cells.extend([fmt_f64(s.mean_mspe_missing), fmt_f64(s.median_mspe_missing), fmt_f64(s.mean_missing_ci_width)]);
        t.row(cells);
    }
    t.finish()
}

fn comparison_bundle(report: &DesignComparisonReport) -> Result<Bundle> {
    Ok(vec![
        ("comparison.json".into(), json(report)?),
        ("fits.csv".into(), fits_csv(&report.rows)),
        ("summaries.csv".into(), summaries_csv(report)),
    ])
}

fn capability_bundle(report: &CapabilityReport) -> Result<Bundle> {
    let mut t = Table::new(&["replicate", "motility", "bin_lo", "bin_hi", "count"]);
    for run in &report.runs {
        for g in &run.steps.groups {
            for (b, &c) in g.histogram.iter().enumerate() {
                t.row(vec![
                    run.replicate.to_string(),
                    fmt_f64(g.motility),
                    fmt_f64(run.steps.bin_edges[b]),
                    fmt_f64(run.steps.bin_edges[b + 1]),
                    c.to_string(),
                ]);
            }
        }
    }
    Ok(vec![
        ("capability.json".into(), json(report)?),
        ("paths.csv".into(), paths_csv(&report.paths)?),
        ("step_histograms.csv".into(), t.finish()),
    ])
}

fn no_infill_bundle(report: &NoInfillReport) -> Result<Bundle> {
    let mut t = Table::new(&["replicate", "method", "parameter", "estimate", "ci_lo", "ci_hi", "covers"]);
    for r in &report.rows {
        for (i, p) in PARAM_NAMES.iter().enumerate() {
            t.row(vec![
                r.replicate.to_string(),
                r.method.clone(),
                p.to_string(),
                fmt_f64(r.estimates[i]),
                fmt_f64(r.ci[i][0]),
                fmt_f64(r.ci[i][1]),
                r.covers[i].to_string(),
            ]);
        }
    }
    Ok(vec![("no_infill.json".into(), json(report)?), ("intervals.csv".into(), t.finish())])
}

fn pls_bundle(report: &PlsStudyReport) -> Result<Bundle> {
    let mut t = Table::new(&[
        "run",
        "beta_hat",
        "log_lambda",
        "smoothing_lambda",
        "mean_angle_error",
        "mean_magnitude_error",
        "msd",
        "mean_motility_error",
        "motility_mse",
        "fraction_within_radius",
    ]);
    for r in &report.runs {
        t.row(vec![
            r.run.to_string(),
            fmt_f64(r.beta_hat),
            fmt_f64(r.log_lambda),
            fmt_f64(r.smoothing_lambda),
            fmt_f64(r.gradient.mean_angle_error),
            fmt_f64(r.gradient.mean_magnitude_error),
            fmt_f64(r.gradient.msd),
            fmt_f64(r.motility.mean_signed),
            fmt_f64(r.motility.mse),
            fmt_f64(r.fraction_within_radius),
        ]);
    }
    let mut bundle = vec![("pls_study.json".into(), json(report)?), ("runs.csv".into(), t.finish())];
    if let Some(fit) = &report.example {
        let study = SurfaceStudy::default();
        bundle.push(("run0_potential.asc".into(), grid_ascii(&fit.p_hat)?));
        bundle.push(("run0_motility.asc".into(), grid_ascii(&fit.m_hat)?));
        bundle.push(("true_potential.asc".into(), grid_ascii(&crate::surfaces::center_surface(&study.true_potential))?));
        bundle.push(("true_motility.asc".into(), grid_ascii(&study.true_motility)?));
    }
    Ok(bundle)
}

fn design_pls_bundle(report: &DesignPlsReport) -> Result<Bundle> {
    let mut t = Table::new(&[
        "replicate",
        "design",
        "n_observations",
        "log_lambda",
        "truth_log_motility_mse",
        "truth_msd",
        "truth_mean_angle_error",
        "truth_mean_magnitude_error",
        "full_log_motility_mse",
        "full_msd",
        "full_mean_angle_error",
        "full_mean_magnitude_error",
    ]);
    for r in &report.rows {
        let mut cells = vec![
            r.replicate.to_string(),
            r.design.clone(),
            r.n_observations.to_string(),
            fmt_f64(r.log_lambda),
        ];
        for s in [Some(r.versus_truth), r.versus_full] {
            cells.extend([
                opt(s.map(|s| s.log_motility.mse)),
                opt(s.map(|s| s.gradient.msd)),
                opt(s.map(|s| s.gradient.mean_angle_error)),
                opt(s.map(|s| s.gradient.mean_magnitude_error)),
            ]);
        }
        t.row(cells);
    }
    Ok(vec![("design_pls.json".into(), json(report)?), ("fits.csv".into(), t.finish())])
}

/// Runs a recipe in memory.
pub fn run_bundle(cfg: &ExperimentConfig) -> StageResult<Bundle> {
    match cfg.recipe {
        Recipe::SimStudy | Recipe::PriorRobustness => comparison_bundle(&sim_study(cfg)?),
        Recipe::Capability => capability_bundle(&capability(cfg)?),
        Recipe::NoInfill => no_infill_bundle(&no_infill(cfg)?),
        Recipe::PlsStudy => pls_bundle(&pls_study(cfg)?),
        Recipe::LariVsRegularPls => design_pls_bundle(&lari_vs_regular_pls(cfg)?),
    }
    .at(Stage::Write)
}

/// Runs a recipe and writes its files plus [`MANIFEST_FILE`] into `out_dir`.
/// On failure the manifest records the failing stage and the error is returned.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> StageResult<RunManifest> {
    fs::create_dir_all(out_dir).map_err(Error::from).at(Stage::Write)?;
    let mut record = manifest(cfg);
    let result = run_bundle(cfg).and_then(|bundle| {
        for (name, bytes) in &bundle {
            fs::write(out_dir.join(name), bytes).map_err(Error::from).at(Stage::Write)?;
            record.files.push(name.clone());
        }
        Ok(())
    });
    if let Err(failure) = &result {
        record.status = "partial".into();
        record.failed_stage = Some(failure.stage);
        record.error = Some(failure.error.to_string());
    }
    fs::write(out_dir.join(MANIFEST_FILE), json(&record).at(Stage::Write)?)
        .map_err(Error::from)
        .at(Stage::Write)?;
    result.map(|()| record)
}
