//! Convergence diagnostics, accuracy metrics and the LARI-versus-regular
//! design comparison.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcmc::{credible_interval, run_mwg, MCMCConfig, PosteriorDraws, Priors};
use crate::rng::{stream_id, substream};
use crate::sampling::{SamplingDesign, Subsample};
use crate::sim::{simulate_quadratic_ar2, QuadraticSimParams};
use crate::stats::{mean, median};
use crate::surfaces::GriddedSurface;

/// Spectral density at frequency zero from an autoregressive fit.
///
/// Yule–Walker estimates via Levinson–Durbin recursion for every order up
/// to `len / 10`; the order minimizing AIC is used.
pub fn spectral_density_zero(xs: &[f64]) -> f64 {
    let n = xs.len();
    let m = mean(xs);
    let centered: Vec<f64> = xs.iter().map(|x| x - m).collect();
    let max_order = (n / 10).min(n.saturating_sub(1));
    let acov: Vec<f64> = (0..=max_order)
        .map(|k| centered[..n - k].iter().zip(&centered[k..]).map(|(a, b)| a * b).sum::<f64>() / n as f64)
        .collect();
    // rounding noise around a constant chain counts as zero variance
    if !(acov[0] > (1e-13 * m).powi(2)) {
        return 0.0;
    }
    let nf = n as f64;
    let mut phi: Vec<f64> = Vec::with_capacity(max_order);
    let mut err = acov[0];
    let mut best_aic = nf * err.ln();
    let mut best = (err, 0.0);
    for p in 1..=max_order {
        let num = acov[p] - phi.iter().enumerate().map(|(j, f)| f * acov[p - 1 - j]).sum::<f64>();
        let kappa = num / err;
        let prev = phi.clone();
        for j in 0..phi.len() {
            phi[j] = prev[j] - kappa * prev[prev.len() - 1 - j];
        }
        phi.push(kappa);
        err *= 1.0 - kappa * kappa;
        if !(err > 0.0) {
            break;
        }
        let aic = nf * err.ln() + 2.0 * p as f64;
        if aic < best_aic {
            best_aic = aic;
            best = (err, phi.iter().sum::<f64>());
        }
    }
    best.0 / (1.0 - best.1).powi(2)
}

/// Geweke z-score comparing the means of the first and last segments.
pub fn geweke_z(chain: &[f64], first_frac: f64, last_frac: f64) -> Result<f64> {
    if chain.len() < 20 {
        return Err(Error::TooShort { len: chain.len(), min: 20 });
    }
    if !(first_frac > 0.0 && last_frac > 0.0 && first_frac + last_frac <= 1.0) {
        return Err(Error::Parameter(format!(
            "segment fractions must be positive and non-overlapping, got {first_frac} and {last_frac}"
        )));
    }
    let n = chain.len();
    let na = ((first_frac * n as f64) as usize).max(2);
    let nb = ((last_frac * n as f64) as usize).max(2);
    let a = &chain[..na];
    let b = &chain[n - nb..];
    let se = (spectral_density_zero(a) / na as f64 + spectral_density_zero(b) / nb as f64).sqrt();
    if !(se > 0.0 && se.is_finite()) {
        return Err(Error::UndefinedZ("both segments have zero spectral density".into()));
    }
    Ok((mean(a) - mean(b)) / se)
}

/// Mean squared deviation of draws from the true value.
pub fn pmse(draws: &[f64], truth: f64) -> f64 {
    draws.iter().map(|d| (d - truth).powi(2)).sum::<f64>() / draws.len() as f64
}

/// Sum over unobserved points of the squared distance between posterior
/// mean and true position.
pub fn mspe_missing(posterior_mean: &[[f64; 2]], truth: Option<&[[f64; 2]]>) -> Result<f64> {
    let truth = truth.ok_or(Error::UnavailableTruth)?;
    if truth.len() != posterior_mean.len() {
        return Err(Error::Shape(format!(
            "{} posterior means but {} true positions",
            posterior_mean.len(),
            truth.len()
        )));
    }
    Ok(posterior_mean
        .iter()
        .zip(truth)
        .map(|(m, t)| (m[0] - t[0]).powi(2) + (m[1] - t[1]).powi(2))
        .sum())
}

pub fn ci_width(draws: &[f64], level: f64) -> f64 {
    let ci = credible_interval(draws, level);
    ci[1] - ci[0]
}

/// Mean interval width across all imputed coordinates; 0 with none.
pub fn mean_missing_ci_width(draws: &PosteriorDraws, level: f64) -> f64 {
    let ints = draws.position_intervals(level);
    if ints.is_empty() {
        return 0.0;
    }
    ints.iter().map(|c| (c[0][1] - c[0][0]) + (c[1][1] - c[1][0])).sum::<f64>() / (2 * ints.len()) as f64
}

/// Cells over which surface metrics are computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CellSubset {
    All,
    Mask { mask: Vec<bool> },
    Radius { center: [f64; 2], radius: f64 },
}

impl CellSubset {
    fn includes(&self, grid: &GriddedSurface, idx: usize) -> bool {
        match self {
            CellSubset::All => true,
            CellSubset::Mask { mask } => mask.get(idx).copied().unwrap_or(false),
            CellSubset::Radius { center, radius } => {
                let c = grid.center(idx);
                (c[0] - center[0]).hypot(c[1] - center[1]) <= *radius
            }
        }
    }
}

fn check_same_grid(a: &GriddedSurface, b: &GriddedSurface) -> Result<()> {
    if a.nx() != b.nx() || a.ny() != b.ny() || a.origin() != b.origin() || a.cell() != b.cell() || a.mask() != b.mask() {
        return Err(Error::Shape("surfaces differ in geometry or mask".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MotilityError {
    pub mse: f64,
    pub sse: f64,
    /// Mean of `estimate − reference`; negative means underestimation.
    pub mean_signed: f64,
    pub n_cells: usize,
}

/// Per-cell differences between two motility surfaces, on the log scale
/// when `log_scale` is set.
pub fn motility_error(
    estimate: &GriddedSurface,
    reference: &GriddedSurface,
    log_scale: bool,
    subset: &CellSubset,
) -> Result<MotilityError> {
    check_same_grid(estimate, reference)?;
    let diffs: Vec<f64> = estimate
        .active_cells()
        .iter()
        .filter(|&&i| subset.includes(estimate, i))
        .map(|&i| {
            let (a, b) = (estimate.values()[i], reference.values()[i]);
            if log_scale {
                a.ln() - b.ln()
            } else {
                a - b
            }
        })
        .collect();
    if diffs.is_empty() {
        return Err(Error::Shape("no active cells in the metric subset".into()));
    }
    let sse: f64 = diffs.iter().map(|d| d * d).sum();
    Ok(MotilityError {
        mse: sse / diffs.len() as f64,
        sse,
        mean_signed: mean(&diffs),
        n_cells: diffs.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradientMetrics {
    /// Mean squared distance between the tips of the two vectors.
    pub msd: f64,
    /// Mean signed angle difference in radians, wrapped to `(−π, π]`.
    pub mean_angle_error: f64,
    /// Mean of `|estimate| − |reference|`.
    pub mean_magnitude_error: f64,
    pub n_cells: usize,
    /// Cells left out of the angle mean because a vector is zero.
    pub n_angle_excluded: usize,
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut w = a % two_pi;
    if w <= -std::f64::consts::PI {
        w += two_pi;
    } else if w > std::f64::consts::PI {
        w -= two_pi;
    }
    w
}

/// Compares the negative-gradient fields of two potential surfaces at the
/// cell centers in `subset`.
pub fn gradient_vector_metrics(
    estimate: &GriddedSurface,
    reference: &GriddedSurface,
    subset: &CellSubset,
) -> Result<GradientMetrics> {
    check_same_grid(estimate, reference)?;
    let fd = estimate.cell();
    let (mut sq, mut mag, mut ang) = (0.0, 0.0, 0.0);
    let (mut n, mut n_ang) = (0usize, 0usize);
    for &i in estimate.active_cells() {
        if !subset.includes(estimate, i) {
            continue;
        }
        let c = estimate.center(i);
        let ge = estimate.gradient_one_sided(c, fd)?;
        let gr = reference.gradient_one_sided(c, fd)?;
        let (e, r) = ([-ge[0], -ge[1]], [-gr[0], -gr[1]]);
        sq += (e[0] - r[0]).powi(2) + (e[1] - r[1]).powi(2);
        let (le, lr) = (e[0].hypot(e[1]), r[0].hypot(r[1]));
        mag += le - lr;
        if le > 0.0 && lr > 0.0 {
            ang += wrap_angle(e[1].atan2(e[0]) - r[1].atan2(r[0]));
            n_ang += 1;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Shape("no active cells in the metric subset".into()));
    }
    Ok(GradientMetrics {
        msd: sq / n as f64,
        mean_angle_error: if n_ang > 0 { ang / n_ang as f64 } else { 0.0 },
        mean_magnitude_error: mag / n as f64,
        n_cells: n,
        n_angle_excluded: n - n_ang,
    })
}

/// Known parameter values of a synthetic replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueParams {
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
}

/// Metrics of one fitted subsample; parameter arrays are ordered `α, β, σ²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetrics {
    pub replicate: usize,
    pub design: String,
    /// `None` where the z-score is undefined.
    pub geweke: [Option<f64>; 3],
    pub converged: bool,
    pub means: [f64; 3],
    pub ci: [[f64; 2]; 3],
    pub ci_width: [f64; 3],
    pub covers: [bool; 3],
    pub covers_all: bool,
    pub pmse: [f64; 3],
    pub mspe_missing: Option<f64>,
    pub mspe_missing_mean: Option<f64>,
    pub mean_missing_ci_width: f64,
    pub param_acceptance: f64,
    pub position_acceptance: f64,
}

pub const PARAM_NAMES: [&str; 3] = ["alpha", "beta", "sigma2"];

/// Scores one posterior against the truth. With `geweke_on_sigma2` unset the
/// third Geweke score uses the `σ` chain instead.
pub fn score_fit(
    replicate: usize,
    design: &str,
    draws: &PosteriorDraws,
    subsample: &Subsample,
    truth: Option<TrueParams>,
    level: f64,
    geweke_on_sigma2: bool,
) -> FitMetrics {
    let sigma2 = draws.sigma2();
    let chains: [&[f64]; 3] = [&draws.alpha, &draws.beta, &sigma2];
    let geweke_third: &[f64] = if geweke_on_sigma2 { &sigma2 } else { &draws.sigma };
    let geweke = [chains[0], chains[1], geweke_third].map(|c| geweke_z(c, 0.1, 0.5).ok());
    let converged = geweke.iter().all(|z| z.is_some_and(|z| z.abs() < 3.0));
    let ci = chains.map(|c| credible_interval(c, level));
    let truth_vals = truth.map(|t| [t.alpha, t.beta, t.sigma * t.sigma]);
    let covers = match truth_vals {
        Some(tv) => [0, 1, 2].map(|k| ci[k][0] <= tv[k] && tv[k] <= ci[k][1]),
        None => [false; 3],
    };
    let pmse_vals = match truth_vals {
        Some(tv) => [0, 1, 2].map(|k| pmse(chains[k], tv[k])),
        None => [f64::NAN; 3],
    };
    let mspe = mspe_missing(&draws.position_mean, subsample.unobserved_truth.as_deref()).ok();
    let n_missing = draws.position_mean.len();
    FitMetrics {
        replicate,
        design: design.to_string(),
        geweke,
        converged,
        means: chains.map(mean),
        ci,
        ci_width: ci.map(|c| c[1] - c[0]),
        covers,
        covers_all: truth.is_some() && covers.iter().all(|&c| c),
        pmse: pmse_vals,
        mspe_missing: mspe,
        mspe_missing_mean: mspe.filter(|_| n_missing > 0).map(|s| s / n_missing as f64),
        mean_missing_ci_width: mean_missing_ci_width(draws, level),
        param_acceptance: draws.param_acceptance,
        position_acceptance: draws.position_acceptance,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareConfig {
    pub replicates: usize,
    pub seed: u64,
    pub sim: QuadraticSimParams,
    pub designs: Vec<SamplingDesign>,
    pub mcmc: MCMCConfig,
    pub priors: Priors,
    pub level: f64,
    pub geweke_on_sigma2: bool,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl CompareConfig {
    pub fn desk() -> Self {
        CompareConfig {
            replicates: 20,
            seed: 2024,
            sim: QuadraticSimParams::default(),
            designs: vec![
                SamplingDesign::Regular { h: 5.0 },
                SamplingDesign::Lari { h: 5.0, resolution: None },
            ],
            mcmc: MCMCConfig::desk(),
            priors: Priors::default(),
            level: 0.95,
            geweke_on_sigma2: true,
        }
    }

    pub fn full() -> Self {
        CompareConfig {
            replicates: 150,
            mcmc: MCMCConfig::default(),
            ..Self::desk()
        }
    }
}

/// Summary of one design within one subset of replicates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetSummary {
    pub subset: String,
    pub design: String,
    pub count: usize,
    pub convergence_rate: f64,
    pub coverage_all: f64,
    pub coverage: [f64; 3],
    pub mean_ci_width: [f64; 3],
    pub mean_pmse: [f64; 3],
    pub mean_mspe_missing: f64,
    pub median_mspe_missing: f64,
    pub mean_missing_ci_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignComparisonReport {
    pub rows: Vec<FitMetrics>,
    pub summaries: Vec<SubsetSummary>,
}

impl DesignComparisonReport {
    pub fn summary(&self, subset: &str, design: &str) -> Option<&SubsetSummary> {
        self.summaries.iter().find(|s| s.subset == subset && s.design == design)
    }
}

fn mean_or_nan(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        mean(xs)
    }
}

/// Builds the `all`, `converged` and `best_case` summaries. A replicate is
/// in `converged` when every design converged, and in `best_case` when in
/// addition every design covers all three parameters.
pub fn summarize(rows: &[FitMetrics]) -> Vec<SubsetSummary> {
    let mut designs: Vec<&str> = Vec::new();
    for r in rows {
        if !designs.contains(&r.design.as_str()) {
            designs.push(&r.design);
        }
    }
    let mut reps: Vec<usize> = rows.iter().map(|r| r.replicate).collect();
    reps.sort_unstable();
    reps.dedup();
    let of_rep = |rep: usize| rows.iter().filter(move |r| r.replicate == rep);
    let converged: Vec<usize> = reps.iter().copied().filter(|&k| of_rep(k).all(|r| r.converged)).collect();
    let best: Vec<usize> = converged.iter().copied().filter(|&k| of_rep(k).all(|r| r.covers_all)).collect();

    let mut out = Vec::new();
    for (name, keep) in [("all", &reps), ("converged", &converged), ("best_case", &best)] {
        for &d in &designs {
            let sel: Vec<&FitMetrics> = rows.iter().filter(|r| r.design == d && keep.contains(&r.replicate)).collect();
            let all_d: Vec<&FitMetrics> = rows.iter().filter(|r| r.design == d).collect();
            let frac = |f: &dyn Fn(&FitMetrics) -> bool| {
                if sel.is_empty() {
                    f64::NAN
                } else {
                    sel.iter().filter(|r| f(r)).count() as f64 / sel.len() as f64
                }
            };
            let col = |f: &dyn Fn(&FitMetrics) -> f64| -> Vec<f64> { sel.iter().map(|r| f(r)).filter(|v| v.is_finite()).collect() };
            let mspe = col(&|r| r.mspe_missing.unwrap_or(f64::NAN));
            out.push(SubsetSummary {
                subset: name.to_string(),
                design: d.to_string(),
                count: sel.len(),
                convergence_rate: all_d.iter().filter(|r| r.converged).count() as f64 / all_d.len().max(1) as f64,
                coverage_all: frac(&|r| r.covers_all),
                coverage: [0, 1, 2].map(|k| frac(&|r| r.covers[k])),
                mean_ci_width: [0, 1, 2].map(|k| mean_or_nan(&col(&|r| r.ci_width[k]))),
                mean_pmse: [0, 1, 2].map(|k| mean_or_nan(&col(&|r| r.pmse[k]))),
                mean_mspe_missing: mean_or_nan(&mspe),
                median_mspe_missing: if mspe.is_empty() { f64::NAN } else { median(&mspe) },
                mean_missing_ci_width: mean_or_nan(&col(&|r| r.mean_missing_ci_width)),
            });
        }
    }
    out
}

/// Simulates, subsamples under every design, fits and scores one replicate.
pub fn run_replicate(cfg: &CompareConfig, replicate: usize) -> Result<Vec<FitMetrics>> {
    let rep = replicate as u64;
    let path = simulate_quadratic_ar2(&cfg.sim, &mut substream(cfg.seed, stream_id(rep, 0)))?;
    let truth = TrueParams {
        alpha: cfg.sim.alpha,
        beta: cfg.sim.beta,
        sigma: cfg.sim.sigma,
    };
    cfg.designs
        .iter()
        .enumerate()
        .map(|(d, design)| {
            let d = d as u64;
            let sub = design.apply(&path, &mut substream(cfg.seed, stream_id(rep, 1 + 2 * d)))?;
            let mut rng = substream(cfg.seed, stream_id(rep, 2 + 2 * d));
            let draws = run_mwg(&sub, &cfg.priors, &cfg.mcmc, &mut rng)?;
            Ok(score_fit(replicate, design.name(), &draws, &sub, Some(truth), cfg.level, cfg.geweke_on_sigma2))
        })
        .collect()
}

/// Runs every replicate under every design; rows are ordered by replicate
/// then design regardless of scheduling.
pub fn design_compare(cfg: &CompareConfig) -> Result<DesignComparisonReport> {
    if cfg.replicates == 0 {
        return Err(Error::Parameter("at least one replicate is required".into()));
    }
    let per_rep: Vec<Vec<FitMetrics>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| run_replicate(cfg, r))
        .collect::<Result<_>>()?;
    let rows: Vec<FitMetrics> = per_rep.into_iter().flatten().collect();
    let summaries = summarize(&rows);
    Ok(DesignComparisonReport { rows, summaries })
}
