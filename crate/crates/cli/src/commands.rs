use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use serde::{Deserialize, Serialize};

use lari_core::diagnostics::{
    design_compare, geweke_z, gradient_vector_metrics, motility_error, pmse, score_fit, CellSubset, CompareConfig,
    GradientMetrics, MotilityError, TrueParams, PARAM_NAMES,
};
use lari_core::experiment::{
    capability, fits_csv, run_experiment as run_recipe, summaries_csv, ExperimentConfig, Recipe, RunManifest,
    SurfaceStudy,
};
use lari_core::fmt_f64;
use lari_core::mcmc::{credible_interval, run_mwg, MCMCConfig, Priors};
use lari_core::ols::{build_whitened_quadratic, build_whitened_sign, fit_ols as ols_fit, DriftModel, OlsReport, WhitenedRows};
use lari_core::path::{read_paths_csv, write_paths_csv};
use lari_core::pls::{fit_full, LambdaScore, PlsConfig, SolverStats};
use lari_core::rng::{stream_id, substream};
use lari_core::sampling::{SamplingDesign, Subsample};
use lari_core::sim::{simulate_quadratic_ar2, QuadraticSimParams};
use lari_core::stats::mean;
use lari_core::surfaces::GriddedSurface;
use lari_core::MovementPath;

use crate::config::{layered, write_json};
use crate::{
    CompareArgs, DesignKind, DiagnoseArgs, FitMcmcArgs, FitOlsArgs, FitPlsArgs, ModelKind, RunExperimentArgs,
    SimulateArgs, SubsampleArgs, UsageError,
};

fn read_paths(path: &Path) -> Result<Vec<MovementPath>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_paths_csv(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn read_single_path(path: &Path) -> Result<MovementPath> {
    let mut paths = read_paths(path)?;
    if paths.len() != 1 {
        return Err(anyhow!("{} holds {} paths; expected exactly one", path.display(), paths.len()));
    }
    Ok(paths.remove(0))
}

fn read_grid(path: &Path) -> Result<GriddedSurface> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    GriddedSurface::read_ascii(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn write_grid(path: &Path, grid: &GriddedSurface) -> Result<()> {
    let mut out = Vec::new();
    grid.write_ascii(&mut out)?;
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn write_paths(path: &Path, paths: &[MovementPath]) -> Result<()> {
    let mut out = Vec::new();
    write_paths_csv(&mut out, paths)?;
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(UsageError(format!("--level must be in (0, 1), got {level}")).into());
    }
    Ok(())
}

fn table(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| anyhow!("{e}"))
}

fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let header: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    fs::write(path, table(&header, rows)?).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize, Deserialize)]
#[serde(default)]
struct SimulateConfig {
    recipe: Recipe,
    seed: u64,
    replicates: usize,
    sim: QuadraticSimParams,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            recipe: Recipe::SimStudy,
            seed: 2024,
            replicates: 1,
            sim: QuadraticSimParams::default(),
        }
    }
}

#[derive(Serialize)]
struct SimulateManifest<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a SimulateConfig,
    files: Vec<String>,
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let mut cfg = layered(SimulateConfig::default(), a.config.as_deref())?;
    cfg.recipe = a.recipe.unwrap_or(cfg.recipe);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.replicates = a.replicates.unwrap_or(cfg.replicates);
    cfg.sim.beta = a.beta.unwrap_or(cfg.sim.beta);
    cfg.sim.alpha = a.alpha.unwrap_or(cfg.sim.alpha);
    cfg.sim.sigma = a.sigma.unwrap_or(cfg.sim.sigma);
    cfg.sim.n = a.n.unwrap_or(cfg.sim.n);
    cfg.sim.h = a.h.unwrap_or(cfg.sim.h);
    if cfg.replicates == 0 {
        return Err(UsageError("--replicates must be >= 1".into()).into());
    }
    create_dir(&a.out)?;
    let mut files = Vec::new();
    let mut emit = |name: String, paths: &[MovementPath]| -> Result<()> {
        write_paths(&a.out.join(&name), paths)?;
        files.push(name);
        Ok(())
    };
    match cfg.recipe {
        Recipe::SimStudy | Recipe::PriorRobustness | Recipe::NoInfill => {
            for r in 0..cfg.replicates {
                let path = simulate_quadratic_ar2(&cfg.sim, &mut substream(cfg.seed, stream_id(r as u64, 0)))?
                    .with_id(format!("rep{r}"));
                emit(format!("path_{r:03}.csv"), &[path])?;
            }
        }
        Recipe::PlsStudy | Recipe::LariVsRegularPls => {
            let study = SurfaceStudy::default();
            for r in 0..cfg.replicates {
                let (paths, _) = study.simulate(cfg.seed, r)?;
                for (k, p) in paths.iter().enumerate() {
                    emit(format!("run{r:03}_path{k}.csv"), std::slice::from_ref(p))?;
                }
            }
        }
        Recipe::Capability => {
            let ecfg = ExperimentConfig {
                seed: cfg.seed,
                replicates: cfg.replicates,
                ..ExperimentConfig::desk(Recipe::Capability)
            };
            let report = capability(&ecfg)?;
            for (r, p) in report.paths.iter().enumerate() {
                emit(format!("path_{r:03}.csv"), std::slice::from_ref(p))?;
            }
        }
    }
    let manifest = SimulateManifest {
        tool: "lari",
        version: env!("CARGO_PKG_VERSION"),
        config: &cfg,
        files,
    };
    write_json(&a.out.join("manifest.json"), &manifest)?;
    eprintln!("wrote {} path files to {}", manifest.files.len(), a.out.display());
    Ok(())
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn subsample(a: SubsampleArgs) -> Result<()> {
    let design = match a.design {
        DesignKind::Regular => SamplingDesign::Regular { h: a.h },
        DesignKind::Lari => SamplingDesign::Lari {
            h: a.h,
            resolution: a.resolution,
        },
    };
    let paths = read_paths(&a.input)?;
    let mut observed = Vec::with_capacity(paths.len());
    let mut unobs_rows = Vec::new();
    for (i, p) in paths.iter().enumerate() {
        let sub = design.apply(p, &mut substream(a.seed, stream_id(i as u64, 1)))?;
        if let Some(truth) = &sub.unobserved_truth {
            for (t, r) in sub.unobserved_times.iter().zip(truth) {
                unobs_rows.push(vec![p.id().to_string(), fmt_f64(*t), fmt_f64(r[0]), fmt_f64(r[1])]);
            }
        }
        observed.push(sub.observed);
    }
    let obs_path = with_suffix(&a.out, "_obs.csv");
    let unobs_path = with_suffix(&a.out, "_unobs.csv");
    if let Some(parent) = obs_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_paths(&obs_path, &observed)?;
    write_table(&unobs_path, &["id", "time", "x", "y"], &unobs_rows)?;
    eprintln!(
        "{} observed and {} unobserved points",
        observed.iter().map(MovementPath::len).sum::<usize>(),
        unobs_rows.len()
    );
    Ok(())
}

pub fn fit_ols(a: FitOlsArgs) -> Result<()> {
    check_level(a.level)?;
    let model = match (a.model, a.attractor) {
        (ModelKind::Quadratic, _) => DriftModel::Quadratic,
        (ModelKind::Sign, Some(attractor)) => DriftModel::Sign { attractor },
        (ModelKind::Sign, None) => return Err(UsageError("--model sign needs --attractor X,Y".into()).into()),
    };
    let paths = read_paths(&a.input)?;
    let mut rows: Option<WhitenedRows> = None;
    for p in &paths {
        let r = match model {
            DriftModel::Quadratic => build_whitened_quadratic(p)?,
            DriftModel::Sign { attractor } => build_whitened_sign(p, attractor)?,
        };
        match rows.as_mut() {
            Some(acc) => acc.append(r)?,
            None => rows = Some(r),
        }
    }
    let rows = rows.ok_or_else(|| anyhow!("{} holds no paths", a.input.display()))?;
    let fit = ols_fit(&rows, a.level)?;
    let report = OlsReport::new(model, &fit);
    match &a.out {
        Some(out) => write_json(out, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

#[derive(Default, Serialize, Deserialize)]
#[serde(default)]
struct McmcFileConfig {
    mcmc: MCMCConfig,
    priors: Priors,
}

/// Times strictly between consecutive observations, every `dt` from the earlier one.
fn infill_times(times: &[f64], dt: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for w in times.windows(2) {
        let gap = w[1] - w[0];
        let tol = 1e-9 * gap.max(1.0);
        let mut k = 1;
        loop {
            let t = w[0] + k as f64 * dt;
            if t >= w[1] - tol {
                break;
            }
            out.push(t);
            k += 1;
        }
    }
    out
}

#[derive(Serialize)]
struct McmcSummary {
    means: BTreeMap<&'static str, f64>,
    ci: BTreeMap<&'static str, [f64; 2]>,
    geweke: BTreeMap<&'static str, Option<f64>>,
    converged: bool,
    param_acceptance: f64,
    position_acceptance: f64,
    stuck: bool,
    n_latent: usize,
    mspe_missing: Option<f64>,
    covers: Option<BTreeMap<&'static str, bool>>,
    pmse: Option<BTreeMap<&'static str, f64>>,
    level: f64,
    mcmc: MCMCConfig,
    priors: Priors,
}

pub fn fit_mcmc(a: FitMcmcArgs) -> Result<()> {
    check_level(a.level)?;
    let mut cfg = layered(McmcFileConfig::default(), a.config.as_deref())?;
    cfg.mcmc.adapt_iters = a.adapt.unwrap_or(cfg.mcmc.adapt_iters);
    cfg.mcmc.sample_iters = a.sample.unwrap_or(cfg.mcmc.sample_iters);
    cfg.mcmc.seed = a.seed.unwrap_or(cfg.mcmc.seed);
    let observed = read_single_path(&a.obs)?;
    let (unobserved_times, unobserved_truth) = match (&a.unobs, a.dt) {
        (Some(_), Some(_)) => return Err(UsageError("use either --unobs or --dt, not both".into()).into()),
        (Some(u), None) => {
            let p = read_single_path(u)?;
            (p.times().to_vec(), Some(p.positions().to_vec()))
        }
        (None, Some(dt)) if dt > 0.0 => (infill_times(observed.times(), dt), None),
        (None, Some(dt)) => return Err(UsageError(format!("--dt must be > 0, got {dt}")).into()),
        (None, None) => (Vec::new(), None),
    };
    let truth = match a.truth.as_deref() {
        Some(&[alpha, beta, sigma]) => Some(TrueParams { alpha, beta, sigma }),
        Some(_) => return Err(UsageError("--truth takes alpha,beta,sigma".into()).into()),
        None => None,
    };
    let sub = Subsample {
        observed,
        unobserved_times,
        unobserved_truth,
    };
    let draws = run_mwg(&sub, &cfg.priors, &cfg.mcmc, &mut substream(cfg.mcmc.seed, 0))?;
    let metrics = score_fit(0, "input", &draws, &sub, truth, a.level, true);
    create_dir(&a.out)?;

    let sigma2 = draws.sigma2();
    let rows: Vec<Vec<String>> = (0..draws.alpha.len())
        .map(|i| {
            vec![
                i.to_string(),
                fmt_f64(draws.alpha[i]),
                fmt_f64(draws.beta[i]),
                fmt_f64(draws.sigma[i]),
                fmt_f64(sigma2[i]),
            ]
        })
        .collect();
    write_table(&a.out.join("draws.csv"), &["iteration", "alpha", "beta", "sigma", "sigma2"], &rows)?;

    if !draws.latent_times.is_empty() {
        let mut header = vec!["sweep".to_string()];
        for t in &draws.latent_times {
            header.push(format!("x_{t}"));
            header.push(format!("y_{t}"));
        }
        let rows: Vec<Vec<String>> = draws
            .position_draws
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let mut r = vec![(i * cfg.mcmc.position_thin).to_string()];
                for p in d {
                    r.push(fmt_f64(p[0]));
                    r.push(fmt_f64(p[1]));
                }
                r
            })
            .collect();
        fs::write(a.out.join("position_draws.csv"), table(&header, &rows)?)?;

        let intervals = draws.position_intervals(a.level);
        let rows: Vec<Vec<String>> = (0..draws.latent_times.len())
            .map(|k| {
                let m = draws.position_mean[k];
                let iv = intervals[k];
                let tr = sub.unobserved_truth.as_ref().map(|t| t[k]);
                vec![
                    fmt_f64(draws.latent_times[k]),
                    fmt_f64(m[0]),
                    fmt_f64(m[1]),
                    fmt_f64(iv[0][0]),
                    fmt_f64(iv[0][1]),
                    fmt_f64(iv[1][0]),
                    fmt_f64(iv[1][1]),
                    tr.map(|r| fmt_f64(r[0])).unwrap_or_default(),
                    tr.map(|r| fmt_f64(r[1])).unwrap_or_default(),
                ]
            })
            .collect();
        write_table(
            &a.out.join("positions.csv"),
            &["time", "mean_x", "mean_y", "lo_x", "hi_x", "lo_y", "hi_y", "true_x", "true_y"],
            &rows,
        )?;
    }

    let named = |v: [f64; 3]| -> BTreeMap<&'static str, f64> { PARAM_NAMES.iter().copied().zip(v).collect() };
    let summary = McmcSummary {
        means: named(metrics.means),
        ci: PARAM_NAMES.iter().copied().zip(metrics.ci).collect(),
        geweke: PARAM_NAMES.iter().copied().zip(metrics.geweke).collect(),
        converged: metrics.converged,
        param_acceptance: draws.param_acceptance,
        position_acceptance: draws.position_acceptance,
        stuck: draws.stuck,
        n_latent: draws.latent_times.len(),
        mspe_missing: metrics.mspe_missing,
        covers: truth.map(|_| PARAM_NAMES.iter().copied().zip(metrics.covers).collect()),
        pmse: truth.map(|_| named(metrics.pmse)),
        level: a.level,
        mcmc: cfg.mcmc,
        priors: cfg.priors,
    };
    write_json(&a.out.join("summary.json"), &summary)?;
    eprintln!(
        "acceptance {:.3} (parameters), {:.3} (positions); converged: {}",
        draws.param_acceptance, draws.position_acceptance, metrics.converged
    );
    Ok(())
}

#[derive(Serialize)]
struct PlsReport<'a> {
    beta: f64,
    lambda: f64,
    log_lambda: f64,
    smoothing_lambda: f64,
    mspe_curve: &'a [LambdaScore],
    solver: &'a SolverStats,
    n_train_rows: usize,
    n_holdout_rows: usize,
    warnings: &'a [String],
    config: &'a PlsConfig,
}

pub fn fit_pls(a: FitPlsArgs) -> Result<()> {
    let mut cfg = layered(PlsConfig::default(), a.config.as_deref())?;
    cfg.holdout_fraction = a.holdout.unwrap_or(cfg.holdout_fraction);
    if a.fd_step.is_some() {
        cfg.fd_step = a.fd_step;
    }
    if let Some(ll) = a.log_lambda {
        cfg.log_lambdas = ll;
    }
    let grid = match (&a.grid, a.nx, a.ny, a.cell) {
        (Some(g), ..) => read_grid(g)?,
        (None, Some(nx), Some(ny), Some(cell)) => GriddedSurface::filled(nx, ny, a.origin.unwrap_or([0.0, 0.0]), cell, 0.0)
            .map_err(|e| UsageError(format!("grid flags: {e}")))?,
        _ => return Err(UsageError("give --grid FILE or all of --nx --ny --cell".into()).into()),
    };
    let mut paths = Vec::new();
    for input in &a.input {
        paths.extend(read_paths(input)?);
    }
    let fit = fit_full(&paths, &grid, &cfg, &mut substream(a.seed, 0))?;
    for w in &fit.warnings {
        eprintln!("warning: {w}");
    }
    create_dir(&a.out)?;
    write_grid(&a.out.join("p_hat.asc"), &fit.p_hat)?;
    write_grid(&a.out.join("m_hat.asc"), &fit.m_hat)?;
    let rows: Vec<Vec<String>> = fit
        .mspe_curve
        .iter()
        .map(|s| vec![fmt_f64(s.log_lambda), fmt_f64(s.lambda), fmt_f64(s.mspe)])
        .collect();
    write_table(&a.out.join("mspe_curve.csv"), &["log_lambda", "lambda", "mspe"], &rows)?;
    write_json(
        &a.out.join("report.json"),
        &PlsReport {
            beta: fit.beta_hat,
            lambda: fit.lambda,
            log_lambda: fit.log_lambda,
            smoothing_lambda: fit.smoothing_lambda,
            mspe_curve: &fit.mspe_curve,
            solver: &fit.stats,
            n_train_rows: fit.n_train_rows,
            n_holdout_rows: fit.n_holdout_rows,
            warnings: &fit.warnings,
            config: &cfg,
        },
    )?;
    eprintln!("beta {:.6}, log lambda {}", fit.beta_hat, fit.log_lambda);
    Ok(())
}

#[derive(Serialize)]
struct ChainDiagnostics {
    name: String,
    n: usize,
    mean: f64,
    ci: [f64; 2],
    ci_width: f64,
    geweke_z: Option<f64>,
    truth: Option<f64>,
    covers: Option<bool>,
    pmse: Option<f64>,
}

#[derive(Serialize, Default)]
struct DiagnoseReport {
    chains: Vec<ChainDiagnostics>,
    gradient: Option<GradientMetrics>,
    motility: Option<MotilityError>,
}

fn read_columns(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let names: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        for (k, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|e| lari_core::Error::Parse {
                line,
                msg: format!("column `{}` = `{field}`: {e}", names[k]),
            })?;
            cols[k].push(v);
        }
    }
    Ok(names.into_iter().zip(cols).collect())
}

pub fn diagnose(a: DiagnoseArgs) -> Result<()> {
    check_level(a.level)?;
    if a.draws.is_none() && a.p_hat.is_none() && a.m_hat.is_none() {
        return Err(UsageError("nothing to diagnose: give --draws, --p-hat/--p-ref or --m-hat/--m-ref".into()).into());
    }
    let mut truth = BTreeMap::new();
    for t in &a.truth {
        let (k, v) = t
            .split_once('=')
            .ok_or_else(|| UsageError(format!("--truth expects name=value, got '{t}'")))?;
        let v: f64 = v.parse().map_err(|e| UsageError(format!("--truth {t}: {e}")))?;
        truth.insert(k.to_string(), v);
    }
    create_dir(&a.out)?;
    let mut report = DiagnoseReport::default();
    if let Some(draws) = &a.draws {
        let mut hist_rows = Vec::new();
        let mut interval_rows = Vec::new();
        for (name, xs) in read_columns(draws)? {
            if matches!(name.as_str(), "iteration" | "sweep") || xs.is_empty() {
                continue;
            }
            let ci = credible_interval(&xs, a.level);
            let tv = truth.get(&name).copied();
            let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let bins = a.bins.max(1);
            let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
            let mut counts = vec![0usize; bins];
            for &x in &xs {
                counts[(((x - lo) / width) as usize).min(bins - 1)] += 1;
            }
            for (b, c) in counts.iter().enumerate() {
                hist_rows.push(vec![
                    name.clone(),
                    fmt_f64(lo + b as f64 * width),
                    fmt_f64(lo + (b + 1) as f64 * width),
                    c.to_string(),
                ]);
            }
            let m = mean(&xs);
            interval_rows.push(vec![
                name.clone(),
                fmt_f64(m),
                fmt_f64(ci[0]),
                fmt_f64(ci[1]),
                fmt_f64(ci[1] - ci[0]),
                tv.map(fmt_f64).unwrap_or_default(),
            ]);
            report.chains.push(ChainDiagnostics {
                n: xs.len(),
                mean: m,
                ci,
                ci_width: ci[1] - ci[0],
                geweke_z: geweke_z(&xs, 0.1, 0.5).ok(),
                truth: tv,
                covers: tv.map(|t| ci[0] <= t && t <= ci[1]),
                pmse: tv.map(|t| pmse(&xs, t)),
                name,
            });
        }
        write_table(&a.out.join("histograms.csv"), &["quantity", "bin_lo", "bin_hi", "count"], &hist_rows)?;
        write_table(
            &a.out.join("intervals.csv"),
            &["quantity", "mean", "ci_lo", "ci_hi", "ci_width", "truth"],
            &interval_rows,
        )?;
    }
    let subset = match (a.center, a.radius) {
        (Some(center), Some(radius)) => CellSubset::Radius { center, radius },
        _ => CellSubset::All,
    };
    if let (Some(e), Some(r)) = (&a.p_hat, &a.p_ref) {
        report.gradient = Some(gradient_vector_metrics(&read_grid(e)?, &read_grid(r)?, &subset)?);
    }
    if let (Some(e), Some(r)) = (&a.m_hat, &a.m_ref) {
        report.motility = Some(motility_error(&read_grid(e)?, &read_grid(r)?, a.log_scale, &subset)?);
    }
    write_json(&a.out.join("diagnostics.json"), &report)?;
    Ok(())
}

pub fn compare(a: CompareArgs) -> Result<()> {
    let mut cfg = layered(CompareConfig::desk(), a.config.as_deref())?;
    cfg.replicates = a.replicates.unwrap_or(cfg.replicates);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.mcmc.adapt_iters = a.adapt.unwrap_or(cfg.mcmc.adapt_iters);
    cfg.mcmc.sample_iters = a.sample.unwrap_or(cfg.mcmc.sample_iters);
    if cfg.replicates == 0 {
        return Err(UsageError("--replicates must be >= 1".into()).into());
    }
    let report = design_compare(&cfg)?;
    create_dir(&a.out)?;
    write_json(&a.out.join("comparison.json"), &report)?;
    fs::write(a.out.join("fits.csv"), fits_csv(&report.rows))?;
    fs::write(a.out.join("summaries.csv"), summaries_csv(&report))?;
    write_json(&a.out.join("config.json"), &cfg)?;
    for s in &report.summaries {
        eprintln!(
            "{:>9} {:>7}: n={:<3} coverage(all)={:.3} convergence={:.3}",
            s.subset, s.design, s.count, s.coverage_all, s.convergence_rate
        );
    }
    Ok(())
}

pub fn run_experiment(a: RunExperimentArgs) -> Result<()> {
    let mut cfg = match (&a.manifest, a.recipe) {
        (Some(m), _) => RunManifest::load(m).with_context(|| format!("loading manifest {}", m.display()))?.config,
        (None, Some(recipe)) => layered(ExperimentConfig::preset(recipe, a.scale), a.config.as_deref())?,
        (None, None) => return Err(UsageError("--recipe or --manifest is required".into()).into()),
    };
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.replicates = a.replicates.unwrap_or(cfg.replicates);
    cfg.adapt_iters = a.adapt.unwrap_or(cfg.adapt_iters);
    cfg.sample_iters = a.sample.unwrap_or(cfg.sample_iters);
    if cfg.replicates == 0 {
        return Err(UsageError("--replicates must be >= 1".into()).into());
    }
    let manifest = run_recipe(&cfg, &a.out)?;
    eprintln!(
        "{}: wrote {} files to {}",
        cfg.recipe.name(),
        manifest.files.len() + 1,
        a.out.display()
    );
    Ok(())
}
