//! Three-step penalized least-squares estimation of gridded potential and
//! motility surfaces with `σ = 1`:
//!
//! 1. fit `g = vβ + Aγ + ε` with a first-difference penalty on `γ`,
//!    treating motility as constant;
//! 2. smooth `log(ε̂²/h)` over the grid to estimate motility;
//! 3. refit after dividing each row by `m̂(r_τ) h_τ^{1/2}`.
//!
//! `γ = −βp`, so `p̂ = −γ̂/β̂` up to an additive constant. The smoothing
//! parameter is chosen by prediction error on held-out observation triples.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{LdlFactor, Skyline, SparseSym};
use crate::path::MovementPath;
use crate::surfaces::{car_penalty, center_surface, GriddedSurface};

/// `E[log χ²₁]`, the offset of a log squared standard normal.
pub const LOG_CHI2_1_MEAN: f64 = -1.270_362_845_461_478_2;

const PIVOT_TOL: f64 = 1e-12;

/// Stacked x/y regression rows ordered by path, time and direction.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegressionRows {
    pub g: Vec<f64>,
    pub v: Vec<f64>,
    /// Sparse gradient rows over active-cell ordinals, already scaled by `h_τ`.
    pub a: Vec<Vec<(usize, f64)>>,
    pub h: Vec<f64>,
    /// Active ordinal of the cell containing `r_τ`.
    pub cell: Vec<usize>,
    /// Observation-triple index shared by the x and y rows.
    pub triple: Vec<usize>,
    pub holdout: Vec<bool>,
}

impl RegressionRows {
    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    pub fn n_triples(&self) -> usize {
        self.triple.iter().max().map_or(0, |t| t + 1)
    }

    pub fn push(&mut self, g: f64, v: f64, a: Vec<(usize, f64)>, h: f64, cell: usize, triple: usize) {
        self.g.push(g);
        self.v.push(v);
        self.a.push(a);
        self.h.push(h);
        self.cell.push(cell);
        self.triple.push(triple);
        self.holdout.push(false);
    }

    fn select(&self, keep: impl Fn(usize) -> bool) -> Self {
        let mut out = RegressionRows::default();
        for i in (0..self.len()).filter(|&i| keep(i)) {
            out.g.push(self.g[i]);
            out.v.push(self.v[i]);
            out.a.push(self.a[i].clone());
            out.h.push(self.h[i]);
            out.cell.push(self.cell[i]);
            out.triple.push(self.triple[i]);
            out.holdout.push(self.holdout[i]);
        }
        out
    }
}

/// Builds one x-row and one y-row per observation triple. Gradient rows use
/// centered raster differences with offsets of `fd_step` (one cell when
/// `None`), one-sided next to inactive cells, multiplied by `h_τ`.
pub fn build_rows(paths: &[MovementPath], grid: &GriddedSurface, fd_step: Option<f64>) -> Result<RegressionRows> {
    let fd = fd_step.unwrap_or(grid.cell());
    if !(fd > 0.0) {
        return Err(Error::Parameter(format!("finite-difference step must be > 0, got {fd}")));
    }
    let mut rows = RegressionRows::default();
    let mut triple = 0;
    for path in paths {
        let (t, r) = (path.times(), path.positions());
        if t.len() < 3 {
            return Err(Error::TooShort { len: t.len(), min: 3 });
        }
        for (k, (&tk, &rk)) in t.iter().zip(r).enumerate() {
            if grid.active_index(rk).is_none() {
                return Err(Error::ObservationOutOfDomain {
                    path: path.id().to_string(),
                    time: tk,
                });
            }
            if k + 2 >= t.len() {
                continue;
            }
            let h0 = t[k + 1] - tk;
            let h1 = t[k + 2] - t[k + 1];
            let cell = grid.ordinal(grid.locate(rk)?).expect("active");
            for u in 0..2 {
                let d1 = r[k + 1][u] - rk[u];
                let d2 = r[k + 2][u] - r[k + 1][u];
                let stencil = grid.gradient_stencil(rk, u, fd)?;
                let a = stencil
                    .entries()
                    .iter()
                    .map(|&(idx, w)| (grid.ordinal(idx).expect("active"), w * h0))
                    .collect();
                rows.push(d2 / h1 - d1 / h0, -d1, a, h0, cell, triple);
            }
            triple += 1;
        }
    }
    Ok(rows)
}

/// Assigns `round(fraction · triples)` observation triples to the holdout set.
pub fn holdout_split<R: Rng + ?Sized>(
    rows: &RegressionRows,
    fraction: f64,
    rng: &mut R,
) -> Result<(RegressionRows, RegressionRows)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Parameter(format!("holdout fraction must be in (0, 1), got {fraction}")));
    }
    let n = rows.n_triples();
    let k = (fraction * n as f64).round() as usize;
    if k == 0 || k == n {
        return Err(Error::Parameter(format!(
            "holdout fraction {fraction} leaves an empty set with {n} triples"
        )));
    }
    let mut held = vec![false; n];
    for i in sample(rng, n, k) {
        held[i] = true;
    }
    let mut marked = rows.clone();
    for (flag, &t) in marked.holdout.iter_mut().zip(&rows.triple) {
        *flag = held[t];
    }
    let train = marked.select(|i| !marked.holdout[i]);
    let hold = marked.select(|i| marked.holdout[i]);
    Ok((train, hold))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverStats {
    pub method: String,
    pub unknowns: usize,
    pub envelope_len: usize,
    /// Components whose constant direction was pinned and re-centered.
    pub pinned_components: usize,
    pub min_pivot_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenalizedFit {
    pub beta: f64,
    pub gamma: Vec<f64>,
    pub stats: SolverStats,
}

/// Connected components of the `γ` block of the penalty graph.
fn penalty_components(q: &SparseSym) -> (Vec<usize>, usize) {
    let j = q.n() - 1;
    let mut label = vec![usize::MAX; j];
    let mut count = 0;
    let mut stack = Vec::new();
    for s in 0..j {
        if label[s] != usize::MAX {
            continue;
        }
        label[s] = count;
        stack.push(s);
        while let Some(c) = stack.pop() {
            for (nb, v) in q.row(c + 1) {
                if nb == 0 || v == 0.0 {
                    continue;
                }
                let k = nb - 1;
                if label[k] == usize::MAX {
                    label[k] = count;
                    stack.push(k);
                }
            }
        }
        count += 1;
    }
    (label, count)
}

/// Solves `(E'E + λQ)(β, γ) = E'g` for `E = [v A]`, where `Q` has its
/// friction row and column at index 0. Directions that are constant on a
/// connected component and lie in the null space are fixed by pinning one
/// cell and re-centering, which gives the minimum-norm solution.
pub fn solve_penalized(g: &[f64], v: &[f64], a: &[Vec<(usize, f64)>], q: &SparseSym, lambda: f64) -> Result<PenalizedFit> {
    if !(lambda >= 0.0) {
        return Err(Error::Parameter(format!("lambda must be >= 0, got {lambda}")));
    }
    let j = q.n() - 1;
    let n = j + 1;
    let beta_ix = j;
    // γ_k at k, β last so its dense row does not widen the envelope
    let mut first: Vec<usize> = (0..n).collect();
    first[beta_ix] = 0;
    for row in a {
        for &(p, _) in row {
            for &(r, _) in row {
                if r < p && r < first[p] {
                    first[p] = r;
                }
            }
        }
    }
    for i in 0..j {
        for (c, _) in q.row(i + 1) {
            if c >= 1 && c - 1 < i && c - 1 < first[i] {
                first[i] = c - 1;
            }
        }
    }
    let mut m = Skyline::new(first);
    let mut rhs = vec![0.0; n];
    for ((&gi, &vi), row) in g.iter().zip(v).zip(a) {
        m.add(beta_ix, beta_ix, vi * vi);
        rhs[beta_ix] += vi * gi;
        for &(p, wp) in row {
            rhs[p] += wp * gi;
            m.add(beta_ix, p, vi * wp);
            for &(r, wr) in row {
                if r <= p {
                    m.add(p, r, wp * wr);
                }
            }
        }
    }
    if lambda > 0.0 {
        for i in 0..j {
            for (c, val) in q.row(i + 1) {
                if c >= 1 && c - 1 <= i {
                    m.add(i, c - 1, lambda * val);
                }
            }
        }
    }

    let (labels, n_comp) = penalty_components(q);
    let max_diag = (0..n).map(|i| m.diag(i).abs()).fold(0.0, f64::max);
    let mut pinned = Vec::new();
    for c in 0..n_comp {
        let mut e = vec![0.0; n];
        let mut first_cell = None;
        for (k, &l) in labels.iter().enumerate() {
            if l == c {
                e[k] = 1.0;
                first_cell.get_or_insert(k);
            }
        }
        let ne = m.matvec(&e);
        let resid = ne.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        if resid <= 1e-10 * max_diag.max(f64::MIN_POSITIVE) {
            let k = first_cell.expect("non-empty component");
            m.pin(k);
            rhs[k] = 0.0;
            pinned.push(c);
        }
    }
    let factor = m.factor(PIVOT_TOL).map_err(|e| {
        Error::Rank(format!(
            "penalized normal equations are singular beyond the constant direction of each of the {n_comp} connected grid component(s); {e}"
        ))
    })?;
    let mut x = factor.solve(&rhs);
    for &c in &pinned {
        let members: Vec<usize> = (0..j).filter(|&k| labels[k] == c).collect();
        let mean = members.iter().map(|&k| x[k]).sum::<f64>() / members.len() as f64;
        for &k in &members {
            x[k] -= mean;
        }
    }
    let beta = x[beta_ix];
    x.truncate(j);
    Ok(PenalizedFit {
        beta,
        gamma: x,
        stats: SolverStats {
            method: "envelope LDLt (direct)".into(),
            unknowns: n,
            envelope_len: m.envelope_len(),
            pinned_components: pinned.len(),
            min_pivot_ratio: factor.min_pivot_ratio(),
        },
    })
}

fn residuals(rows: &RegressionRows, beta: f64, gamma: &[f64]) -> Vec<f64> {
    (0..rows.len())
        .map(|i| rows.g[i] - rows.v[i] * beta - rows.a[i].iter().map(|&(k, w)| w * gamma[k]).sum::<f64>())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step1Fit {
    pub beta: f64,
    pub gamma: Vec<f64>,
    pub residuals: Vec<f64>,
    pub stats: SolverStats,
}

/// Preliminary fit treating motility as constant.
pub fn step1_fit(train: &RegressionRows, q: &SparseSym, lambda: f64) -> Result<Step1Fit> {
    let fit = solve_penalized(&train.g, &train.v, &train.a, q, lambda)?;
    let residuals = residuals(train, fit.beta, &fit.gamma);
    Ok(Step1Fit {
        beta: fit.beta,
        gamma: fit.gamma,
        residuals,
        stats: fit.stats,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmootherConfig {
    /// Candidate `log λ₂` values for the log-residual smoother, chosen by GCV.
    pub log_lambdas: Vec<f64>,
    /// Squared residuals are floored here before taking logs.
    pub floor: f64,
    /// Adds `−E[log χ²₁]` so the exponentiated fit estimates `m²` rather
    /// than its geometric mean.
    pub bias_correction: bool,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        SmootherConfig {
            log_lambdas: (-4..=10).map(f64::from).collect(),
            floor: 1e-12,
            bias_correction: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotilityFit {
    pub m_hat: GriddedSurface,
    pub smoothing_lambda: f64,
    pub gcv: f64,
}

/// Penalized grid smoother of `log(max(ε̂², floor)/h)` with the same
/// first-difference penalty, `λ₂` chosen by generalized cross-validation;
/// returns `m̂ = exp(½ fit)` at every active cell.
pub fn step2_motility(
    residuals: &[f64],
    cells: &[usize],
    h: &[f64],
    grid: &GriddedSurface,
    cfg: &SmootherConfig,
) -> Result<MotilityFit> {
    if residuals.len() != cells.len() || residuals.len() != h.len() {
        return Err(Error::Shape("residuals, cells and steps differ in length".into()));
    }
    if cfg.log_lambdas.is_empty() {
        return Err(Error::Parameter("smoother needs at least one log lambda".into()));
    }
    let j = grid.n_active();
    let q = car_penalty(grid);
    let (labels, n_comp) = penalty_components(&q);
    let logs: Vec<f64> = residuals
        .iter()
        .zip(h)
        .map(|(e, hh)| {
            if !e.is_finite() {
                f64::NAN
            } else {
                ((e * e).max(cfg.floor) / hh).ln()
            }
        })
        .collect();
    if logs.iter().any(|l| !l.is_finite()) {
        return Err(Error::Parameter("residuals must be finite".into()));
    }
    let mut counts = vec![0.0; j];
    let mut sums = vec![0.0; j];
    for (&c, &l) in cells.iter().zip(&logs) {
        counts[c] += 1.0;
        sums[c] += l;
    }
    let mut has_data = vec![false; n_comp];
    for k in 0..j {
        if counts[k] > 0.0 {
            has_data[labels[k]] = true;
        }
    }
    if let Some(c) = has_data.iter().position(|&d| !d) {
        return Err(Error::Component(format!(
            "grid component {c} of {n_comp} contains no residuals"
        )));
    }
    let mut first: Vec<usize> = (0..j).collect();
    for i in 0..j {
        for (c, _) in q.row(i + 1) {
            if c >= 1 && c - 1 < first[i] {
                first[i] = c - 1;
            }
        }
    }
    let n = logs.len() as f64;
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    for &ll in &cfg.log_lambdas {
        let lam = ll.exp();
        let mut m = Skyline::new(first.clone());
        for k in 0..j {
            m.add(k, k, counts[k]);
            for (c, val) in q.row(k + 1) {
                if c >= 1 && c - 1 <= k {
                    m.add(k, c - 1, lam * val);
                }
            }
        }
        let factor: LdlFactor = m.factor(PIVOT_TOL)?;
        let theta = factor.solve(&sums);
        let rss: f64 = cells.iter().zip(&logs).map(|(&c, &l)| (l - theta[c]).powi(2)).sum();
        let zdiag = factor.inverse_diagonal();
        let trace: f64 = counts.iter().zip(&zdiag).map(|(c, z)| c * z).sum();
        let denom = (n - trace).max(1e-12);
        let gcv = n * rss / (denom * denom);
        if best.as_ref().is_none_or(|b| gcv < b.1) {
            best = Some((lam, gcv, theta));
        }
    }
    let (lam, gcv, theta) = best.expect("non-empty grid");
    let offset = if cfg.bias_correction { -LOG_CHI2_1_MEAN } else { 0.0 };
    let m_vals: Vec<f64> = theta.iter().map(|t| (0.5 * (t + offset)).exp()).collect();
    Ok(MotilityFit {
        m_hat: grid.with_active_values(&m_vals)?,
        smoothing_lambda: lam,
        gcv,
    })
}

/// Refit after dividing `g` and `v` by `m̂(r_τ) h_τ^{1/2}` and `A` by `h_τ^{1/2}`.
pub fn step3_refit(train: &RegressionRows, m_hat: &[f64], q: &SparseSym, lambda: f64) -> Result<PenalizedFit> {
    let mut g = Vec::with_capacity(train.len());
    let mut v = Vec::with_capacity(train.len());
    let mut a = Vec::with_capacity(train.len());
    for i in 0..train.len() {
        let m = m_hat[train.cell[i]];
        if !(m > 0.0) {
            return Err(Error::Parameter(format!("motility estimate must be > 0, got {m}")));
        }
        let sh = train.h[i].sqrt();
        g.push(train.g[i] / (m * sh));
        v.push(train.v[i] / (m * sh));
        a.push(train.a[i].iter().map(|&(k, w)| (k, w / sh)).collect());
    }
    solve_penalized(&g, &v, &a, q, lambda)
}

/// Holdout prediction error `Σ (g − vβ − m̂(r)·a'γ)²`.
pub fn holdout_mspe(holdout: &RegressionRows, beta: f64, gamma: &[f64], m_hat: &[f64]) -> f64 {
    (0..holdout.len())
        .map(|i| {
            let ag: f64 = holdout.a[i].iter().map(|&(k, w)| w * gamma[k]).sum();
            (holdout.g[i] - holdout.v[i] * beta - m_hat[holdout.cell[i]] * ag).powi(2)
        })
        .sum()
}

/// Result of the three steps at one `λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThreeStepFit {
    pub log_lambda: f64,
    pub beta: f64,
    pub gamma: Vec<f64>,
    pub motility: MotilityFit,
    pub stats: SolverStats,
}

pub fn three_step(
    train: &RegressionRows,
    grid: &GriddedSurface,
    q: &SparseSym,
    log_lambda: f64,
    smoother: &SmootherConfig,
) -> Result<ThreeStepFit> {
    let lambda = log_lambda.exp();
    let s1 = step1_fit(train, q, lambda)?;
    let motility = step2_motility(&s1.residuals, &train.cell, &train.h, grid, smoother)?;
    let m = motility.m_hat.active_values();
    let s3 = step3_refit(train, &m, q, lambda)?;
    Ok(ThreeStepFit {
        log_lambda,
        beta: s3.beta,
        gamma: s3.gamma,
        motility,
        stats: s3.stats,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LambdaScore {
    pub log_lambda: f64,
    pub lambda: f64,
    pub mspe: f64,
}

/// Runs the pipeline for every `log λ` and returns the fit with the lowest
/// holdout error (ties go to the larger `λ`) plus the whole error curve.
pub fn select_lambda(
    train: &RegressionRows,
    holdout: &RegressionRows,
    grid: &GriddedSurface,
    log_lambdas: &[f64],
    smoother: &SmootherConfig,
) -> Result<(ThreeStepFit, Vec<LambdaScore>)> {
    if log_lambdas.is_empty() {
        return Err(Error::Parameter("lambda grid is empty".into()));
    }
    let q = car_penalty(grid);
    let fits: Vec<ThreeStepFit> = log_lambdas
        .par_iter()
        .map(|&ll| three_step(train, grid, &q, ll, smoother))
        .collect::<Result<_>>()?;
    let curve: Vec<LambdaScore> = fits
        .iter()
        .map(|f| LambdaScore {
            log_lambda: f.log_lambda,
            lambda: f.log_lambda.exp(),
            mspe: holdout_mspe(holdout, f.beta, &f.gamma, &f.motility.m_hat.active_values()),
        })
        .collect();
    let mut best = 0;
    for (i, s) in curve.iter().enumerate().skip(1) {
        let b = &curve[best];
        if s.mspe < b.mspe || (s.mspe == b.mspe && s.log_lambda > b.log_lambda) {
            best = i;
        }
    }
    let fit = fits.into_iter().nth(best).expect("index in range");
    Ok((fit, curve))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlsConfig {
    pub holdout_fraction: f64,
    /// Offset of the gradient rows; one cell side when `None`.
    pub fd_step: Option<f64>,
    pub log_lambdas: Vec<f64>,
    pub smoother: SmootherConfig,
}

impl Default for PlsConfig {
    fn default() -> Self {
        PlsConfig {
            holdout_fraction: 0.2,
            fd_step: None,
            log_lambdas: (-8..=8).map(f64::from).collect(),
            smoother: SmootherConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PLSFit {
    pub beta_hat: f64,
    pub gamma_hat: Vec<f64>,
    /// `−γ̂/β̂`, centered over active cells.
    pub p_hat: GriddedSurface,
    pub m_hat: GriddedSurface,
    pub lambda: f64,
    pub log_lambda: f64,
    pub smoothing_lambda: f64,
    pub mspe_curve: Vec<LambdaScore>,
    pub stats: SolverStats,
    pub n_train_rows: usize,
    pub n_holdout_rows: usize,
    pub warnings: Vec<String>,
}

/// Holdout split, `λ` selection and the final fit at the chosen `λ`.
pub fn fit_full<R: Rng + ?Sized>(
    paths: &[MovementPath],
    grid: &GriddedSurface,
    cfg: &PlsConfig,
    rng: &mut R,
) -> Result<PLSFit> {
    let rows = build_rows(paths, grid, cfg.fd_step)?;
    let (train, holdout) = holdout_split(&rows, cfg.holdout_fraction, rng)?;
    let mut warnings = Vec::new();
    if train.len() < grid.n_active() + 1 {
        warnings.push(format!(
            "{} training rows for {} unknowns; the fit may be dominated by the penalty",
            train.len(),
            grid.n_active() + 1
        ));
    }
    let (fit, curve) = select_lambda(&train, &holdout, grid, &cfg.log_lambdas, &cfg.smoother)?;
    if !(fit.beta.abs() > 0.0) {
        return Err(Error::SingularFit("estimated friction is zero".into()));
    }
    let p: Vec<f64> = fit.gamma.iter().map(|g| -g / fit.beta).collect();
    Ok(PLSFit {
        beta_hat: fit.beta,
        gamma_hat: fit.gamma,
        p_hat: center_surface(&grid.with_active_values(&p)?),
        m_hat: fit.motility.m_hat,
        lambda: fit.log_lambda.exp(),
        log_lambda: fit.log_lambda,
        smoothing_lambda: fit.motility.smoothing_lambda,
        mspe_curve: curve,
        stats: fit.stats,
        n_train_rows: train.len(),
        n_holdout_rows: holdout.len(),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal2, substream};
    use crate::sim::{simulate_em, ModelParams};
    use crate::surfaces::{AnalyticSurface, Surface};
    use nalgebra::{DMatrix, DVector};

    fn unit_grid(nx: usize, ny: usize) -> GriddedSurface {
        GriddedSurface::filled(nx, ny, [0.0, 0.0], 1.0, 0.0).unwrap()
    }

    #[test]
    fn single_triple_rows() {
        let grid = unit_grid(5, 5);
        let p = MovementPath::new("a", vec![0.0, 2.0, 3.0], vec![[2.5, 2.5], [3.0, 2.0], [3.2, 1.0]]).unwrap();
        let rows = build_rows(&[p], &grid, None).unwrap();
        assert_eq!(rows.len(), 2);
        for a in &rows.a {
            let mut w: Vec<f64> = a.iter().map(|e| e.1).collect();
            w.sort_by(f64::total_cmp);
            assert_eq!(w, vec![-1.0, 1.0]);
        }
        assert!((rows.g[0] - ((3.2 - 3.0) / 1.0 - (3.0 - 2.5) / 2.0)).abs() < 1e-15);
        assert_eq!(rows.v[0], 2.5 - 3.0);
    }

    #[test]
    fn unit_offsets_on_wide_cells_give_half_step_weights() {
        let grid = GriddedSurface::filled(10, 10, [0.0, 0.0], 2.0, 0.0).unwrap();
        let p = MovementPath::new("a", vec![0.0, 1.0, 2.0], vec![[9.5, 9.5], [10.0, 10.0], [11.0, 9.0]]).unwrap();
        let rows = build_rows(&[p], &grid, Some(1.0)).unwrap();
        for a in &rows.a {
            let mut w: Vec<f64> = a.iter().map(|e| e.1).collect();
            w.sort_by(f64::total_cmp);
            assert_eq!(w, vec![-0.5, 0.5]);
        }
        // x + 1 lands in the next cell, x - 1 in the current one
        let here = grid.ordinal(grid.locate([9.5, 9.5]).unwrap()).unwrap();
        assert!(rows.a[0].contains(&(here, -0.5)));
        assert!(build_rows(&[], &grid, Some(0.0)).is_err());
    }

    #[test]
    fn row_count_and_order() {
        let grid = unit_grid(10, 10);
        let p = MovementPath::new("a", (0..5).map(f64::from).collect(), (0..5).map(|i| [2.0 + i as f64, 5.0]).collect()).unwrap();
        let rows = build_rows(&[p], &grid, None).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows.triple, vec![0, 0, 1, 1, 2, 2]);
    }

    #[test]
    fn observation_outside_grid() {
        let grid = unit_grid(4, 4);
        let p = MovementPath::new("ant7", vec![0.0, 1.0, 2.0], vec![[1.0, 1.0], [2.0, 2.0], [9.0, 1.0]]).unwrap();
        match build_rows(&[p], &grid, None) {
            Err(Error::ObservationOutOfDomain { path, time }) => assert_eq!((path.as_str(), time), ("ant7", 2.0)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn gradient_rows_reproduce_affine_slope() {
        let grid = GriddedSurface::from_fn(12, 9, [0.0, 0.0], 1.0, |r| 0.7 * r[0] - 0.3 * r[1] + 4.0).unwrap();
        let pvals = grid.active_values();
        let mut rng = substream(5, 0);
        let times: Vec<f64> = (0..40).map(|i| i as f64 * 0.5 + (i * i) as f64 * 0.01).collect();
        let pos: Vec<[f64; 2]> = (0..40).map(|_| [rng.random_range(0.0..12.0), rng.random_range(0.0..9.0)]).collect();
        let path = MovementPath::new("p", times, pos).unwrap();
        let rows = build_rows(&[path], &grid, None).unwrap();
        for i in 0..rows.len() {
            let ap: f64 = rows.a[i].iter().map(|&(k, w)| w * pvals[k]).sum();
            let slope = if i % 2 == 0 { 0.7 } else { -0.3 };
            assert!((ap - rows.h[i] * slope).abs() < 1e-12);
        }
    }

    fn synthetic_rows(grid: &GriddedSurface, n: usize, seed: u64, gamma: &[f64], beta: f64, noise: f64) -> RegressionRows {
        let mut rng = substream(seed, 0);
        let mut rows = RegressionRows::default();
        let [x0, y0] = grid.origin();
        let (w, hgt) = (grid.nx() as f64 * grid.cell(), grid.ny() as f64 * grid.cell());
        let mut t = 0;
        while rows.len() < n {
            let r = [x0 + rng.random_range(0.0..w), y0 + rng.random_range(0.0..hgt)];
            let Some(idx) = grid.active_index(r) else { continue };
            let cell = grid.ordinal(idx).unwrap();
            let h = rng.random_range(0.5..2.0);
            for u in 0..2 {
                let st = grid.gradient_stencil(r, u, grid.cell()).unwrap();
                let a: Vec<(usize, f64)> = st.entries().iter().map(|&(i, wt)| (grid.ordinal(i).unwrap(), wt * h)).collect();
                let v = normal2(&mut rng)[0];
                let ag: f64 = a.iter().map(|&(k, wt)| wt * gamma[k]).sum();
                let g = v * beta + ag + noise * h.sqrt() * normal2(&mut rng)[1];
                rows.push(g, v, a, h, cell, t);
            }
            t += 1;
        }
        rows
    }

    /// Minimum-norm solution through a dense SVD pseudo-inverse.
    fn dense_oracle(rows: &RegressionRows, q: &SparseSym, lambda: f64) -> DVector<f64> {
        let j = q.n() - 1;
        let n = j + 1;
        let mut e = DMatrix::<f64>::zeros(rows.len(), n);
        for i in 0..rows.len() {
            e[(i, 0)] = rows.v[i];
            for &(k, w) in &rows.a[i] {
                e[(i, k + 1)] += w;
            }
        }
        let qd = q.to_dense();
        let qm = DMatrix::from_fn(n, n, |r, c| qd[r][c]);
        let lhs = e.transpose() * &e + qm * lambda;
        let rhs = e.transpose() * DVector::from_vec(rows.g.clone());
        lhs.pseudo_inverse(1e-11).unwrap() * rhs
    }

    #[test]
    fn sparse_solution_matches_dense_oracle() {
        for inst in 0..8u64 {
            let mut rng = substream(40 + inst, 9);
            let (nx, ny) = (7, 6);
            let mask: Vec<bool> = (0..nx * ny).map(|_| rng.random::<f64>() < 0.85).collect();
            let grid = GriddedSurface::new(nx, ny, [0.0, 0.0], 1.0, vec![0.0; nx * ny], mask).unwrap();
            let gamma: Vec<f64> = (0..grid.n_active()).map(|_| normal2(&mut rng)[0]).collect();
            let rows = synthetic_rows(&grid, 120, inst, &gamma, 0.6, 0.3);
            let q = car_penalty(&grid);
            let lambda = (rng.random_range(-3.0..3.0f64)).exp();
            let fit = solve_penalized(&rows.g, &rows.v, &rows.a, &q, lambda).unwrap();
            let dense = dense_oracle(&rows, &q, lambda);
            assert!((fit.beta - dense[0]).abs() < 1e-8);
            for k in 0..grid.n_active() {
                assert!((fit.gamma[k] - dense[k + 1]).abs() < 1e-8, "inst {inst} cell {k}");
            }
        }
    }

    #[test]
    fn unpenalized_fit_matches_least_squares() {
        // one-sided adjacent-cell rows keep the design full rank up to the constant
        let grid = unit_grid(5, 4);
        let j = grid.n_active();
        let mut rng = substream(2, 0);
        let mut rows = RegressionRows::default();
        for t in 0..200 {
            let k = rng.random_range(0..j);
            let nb: Vec<usize> = grid.neighbours(grid.active_cells()[k]).map(|i| grid.ordinal(i).unwrap()).collect();
            let other = nb[rng.random_range(0..nb.len())];
            let v = normal2(&mut rng)[0];
            rows.push(normal2(&mut rng)[0], v, vec![(k, 1.0), (other, -1.0)], 1.0, k, t);
        }
        let q = car_penalty(&grid);
        let fit = step1_fit(&rows, &q, 0.0).unwrap();
        let dense = dense_oracle(&rows, &q, 0.0);
        assert!((fit.beta - dense[0]).abs() < 1e-8);
        for k in 0..j {
            assert!((fit.gamma[k] - dense[k + 1]).abs() < 1e-8);
        }
        assert_eq!(fit.stats.pinned_components, 1);
    }

    #[test]
    fn large_penalty_flattens_gamma() {
        let grid = unit_grid(6, 6);
        let gamma: Vec<f64> = (0..36).map(|k| (k as f64 * 0.3).sin()).collect();
        let rows = synthetic_rows(&grid, 300, 3, &gamma, 0.5, 0.1);
        let fit = step1_fit(&rows, &car_penalty(&grid), 1e8).unwrap();
        let spread = fit.gamma.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        assert!(spread < 1e-5, "{spread}");
    }

    #[test]
    fn zero_noise_recovers_truth_up_to_constant() {
        let grid = GriddedSurface::from_fn(6, 6, [0.0, 0.0], 1.0, |r| 0.3 * (r[0] - 2.5).powi(2) + 0.1 * r[1] * r[0]).unwrap();
        let beta = 0.7;
        let gamma: Vec<f64> = grid.active_values().iter().map(|p| -beta * p).collect();
        let rows = synthetic_rows(&grid, 2000, 4, &gamma, beta, 0.0);
        let fit = step1_fit(&rows, &car_penalty(&grid), 1e-8).unwrap();
        assert!((fit.beta - beta).abs() < 1e-4);
        let mean_true = gamma.iter().sum::<f64>() / gamma.len() as f64;
        for (g, t) in fit.gamma.iter().zip(&gamma) {
            assert!((g - (t - mean_true)).abs() < 1e-4);
        }
    }

    #[test]
    fn disconnected_components_are_each_centered() {
        let mut mask = vec![true; 36];
        for y in 0..6 {
            mask[y * 6 + 3] = false;
        }
        let grid = GriddedSurface::new(6, 6, [0.0, 0.0], 1.0, vec![0.0; 36], mask).unwrap();
        let (labels, n) = grid.components();
        assert_eq!(n, 2);
        let gamma: Vec<f64> = (0..grid.n_active()).map(|k| k as f64 * 0.1).collect();
        let rows = synthetic_rows(&grid, 300, 6, &gamma, 0.5, 0.2);
        let fit = step1_fit(&rows, &car_penalty(&grid), 1.0).unwrap();
        assert_eq!(fit.stats.pinned_components, 2);
        for c in 0..2 {
            let s: f64 = fit.gamma.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(g, _)| g).sum();
            assert!(s.abs() < 1e-9);
        }
    }

    #[test]
    fn friction_is_not_penalized() {
        // with γ frozen, the β equation E'g − E'Eθ − λQθ in row 0 does not involve λ
        let grid = unit_grid(5, 5);
        let q = car_penalty(&grid);
        for (c, v) in q.row(0) {
            assert_eq!(v, 0.0, "column {c}");
        }
        let theta: Vec<f64> = std::iter::once(0.4).chain(std::iter::repeat_n(1.3, 25)).collect();
        let qt = q.matvec(&theta);
        assert_eq!(qt[0], 0.0);
        let qt10: Vec<f64> = qt.iter().map(|x| 10.0 * x).collect();
        assert_eq!(qt10[0], 0.0);
    }

    #[test]
    fn holdout_split_examples() {
        let grid = unit_grid(10, 10);
        let gamma = vec![0.0; 100];
        let rows = synthetic_rows(&grid, 200, 7, &gamma, 0.5, 1.0);
        assert_eq!(rows.n_triples(), 100);
        let (train, hold) = holdout_split(&rows, 0.2, &mut substream(1, 0)).unwrap();
        assert_eq!(hold.len(), 40);
        assert_eq!(train.len(), 160);
        for pair in hold.triple.chunks(2) {
            assert_eq!(pair[0], pair[1]);
        }
        let (train2, _) = holdout_split(&rows, 0.2, &mut substream(1, 0)).unwrap();
        assert_eq!(train, train2);
        assert!(holdout_split(&rows, 0.0, &mut substream(1, 0)).is_err());
        assert!(holdout_split(&rows, 1.0, &mut substream(1, 0)).is_err());
    }

    #[test]
    fn homoscedastic_residuals_give_flat_motility() {
        let grid = unit_grid(10, 10);
        let mut rng = substream(8, 0);
        let n = 10_000;
        let res: Vec<f64> = (0..n).map(|_| normal2(&mut rng)[0]).collect();
        let cells: Vec<usize> = (0..n).map(|_| rng.random_range(0..100)).collect();
        let fit = step2_motility(&res, &cells, &vec![1.0; n], &grid, &SmootherConfig::default()).unwrap();
        let logs: Vec<f64> = fit.m_hat.active_values().iter().map(|m| m.ln()).collect();
        let mean = logs.iter().sum::<f64>() / logs.len() as f64;
        let sd = (logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / logs.len() as f64).sqrt();
        assert!(sd < 0.1, "{sd}");
        assert!(fit.m_hat.active_values().iter().all(|&m| m > 0.0));
        // bias-corrected level is close to the true m = 1
        assert!(mean.abs() < 0.1, "{mean}");
    }

    #[test]
    fn two_regime_residuals_give_motility_ratio_two() {
        let grid = GriddedSurface::filled(10, 10, [0.0, -5.0], 1.0, 0.0).unwrap();
        let mut rng = substream(9, 0);
        let n = 20_000;
        let mut res = Vec::new();
        let mut cells = Vec::new();
        for _ in 0..n {
            let k = rng.random_range(0..100);
            let y = grid.center(grid.active_cells()[k])[1];
            let sd = if y > 0.0 { 2.0 } else { 1.0 };
            res.push(sd * normal2(&mut rng)[0]);
            cells.push(k);
        }
        let fit = step2_motility(&res, &cells, &vec![1.0; n], &grid, &SmootherConfig::default()).unwrap();
        let (mut hi, mut lo) = (vec![], vec![]);
        for (k, &idx) in grid.active_cells().iter().enumerate() {
            let y = grid.center(idx)[1];
            // skip the two rows adjacent to the jump
            if y > 1.5 {
                hi.push(fit.m_hat.active_values()[k]);
            } else if y < -1.5 {
                lo.push(fit.m_hat.active_values()[k]);
            }
        }
        let ratio = (hi.iter().sum::<f64>() / hi.len() as f64) / (lo.iter().sum::<f64>() / lo.len() as f64);
        assert!((ratio - 2.0).abs() < 0.4, "{ratio}");
    }

    #[test]
    fn zero_residuals_are_floored() {
        let grid = unit_grid(3, 3);
        let fit = step2_motility(&[0.0; 9], &(0..9).collect::<Vec<_>>(), &[1.0; 9], &grid, &SmootherConfig::default()).unwrap();
        assert!(fit.m_hat.active_values().iter().all(|m| m.is_finite() && *m > 0.0));
    }

    #[test]
    fn empty_component_is_an_error() {
        let mut mask = vec![true; 9];
        mask[1] = false;
        mask[4] = false;
        mask[7] = false;
        let grid = GriddedSurface::new(3, 3, [0.0, 0.0], 1.0, vec![0.0; 9], mask).unwrap();
        let r = step2_motility(&[1.0, 1.0], &[0, 2], &[1.0, 1.0], &grid, &SmootherConfig::default());
        assert!(matches!(r, Err(Error::Component(_))));
    }

    #[test]
    fn unit_motility_refit_equals_step1() {
        let grid = unit_grid(6, 6);
        let gamma: Vec<f64> = (0..36).map(|k| (k as f64).cos()).collect();
        let mut rows = synthetic_rows(&grid, 300, 10, &gamma, 0.5, 0.2);
        let scale: Vec<f64> = rows.h.iter().map(|_| 1.0).collect();
        for (i, h) in rows.h.iter_mut().enumerate() {
            rows.a[i].iter_mut().for_each(|e| e.1 /= *h);
            *h = scale[i];
        }
        let q = car_penalty(&grid);
        let s1 = step1_fit(&rows, &q, 0.5).unwrap();
        let s3 = step3_refit(&rows, &vec![1.0; 36], &q, 0.5).unwrap();
        assert!((s1.beta - s3.beta).abs() < 1e-12);
        for (a, b) in s1.gamma.iter().zip(&s3.gamma) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_motility_scales_gamma_only() {
        let grid = unit_grid(5, 4);
        let j = grid.n_active();
        let mut rng = substream(11, 0);
        let mut rows = RegressionRows::default();
        for t in 0..200 {
            let k = rng.random_range(0..j);
            let nb: Vec<usize> = grid.neighbours(grid.active_cells()[k]).map(|i| grid.ordinal(i).unwrap()).collect();
            let other = nb[rng.random_range(0..nb.len())];
            let h = rng.random_range(0.5..2.0);
            rows.push(normal2(&mut rng)[0], normal2(&mut rng)[0], vec![(k, h), (other, -h)], h, k, t);
        }
        let q = car_penalty(&grid);
        let base = step3_refit(&rows, &vec![1.0; j], &q, 0.0).unwrap();
        let c = 2.5;
        let scaled = step3_refit(&rows, &vec![c; j], &q, 0.0).unwrap();
        assert!((base.beta - scaled.beta).abs() < 1e-6);
        for (a, b) in base.gamma.iter().zip(&scaled.gamma) {
            assert!((a - c * b).abs() < 1e-6);
        }
    }

    fn sim_paths(seed: u64, n_paths: usize, steps: usize) -> (GriddedSurface, Vec<MovementPath>, ModelParams) {
        let grid = GriddedSurface::filled(20, 20, [0.0, 0.0], 2.0, 0.0).unwrap();
        let params = ModelParams::new(
            0.5,
            1.0,
            Surface::Analytic(AnalyticSurface::Quadratic { k: 0.02, center: [20.0, 20.0] }),
            Surface::constant(2.0),
        )
        .unwrap();
        let times: Vec<f64> = (0..steps).map(|i| i as f64).collect();
        let mut paths = Vec::new();
        let mut stream = 0;
        while paths.len() < n_paths {
            let p = simulate_em(&params, &times, [[20.0, 20.0]; 2], &mut substream(seed, stream)).unwrap();
            stream += 1;
            if p.positions().iter().all(|&r| grid.active_index(r).is_some()) {
                paths.push(p.with_id(format!("p{}", paths.len())));
            }
        }
        (grid, paths, params)
    }

    #[test]
    fn full_fit_is_deterministic_and_sensible() {
        let (grid, paths, _) = sim_paths(12, 2, 600);
        let cfg = PlsConfig {
            log_lambdas: vec![-2.0, 0.0, 2.0],
            ..Default::default()
        };
        let a = fit_full(&paths, &grid, &cfg, &mut substream(3, 0)).unwrap();
        let b = fit_full(&paths, &grid, &cfg, &mut substream(3, 0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.mspe_curve.len(), 3);
        assert!(a.mspe_curve.iter().all(|s| s.mspe.is_finite()));
        assert!(a.m_hat.active_values().iter().all(|&m| m > 0.0));
        assert!(a.beta_hat > 0.0);
        let single = fit_full(&paths, &grid, &PlsConfig { log_lambdas: vec![1.0], ..Default::default() }, &mut substream(3, 0)).unwrap();
        assert_eq!(single.log_lambda, 1.0);
    }

    #[test]
    fn gradient_rows_ignore_constant_offsets() {
        let (grid, paths, _) = sim_paths(13, 1, 400);
        let rows = build_rows(&paths, &grid, None).unwrap();
        for a in &rows.a {
            assert!(a.iter().map(|e| e.1).sum::<f64>().abs() < 1e-12);
        }
        let q = car_penalty(&grid);
        // the constant direction is pinned and removed, so γ̂ is centered
        let base = step1_fit(&rows, &q, 1.0).unwrap();
        let mean = base.gamma.iter().sum::<f64>() / base.gamma.len() as f64;
        assert!(mean.abs() < 1e-9);
    }
}
