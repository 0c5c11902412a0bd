//! Path simulation from the irregular-step Euler–Maruyama recursion and
//! closed-form stationary moments for the quadratic-potential model.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::path::MovementPath;
use crate::rng::normal2;
use crate::surfaces::{drift, noise_scale, AnalyticSurface, Surface};

/// Friction, noise magnitude and the two surfaces.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub beta: f64,
    pub sigma: f64,
    pub potential: Surface,
    pub motility: Surface,
}

impl ModelParams {
    pub fn new(beta: f64, sigma: f64, potential: Surface, motility: Surface) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::Parameter(format!("beta must be > 0, got {beta}")));
        }
        if !(sigma >= 0.0) {
            return Err(Error::Parameter(format!("sigma must be >= 0, got {sigma}")));
        }
        Ok(ModelParams {
            beta,
            sigma,
            potential,
            motility,
        })
    }
}

/// Quadratic-potential AR(2) simulation settings; `alpha = k·beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticSimParams {
    pub beta: f64,
    pub alpha: f64,
    pub sigma: f64,
    pub h: f64,
    pub n: usize,
    pub init: [[f64; 2]; 2],
}

impl Default for QuadraticSimParams {
    fn default() -> Self {
        QuadraticSimParams {
            beta: 0.4,
            alpha: 0.08,
            sigma: 0.5,
            h: 1.0,
            n: 500,
            init: [[1.0, 1.0], [1.0, 1.0]],
        }
    }
}

impl QuadraticSimParams {
    pub fn k(&self) -> f64 {
        self.alpha / self.beta
    }

    fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return Err(Error::Parameter(format!("need n >= 3 steps, got {}", self.n)));
        }
        if !(self.h > 0.0) {
            return Err(Error::Parameter(format!("h must be > 0, got {}", self.h)));
        }
        Ok(())
    }
}

fn check_in_domain(params: &ModelParams, r: [f64; 2], step: usize) -> Result<()> {
    if !r[0].is_finite() || !r[1].is_finite() || !params.potential.contains(r) || !params.motility.contains(r) {
        return Err(Error::DomainExit { step });
    }
    Ok(())
}

/// Euler–Maruyama simulation over arbitrary increasing `times`, with noise
/// supplied by `noise` (one standard bivariate normal per step).
pub fn simulate_em_with_noise(
    params: &ModelParams,
    times: &[f64],
    init: [[f64; 2]; 2],
    mut noise: impl FnMut() -> [f64; 2],
) -> Result<Vec<[f64; 2]>> {
    if times.len() < 3 {
        return Err(Error::TooShort {
            len: times.len(),
            min: 3,
        });
    }
    for (i, w) in times.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err(Error::DegenerateStep { index: i + 1 });
        }
    }
    check_in_domain(params, init[0], 0)?;
    check_in_domain(params, init[1], 1)?;
    let mut pos = Vec::with_capacity(times.len());
    pos.push(init[0]);
    pos.push(init[1]);
    for tau in 0..times.len() - 2 {
        let h0 = times[tau + 1] - times[tau];
        let h1 = times[tau + 2] - times[tau + 1];
        let (r0, r1) = (pos[tau], pos[tau + 1]);
        let mu = drift(&params.potential, &params.motility, r0)?;
        let c = noise_scale(&params.motility, params.sigma, r0)?;
        let eps = noise();
        let scale = c * h0.sqrt() * h1;
        let mut r2 = [0.0; 2];
        for u in 0..2 {
            let d1 = r1[u] - r0[u];
            r2[u] = r1[u] + (h1 / h0) * d1 + params.beta * h0 * h1 * (mu[u] - d1 / h0) + scale * eps[u];
        }
        check_in_domain(params, r2, tau + 2)?;
        pos.push(r2);
    }
    Ok(pos)
}

/// Euler–Maruyama path at the given observation times.
pub fn simulate_em<R: Rng + ?Sized>(
    params: &ModelParams,
    times: &[f64],
    init: [[f64; 2]; 2],
    rng: &mut R,
) -> Result<MovementPath> {
    let pos = simulate_em_with_noise(params, times, init, || normal2(rng))?;
    MovementPath::new("sim", times.to_vec(), pos)
}

/// Constant-step AR(2) form of the quadratic-potential model, times `0, h, …`.
pub fn simulate_quadratic_ar2_with_noise(
    p: &QuadraticSimParams,
    mut noise: impl FnMut() -> [f64; 2],
) -> Result<MovementPath> {
    p.validate()?;
    let bh = p.beta * p.h;
    let a1 = 2.0 - bh;
    let a0 = bh - 1.0 - 2.0 * p.alpha * p.h * p.h;
    let s = p.h.powf(1.5) * p.sigma;
    let mut pos = Vec::with_capacity(p.n);
    pos.push(p.init[0]);
    pos.push(p.init[1]);
    for tau in 0..p.n - 2 {
        let e = noise();
        let (r0, r1) = (pos[tau], pos[tau + 1]);
        pos.push([
            r1[0] * a1 + r0[0] * a0 + s * e[0],
            r1[1] * a1 + r0[1] * a0 + s * e[1],
        ]);
    }
    let times = (0..p.n).map(|i| i as f64 * p.h).collect();
    MovementPath::new("sim", times, pos)
}

pub fn simulate_quadratic_ar2<R: Rng + ?Sized>(p: &QuadraticSimParams, rng: &mut R) -> Result<MovementPath> {
    simulate_quadratic_ar2_with_noise(p, || normal2(rng))
}

/// Constant-force attraction to `attractor` with unit motility.
#[allow(clippy::too_many_arguments)]
pub fn simulate_sign_drift<R: Rng + ?Sized>(
    beta: f64,
    k: f64,
    attractor: [f64; 2],
    sigma: f64,
    h: f64,
    n: usize,
    init: [[f64; 2]; 2],
    rng: &mut R,
) -> Result<MovementPath> {
    if n < 3 {
        return Err(Error::Parameter(format!("need n >= 3 steps, got {n}")));
    }
    if !(h > 0.0) {
        return Err(Error::Parameter(format!("h must be > 0, got {h}")));
    }
    let params = ModelParams::new(
        beta,
        sigma,
        AnalyticSurface::AbsSign { k, attractor }.into(),
        Surface::constant(1.0),
    )?;
    let times: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
    simulate_em(&params, &times, init, rng)
}

/// Stationary variances `(position, velocity)` of one coordinate of the
/// quadratic-potential SDE, from the continuous Lyapunov equation
/// `A S + S Aᵀ + B Bᵀ = 0` with `A = [[0, 1], [−2α, −β]]`, `B = (0, σ)ᵀ`.
pub fn stationary_moments(beta: f64, alpha: f64, sigma: f64) -> Result<(f64, f64)> {
    if !(beta > 0.0 && alpha > 0.0 && sigma >= 0.0) {
        return Err(Error::Parameter(format!(
            "need beta > 0, alpha > 0, sigma >= 0; got ({beta}, {alpha}, {sigma})"
        )));
    }
    let a = [[0.0, 1.0], [-2.0 * alpha, -beta]];
    let q = [[0.0, 0.0], [0.0, sigma * sigma]];
    // unknowns s11, s12, s22; equations for entries (0,0), (0,1), (1,1)
    let idx = |i: usize, j: usize| match (i.min(j), i.max(j)) {
        (0, 0) => 0,
        (0, 1) => 1,
        _ => 2,
    };
    let mut m = [[0.0; 4]; 3];
    for (row, &(i, j)) in [(0, 0), (0, 1), (1, 1)].iter().enumerate() {
        // (A S)_ij + (S Aᵀ)_ij = Σ_k A_ik S_kj + S_ik A_jk
        for k in 0..2 {
            m[row][idx(k, j)] += a[i][k];
            m[row][idx(i, k)] += a[j][k];
        }
        m[row][3] = -q[i][j];
    }
    let s = solve3(m).ok_or_else(|| Error::Parameter("Lyapunov system is singular".into()))?;
    Ok((s[0], s[2]))
}

fn solve3(mut m: [[f64; 4]; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        for r in 0..3 {
            if r != col {
                let f = m[r][col] / m[col][col];
                for c in col..4 {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    Some([m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]])
}

/// Step lengths grouped by the motility two observations earlier.
#[derive(Debug, Clone, Serialize)]
pub struct StepGroup {
    pub motility: f64,
    pub count: usize,
    pub mean: f64,
    pub histogram: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StepSizeSummary {
    pub bin_edges: Vec<f64>,
    pub groups: Vec<StepGroup>,
}

/// Distances `|r_τ − r_{τ−1}|` grouped by `m(r_{τ−2})`, with a shared
/// histogram of `n_bins` equal bins spanning `[0, max step]`.
pub fn step_size_stats(path: &MovementPath, motility: &Surface, n_bins: usize) -> Result<StepSizeSummary> {
    let pos = path.positions();
    if pos.len() < 3 {
        return Err(Error::TooShort {
            len: pos.len(),
            min: 3,
        });
    }
    let n_bins = n_bins.max(1);
    let mut steps = Vec::with_capacity(pos.len() - 2);
    for tau in 2..pos.len() {
        let m = motility.evaluate(pos[tau - 2])?;
        let d = ((pos[tau][0] - pos[tau - 1][0]).powi(2) + (pos[tau][1] - pos[tau - 1][1]).powi(2)).sqrt();
        steps.push((m, d));
    }
    let max = steps.iter().map(|s| s.1).fold(0.0, f64::max);
    let width = if max > 0.0 { max / n_bins as f64 } else { 1.0 };
    let bin_edges = (0..=n_bins).map(|i| i as f64 * width).collect();
    let mut keys: Vec<f64> = steps.iter().map(|s| s.0).collect();
    keys.sort_by(f64::total_cmp);
    keys.dedup_by(|a, b| a.to_bits() == b.to_bits());
    let groups = keys
        .into_iter()
        .map(|m| {
            let mut histogram = vec![0; n_bins];
            let mut sum = 0.0;
            let mut count = 0;
            for &(_, d) in steps.iter().filter(|s| s.0.to_bits() == m.to_bits()) {
                sum += d;
                count += 1;
                histogram[((d / width) as usize).min(n_bins - 1)] += 1;
            }
            StepGroup {
                motility: m,
                count,
                mean: sum / count as f64,
                histogram,
            }
        })
        .collect();
    Ok(StepSizeSummary { bin_edges, groups })
}
