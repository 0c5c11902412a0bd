//! Adaptive Metropolis-within-Gibbs for the quadratic-potential model with
//! imputation of unobserved positions.
//!
//! Each sweep updates `(α, β, log σ)` as one random-walk block and then every
//! unobserved position in time order, `x` and `y` jointly. Proposal
//! covariances adapt during the burn-in phase and are frozen afterwards.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::ols::{build_whitened_quadratic, fit_ols, whitened_terms};
use crate::path::MovementPath;
use crate::sampling::Subsample;
use crate::stats::quantile_sorted;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Priors {
    /// `σ ~ InverseGamma(shape, scale)`.
    pub sigma_shape: f64,
    pub sigma_scale: f64,
    /// `β ~ Exponential(rate)`.
    pub beta_rate: f64,
    /// `α ~ Normal(mean, sd²)`.
    pub alpha_mean: f64,
    pub alpha_sd: f64,
    /// Uniform support `[[x_lo, x_hi], [y_lo, y_hi]]` for the first two
    /// positions; filled from the observed ranges when absent.
    pub initial_range: Option<[[f64; 2]; 2]>,
}

impl Default for Priors {
    fn default() -> Self {
        Priors {
            sigma_shape: 1.0,
            sigma_scale: 1.0,
            beta_rate: 1.0,
            alpha_mean: 0.0,
            alpha_sd: 10.0,
            initial_range: None,
        }
    }
}

impl Priors {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma_shape", self.sigma_shape),
            ("sigma_scale", self.sigma_scale),
            ("beta_rate", self.beta_rate),
            ("alpha_sd", self.alpha_sd),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("prior {name} must be > 0, got {v}")));
            }
        }
        if let Some(r) = self.initial_range {
            if r.iter().any(|c| !(c[0] <= c[1])) {
                return Err(Error::Parameter("initial range must have lo <= hi".into()));
            }
        }
        Ok(())
    }

    /// Inflates the prior variances of `α` and `β` by `factor` and the
    /// inverse-gamma scale by `sqrt(factor)`.
    pub fn widened(&self, factor: f64) -> Self {
        Priors {
            alpha_sd: self.alpha_sd * factor.sqrt(),
            beta_rate: self.beta_rate / factor.sqrt(),
            sigma_scale: self.sigma_scale * factor.sqrt(),
            ..*self
        }
    }

    /// Coordinate ranges of the observed positions.
    pub fn with_observed_range(mut self, observed: &MovementPath) -> Self {
        let mut r = [[f64::INFINITY, f64::NEG_INFINITY]; 2];
        for p in observed.positions() {
            for u in 0..2 {
                r[u][0] = r[u][0].min(p[u]);
                r[u][1] = r[u][1].max(p[u]);
            }
        }
        self.initial_range = Some(r);
        self
    }

    /// Log prior of the parameters; `−∞` outside the support.
    pub fn log_density(&self, alpha: f64, beta: f64, sigma: f64) -> f64 {
        if !(beta > 0.0) || !(sigma > 0.0) {
            return f64::NEG_INFINITY;
        }
        let (a, b) = (self.sigma_shape, self.sigma_scale);
        let lp_sigma = a * b.ln() - ln_gamma(a) - (a + 1.0) * sigma.ln() - b / sigma;
        let lp_beta = self.beta_rate.ln() - self.beta_rate * beta;
        let za = (alpha - self.alpha_mean) / self.alpha_sd;
        let lp_alpha = -0.5 * LN_2PI - self.alpha_sd.ln() - 0.5 * za * za;
        lp_sigma + lp_beta + lp_alpha
    }

    fn log_initial(&self, pos: &[f64; 2]) -> f64 {
        let Some(range) = self.initial_range else {
            return 0.0;
        };
        let mut lp = 0.0;
        for u in 0..2 {
            let [lo, hi] = range[u];
            if pos[u] < lo || pos[u] > hi {
                return f64::NEG_INFINITY;
            }
            if hi > lo {
                lp -= (hi - lo).ln();
            }
        }
        lp
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MCMCConfig {
    pub adapt_iters: usize,
    pub sample_iters: usize,
    /// Target acceptance rate of the `(α, β, log σ)` block.
    pub param_target: f64,
    /// Target acceptance rate of each 2-D position block.
    pub position_target: f64,
    /// Keep every `position_thin`-th sweep of the imputed positions.
    pub position_thin: usize,
    /// Robbins–Monro step exponent for the log proposal scale.
    pub adapt_decay: f64,
    /// Proposals stay diagonal until a block has this many adaptation draws.
    pub empirical_after: usize,
    pub seed: u64,
}

impl Default for MCMCConfig {
    fn default() -> Self {
        MCMCConfig {
            adapt_iters: 100_000,
            sample_iters: 100_000,
            param_target: 0.234,
            position_target: 0.44,
            position_thin: 10,
            adapt_decay: 0.6,
            empirical_after: 200,
            seed: 0,
        }
    }
}

impl MCMCConfig {
    pub fn desk() -> Self {
        MCMCConfig {
            adapt_iters: 20_000,
            sample_iters: 20_000,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_iters < 1 {
            return Err(Error::Parameter("sample_iters must be >= 1".into()));
        }
        if self.position_thin < 1 {
            return Err(Error::Parameter("position_thin must be >= 1".into()));
        }
        for t in [self.param_target, self.position_target] {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::Parameter(format!("acceptance targets must be in (0, 1), got {t}")));
            }
        }
        if !(self.adapt_decay > 0.5 && self.adapt_decay <= 1.0) {
            return Err(Error::Parameter("adapt_decay must be in (0.5, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosteriorDraws {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub sigma: Vec<f64>,
    pub latent_times: Vec<f64>,
    /// Thinned imputed positions, one vector per kept sweep.
    pub position_draws: Vec<Vec<[f64; 2]>>,
    /// Exact posterior means of the imputed positions over all sample sweeps.
    pub position_mean: Vec<[f64; 2]>,
    pub param_acceptance: f64,
    pub position_acceptance: f64,
    /// No parameter proposal was accepted during adaptation.
    pub stuck: bool,
}

impl PosteriorDraws {
    pub fn sigma2(&self) -> Vec<f64> {
        self.sigma.iter().map(|s| s * s).collect()
    }

    /// Equal-tailed intervals per imputed position, `[[x_lo, x_hi], [y_lo, y_hi]]`.
    pub fn position_intervals(&self, level: f64) -> Vec<[[f64; 2]; 2]> {
        (0..self.latent_times.len())
            .map(|k| {
                let mut out = [[0.0; 2]; 2];
                for u in 0..2 {
                    let xs: Vec<f64> = self.position_draws.iter().map(|d| d[k][u]).collect();
                    out[u] = credible_interval(&xs, level);
                }
                out
            })
            .collect()
    }
}

/// Equal-tailed interval from the `(1−level)/2` and `(1+level)/2` quantiles,
/// interpolated between order statistics at position `n·p + ½`.
pub fn credible_interval(draws: &[f64], level: f64) -> [f64; 2] {
    assert!(level > 0.0 && level < 1.0, "level must be in (0, 1)");
    let mut v = draws.to_vec();
    v.sort_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - level);
    [quantile_sorted(&v, tail), quantile_sorted(&v, 1.0 - tail)]
}

/// Log of the joint density of the full path and the parameters.
pub fn log_joint(alpha: f64, beta: f64, sigma: f64, full_path: &MovementPath, priors: &Priors) -> f64 {
    let lp = priors.log_density(alpha, beta, sigma);
    if lp == f64::NEG_INFINITY {
        return lp;
    }
    let r = full_path.positions();
    let lp_init: f64 = r.iter().take(2).map(|p| priors.log_initial(p)).sum();
    if lp_init == f64::NEG_INFINITY {
        return lp_init;
    }
    let stats = SuffStats::new(full_path.times(), r);
    lp + lp_init + stats.log_lik(alpha, beta, sigma)
}

/// Sums of the whitened regression that make the likelihood an O(1)
/// function of `(α, β, σ)`.
#[derive(Debug, Clone, Copy, Default)]
struct SuffStats {
    rows: f64,
    log_scale: f64,
    yy: f64,
    xy: [f64; 2],
    xx: [[f64; 2]; 2],
}

impl SuffStats {
    fn new(t: &[f64], r: &[[f64; 2]]) -> Self {
        let mut s = SuffStats::default();
        for tau in 0..t.len().saturating_sub(2) {
            let h0 = t[tau + 1] - t[tau];
            let h1 = t[tau + 2] - t[tau + 1];
            s.log_scale += 2.0 * (0.5 * h0.ln() + h1.ln());
            for u in 0..2 {
                let (y, x) = whitened_terms(h0, h1, r[tau][u], r[tau + 1][u], r[tau + 2][u]);
                s.rows += 1.0;
                s.yy += y * y;
                for i in 0..2 {
                    s.xy[i] += x[i] * y;
                    for j in 0..2 {
                        s.xx[i][j] += x[i] * x[j];
                    }
                }
            }
        }
        s
    }

    fn sse(&self, alpha: f64, beta: f64) -> f64 {
        let c = [alpha, beta];
        let mut q = self.yy - 2.0 * (c[0] * self.xy[0] + c[1] * self.xy[1]);
        for i in 0..2 {
            for j in 0..2 {
                q += c[i] * c[j] * self.xx[i][j];
            }
        }
        q.max(0.0)
    }

    fn log_lik(&self, alpha: f64, beta: f64, sigma: f64) -> f64 {
        -self.rows * (sigma.ln() + 0.5 * LN_2PI) - self.log_scale - self.sse(alpha, beta) / (2.0 * sigma * sigma)
    }
}

/// Random-walk proposal with Robbins–Monro scale adaptation and an empirical
/// covariance estimated from the chain history.
#[derive(Debug, Clone)]
struct AdaptiveBlock<const D: usize> {
    init_sd: [f64; D],
    log_scale: f64,
    n: usize,
    mean: [f64; D],
    m2: [[f64; D]; D],
    factor: [[f64; D]; D],
    frozen: bool,
    accepted: u64,
    proposed: u64,
}

impl<const D: usize> AdaptiveBlock<D> {
    fn new(init_sd: [f64; D]) -> Self {
        let mut b = AdaptiveBlock {
            init_sd,
            log_scale: 0.0,
            n: 0,
            mean: [0.0; D],
            m2: [[0.0; D]; D],
            factor: [[0.0; D]; D],
            frozen: false,
            accepted: 0,
            proposed: 0,
        };
        b.refresh(usize::MAX);
        b
    }

    fn propose<R: Rng + ?Sized>(&self, x: &[f64; D], rng: &mut R) -> [f64; D] {
        let mut z = [0.0; D];
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let mut out = *x;
        for i in 0..D {
            for j in 0..=i {
                out[i] += self.factor[i][j] * z[j];
            }
        }
        out
    }

    fn refresh(&mut self, empirical_after: usize) {
        let scale = self.log_scale.exp();
        let mut cov = [[0.0; D]; D];
        if self.n >= empirical_after.max(2 * D + 1) {
            let s2 = scale * scale * 2.38 * 2.38 / D as f64;
            for i in 0..D {
                for j in 0..D {
                    cov[i][j] = s2 * self.m2[i][j] / (self.n - 1) as f64;
                }
                cov[i][i] += s2 * 1e-6 * self.init_sd[i] * self.init_sd[i];
            }
        } else {
            for i in 0..D {
                cov[i][i] = (scale * self.init_sd[i]).powi(2);
            }
        }
        if let Some(l) = cholesky(&cov) {
            self.factor = l;
        }
    }

    /// Records the post-step state and acceptance of one adaptive iteration.
    fn adapt(&mut self, state: &[f64; D], accepted: bool, target: f64, decay: f64, empirical_after: usize) {
        let step = ((self.proposed + 1) as f64).powf(-decay);
        self.log_scale = (self.log_scale + step * (f64::from(u8::from(accepted)) - target)).clamp(-15.0, 15.0);
        self.n += 1;
        let n = self.n as f64;
        let mut delta = [0.0; D];
        for i in 0..D {
            delta[i] = state[i] - self.mean[i];
            self.mean[i] += delta[i] / n;
        }
        for i in 0..D {
            for j in 0..D {
                self.m2[i][j] += delta[i] * (state[j] - self.mean[j]);
            }
        }
        if self.n < 64 || self.n.is_multiple_of(16) {
            self.refresh(empirical_after);
        }
    }

    fn freeze(&mut self, empirical_after: usize) {
        self.refresh(empirical_after);
        self.frozen = true;
        self.accepted = 0;
        self.proposed = 0;
    }

    fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += u64::from(accepted);
    }
}

fn cholesky<const D: usize>(a: &[[f64; D]; D]) -> Option<[[f64; D]; D]> {
    let mut l = [[0.0; D]; D];
    for i in 0..D {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

/// Sampler state over the merged observed/unobserved time grid.
struct Chain<'a> {
    times: Vec<f64>,
    pos: Vec<[f64; 2]>,
    latent: Vec<usize>,
    priors: &'a Priors,
    /// `(α, β, log σ)`.
    theta: [f64; 3],
    stats: SuffStats,
}

impl<'a> Chain<'a> {
    fn param_log_target(&self, theta: &[f64; 3]) -> f64 {
        let sigma = theta[2].exp();
        let lp = self.priors.log_density(theta[0], theta[1], sigma);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        lp + theta[2] + self.stats.log_lik(theta[0], theta[1], sigma)
    }

    /// Metropolis log ratio for replacing `theta` by `proposal`.
    fn param_log_ratio(&self, proposal: &[f64; 3]) -> f64 {
        let new = self.param_log_target(proposal);
        if new == f64::NEG_INFINITY {
            return new;
        }
        new - self.param_log_target(&self.theta)
    }

    /// Sum of `−z²/2σ²` over transitions touching index `j` with `r_j = value`.
    fn local_log_lik(&self, j: usize, value: [f64; 2]) -> f64 {
        let n = self.times.len();
        let (alpha, beta) = (self.theta[0], self.theta[1]);
        let inv2s2 = 0.5 * (-2.0 * self.theta[2]).exp();
        let get = |i: usize| if i == j { value } else { self.pos[i] };
        let mut ll = 0.0;
        for tau in j.saturating_sub(2)..=j {
            if tau + 2 >= n {
                break;
            }
            let h0 = self.times[tau + 1] - self.times[tau];
            let h1 = self.times[tau + 2] - self.times[tau + 1];
            let (r0, r1, r2) = (get(tau), get(tau + 1), get(tau + 2));
            for u in 0..2 {
                let (y, x) = whitened_terms(h0, h1, r0[u], r1[u], r2[u]);
                let z = y - alpha * x[0] - beta * x[1];
                ll -= z * z * inv2s2;
            }
        }
        if j < 2 {
            ll += self.priors.log_initial(&value);
        }
        ll
    }

    fn position_log_ratio(&self, j: usize, proposal: [f64; 2]) -> f64 {
        let new = self.local_log_lik(j, proposal);
        if new == f64::NEG_INFINITY {
            return new;
        }
        new - self.local_log_lik(j, self.pos[j])
    }
}

fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
}

/// Times, positions and indices of the imputed entries of a merged path.
type MergedPath = (Vec<f64>, Vec<[f64; 2]>, Vec<usize>);

/// Merges observed and unobserved times; returns times, positions and the
/// indices of unobserved entries. Unobserved positions start on the linear
/// interpolant of the observed path (held constant beyond its ends).
fn merge_grid(sub: &Subsample) -> Result<MergedPath> {
    let ot = sub.observed.times();
    let op = sub.observed.positions();
    let mut entries: Vec<(f64, Option<[f64; 2]>)> = ot.iter().zip(op).map(|(&t, &r)| (t, Some(r))).collect();
    entries.extend(sub.unobserved_times.iter().map(|&t| (t, None)));
    entries.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (i, w) in entries.windows(2).enumerate() {
        if !(w[1].0 > w[0].0) {
            return Err(Error::DegenerateStep { index: i + 1 });
        }
    }
    let interp = |t: f64| -> [f64; 2] {
        let k = ot.partition_point(|&s| s <= t);
        if k == 0 {
            return op[0];
        }
        if k == ot.len() {
            return op[ot.len() - 1];
        }
        let w = (t - ot[k - 1]) / (ot[k] - ot[k - 1]);
        [0, 1].map(|u| op[k - 1][u] + w * (op[k][u] - op[k - 1][u]))
    };
    let mut times = Vec::with_capacity(entries.len());
    let mut pos = Vec::with_capacity(entries.len());
    let mut latent = Vec::new();
    for (i, (t, r)) in entries.into_iter().enumerate() {
        times.push(t);
        match r {
            Some(r) => pos.push(r),
            None => {
                latent.push(i);
                pos.push(interp(t));
            }
        }
    }
    Ok((times, pos, latent))
}

/// Starting values from least squares on the observed points, clamped to
/// a sensible range; fixed defaults when too few points are observed.
fn initial_theta(observed: &MovementPath) -> [f64; 3] {
    let fitted = build_whitened_quadratic(observed)
        .and_then(|rows| fit_ols(&rows, 0.95))
        .ok()
        .filter(|f| f.coef.iter().all(|c| c.is_finite()) && f.sigma2.is_finite());
    match fitted {
        Some(f) => [
            f.coef[0].clamp(1e-3, 10.0),
            f.coef[1].clamp(1e-2, 10.0),
            f.sigma2.sqrt().clamp(1e-2, 100.0).ln(),
        ],
        None => [0.1, 0.5, 0.0],
    }
}

/// Runs `adapt_iters` adaptive sweeps (discarded) followed by
/// `sample_iters` sweeps with frozen proposals.
pub fn run_mwg<R: Rng + ?Sized>(
    subsample: &Subsample,
    priors: &Priors,
    config: &MCMCConfig,
    rng: &mut R,
) -> Result<PosteriorDraws> {
    config.validate()?;
    let priors = match priors.initial_range {
        Some(_) => *priors,
        None => priors.with_observed_range(&subsample.observed),
    };
    priors.validate()?;
    let (times, pos, latent) = merge_grid(subsample)?;
    let theta = initial_theta(&subsample.observed);
    let stats = SuffStats::new(&times, &pos);
    let mut chain = Chain {
        times,
        pos,
        latent,
        priors: &priors,
        theta,
        stats,
    };

    let sigma0 = theta[2].exp();
    let mut param_block = AdaptiveBlock::<3>::new([0.1 * theta[0] + 1e-3, 0.1 * theta[1] + 1e-3, 0.1]);
    let mut site_blocks: Vec<AdaptiveBlock<2>> = chain
        .latent
        .iter()
        .map(|&j| {
            let n = chain.times.len();
            let prev = if j > 0 { chain.times[j] - chain.times[j - 1] } else { f64::INFINITY };
            let next = if j + 1 < n { chain.times[j + 1] - chain.times[j] } else { f64::INFINITY };
            let h = prev.min(next);
            let sd = (0.5 * sigma0 * h.powf(1.5)).max(1e-6);
            AdaptiveBlock::new([sd, sd])
        })
        .collect();

    let n_latent = chain.latent.len();
    let mut out = PosteriorDraws {
        alpha: Vec::with_capacity(config.sample_iters),
        beta: Vec::with_capacity(config.sample_iters),
        sigma: Vec::with_capacity(config.sample_iters),
        latent_times: chain.latent.iter().map(|&j| chain.times[j]).collect(),
        position_draws: Vec::with_capacity(config.sample_iters / config.position_thin + 1),
        position_mean: vec![[0.0; 2]; n_latent],
        param_acceptance: 0.0,
        position_acceptance: 0.0,
        stuck: false,
    };

    let total = config.adapt_iters + config.sample_iters;
    for iter in 0..total {
        let adapting = iter < config.adapt_iters;
        if iter == config.adapt_iters {
            out.stuck = config.adapt_iters > 0 && param_block.accepted == 0;
            param_block.freeze(config.empirical_after);
            for b in &mut site_blocks {
                b.freeze(config.empirical_after);
            }
        }

        let proposal = param_block.propose(&chain.theta, rng);
        let ok = accept(chain.param_log_ratio(&proposal), rng);
        if ok {
            chain.theta = proposal;
        }
        param_block.record(ok);
        if adapting {
            param_block.adapt(&chain.theta, ok, config.param_target, config.adapt_decay, config.empirical_after);
        }

        if n_latent > 0 {
            for (k, block) in site_blocks.iter_mut().enumerate() {
                let j = chain.latent[k];
                let proposal = block.propose(&chain.pos[j], rng);
                let ok = accept(chain.position_log_ratio(j, proposal), rng);
                if ok {
                    chain.pos[j] = proposal;
                }
                block.record(ok);
                if adapting {
                    block.adapt(&chain.pos[j], ok, config.position_target, config.adapt_decay, config.empirical_after);
                }
            }
            chain.stats = SuffStats::new(&chain.times, &chain.pos);
        }

        if !adapting {
            out.alpha.push(chain.theta[0]);
            out.beta.push(chain.theta[1]);
            out.sigma.push(chain.theta[2].exp());
            for (m, &j) in out.position_mean.iter_mut().zip(&chain.latent) {
                m[0] += chain.pos[j][0];
                m[1] += chain.pos[j][1];
            }
            if (iter - config.adapt_iters).is_multiple_of(config.position_thin) {
                out.position_draws.push(chain.latent.iter().map(|&j| chain.pos[j]).collect());
            }
        }
    }

    let ns = config.sample_iters as f64;
    for m in &mut out.position_mean {
        m[0] /= ns;
        m[1] /= ns;
    }
    out.param_acceptance = param_block.accepted as f64 / param_block.proposed as f64;
    if n_latent > 0 {
        out.position_acceptance = site_blocks
            .iter()
            .map(|b| b.accepted as f64 / b.proposed as f64)
            .sum::<f64>()
            / n_latent as f64;
    }
    Ok(out)
}
