//! Least-squares fits of the discretized model after dividing each
//! observation triple by `h_τ^{1/2}`, which makes the errors iid `N(0, σ²)`.
//!
//! Both drift models share the friction column; they differ only in the
//! drift column:
//!
//! * quadratic potential: coefficient `α = kβ` on `−2 h_τ^{1/2} r_τ`;
//! * sign drift towards `a`: coefficient `kβ` on `−h_τ^{1/2} sign(r_τ − a)`,
//!   reported as `k = coef / β`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::path::MovementPath;
use crate::stats::{chi2_quantile, t_quantile};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DriftModel {
    Quadratic,
    Sign { attractor: [f64; 2] },
}

/// Stacked regression rows, x then y for each consecutive triple.
#[derive(Debug, Clone, PartialEq)]
pub struct WhitenedRows {
    pub model: DriftModel,
    pub response: Vec<f64>,
    /// Columns: drift coefficient, friction `β`.
    pub design: Vec<[f64; 2]>,
}

impl WhitenedRows {
    pub fn len(&self) -> usize {
        self.response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.response.is_empty()
    }

    /// Pools rows from another path fitted with the same model.
    pub fn append(&mut self, other: WhitenedRows) -> Result<()> {
        if self.model != other.model {
            return Err(Error::Parameter("cannot pool rows from different drift models".into()));
        }
        self.response.extend(other.response);
        self.design.extend(other.design);
        Ok(())
    }
}

fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Whitened response and quadratic-model columns `(α, β)` for one
/// coordinate of one triple.
#[inline]
pub(crate) fn whitened_terms(h0: f64, h1: f64, r0: f64, r1: f64, r2: f64) -> (f64, [f64; 2]) {
    let sh0 = h0.sqrt();
    let d1 = r1 - r0;
    let d2 = r2 - r1;
    (d2 / (h1 * sh0) - d1 / (h0 * sh0), [-2.0 * sh0 * r0, -d1 / sh0])
}

fn build(path: &MovementPath, model: DriftModel) -> Result<WhitenedRows> {
    let t = path.times();
    let r = path.positions();
    if t.len() < 3 {
        return Err(Error::TooShort { len: t.len(), min: 3 });
    }
    let mut response = Vec::with_capacity(2 * (t.len() - 2));
    let mut design = Vec::with_capacity(2 * (t.len() - 2));
    for tau in 0..t.len() - 2 {
        let h0 = t[tau + 1] - t[tau];
        let h1 = t[tau + 2] - t[tau + 1];
        if !(h0 > 0.0 && h1 > 0.0) {
            return Err(Error::DegenerateStep { index: tau + 1 });
        }
        for u in 0..2 {
            let (y, mut x) = whitened_terms(h0, h1, r[tau][u], r[tau + 1][u], r[tau + 2][u]);
            if let DriftModel::Sign { attractor } = model {
                x[0] = -h0.sqrt() * sign0(r[tau][u] - attractor[u]);
            }
            response.push(y);
            design.push(x);
        }
    }
    Ok(WhitenedRows {
        model,
        response,
        design,
    })
}

pub fn build_whitened_quadratic(path: &MovementPath) -> Result<WhitenedRows> {
    build(path, DriftModel::Quadratic)
}

pub fn build_whitened_sign(path: &MovementPath, attractor: [f64; 2]) -> Result<WhitenedRows> {
    build(path, DriftModel::Sign { attractor })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OlsFit {
    pub coef: [f64; 2],
    pub std_err: [f64; 2],
    pub cov: [[f64; 2]; 2],
    pub ci: [[f64; 2]; 2],
    pub sigma2: f64,
    pub sigma2_ci: [f64; 2],
    pub rss: f64,
    pub n_rows: usize,
    pub level: f64,
}

/// Ordinary least squares with `σ̂² = RSS / (rows − 2)`, t intervals for the
/// coefficients and a chi-square interval for `σ²`.
pub fn fit_ols(rows: &WhitenedRows, level: f64) -> Result<OlsFit> {
    let n = rows.len();
    if n < 3 {
        return Err(Error::TooShort { len: n, min: 3 });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Parameter(format!("level must be in (0, 1), got {level}")));
    }
    let mut xx = [[0.0; 2]; 2];
    let mut xy = [0.0; 2];
    for (x, &y) in rows.design.iter().zip(&rows.response) {
        for i in 0..2 {
            xy[i] += x[i] * y;
            for j in 0..2 {
                xx[i][j] += x[i] * x[j];
            }
        }
    }
    let det = xx[0][0] * xx[1][1] - xx[0][1] * xx[1][0];
    if !(det > 1e-12 * xx[0][0] * xx[1][1]) || !det.is_finite() {
        return Err(Error::SingularFit(format!(
            "design cross-product is singular (det {det:.3e})"
        )));
    }
    let inv = [
        [xx[1][1] / det, -xx[0][1] / det],
        [-xx[1][0] / det, xx[0][0] / det],
    ];
    let coef = [
        inv[0][0] * xy[0] + inv[0][1] * xy[1],
        inv[1][0] * xy[0] + inv[1][1] * xy[1],
    ];
    let rss: f64 = rows
        .design
        .iter()
        .zip(&rows.response)
        .map(|(x, y)| (y - coef[0] * x[0] - coef[1] * x[1]).powi(2))
        .sum();
    let df = (n - 2) as f64;
    let sigma2 = rss / df;
    let cov = [
        [sigma2 * inv[0][0], sigma2 * inv[0][1]],
        [sigma2 * inv[1][0], sigma2 * inv[1][1]],
    ];
    let std_err = [cov[0][0].sqrt(), cov[1][1].sqrt()];
    let tail = 0.5 * (1.0 - level);
    let t = t_quantile(1.0 - tail, df);
    let ci = [
        [coef[0] - t * std_err[0], coef[0] + t * std_err[0]],
        [coef[1] - t * std_err[1], coef[1] + t * std_err[1]],
    ];
    let sigma2_ci = [rss / chi2_quantile(1.0 - tail, df), rss / chi2_quantile(tail, df)];
    Ok(OlsFit {
        coef,
        std_err,
        cov,
        ci,
        sigma2,
        sigma2_ci,
        rss,
        n_rows: n,
        level,
    })
}

/// Named estimates for reporting (`{model, estimates, ci, sigma2, n_rows}`).
#[derive(Debug, Clone, Serialize)]
pub struct OlsReport {
    pub model: DriftModel,
    pub estimates: BTreeMap<String, f64>,
    pub ci: BTreeMap<String, [f64; 2]>,
    pub sigma2: f64,
    pub n_rows: usize,
}

impl OlsReport {
    pub fn new(model: DriftModel, fit: &OlsFit) -> Self {
        let mut estimates = BTreeMap::new();
        let mut ci = BTreeMap::new();
        let beta = fit.coef[1];
        estimates.insert("beta".to_string(), beta);
        ci.insert("beta".to_string(), fit.ci[1]);
        estimates.insert("sigma2".to_string(), fit.sigma2);
        ci.insert("sigma2".to_string(), fit.sigma2_ci);
        match model {
            DriftModel::Quadratic => {
                estimates.insert("alpha".to_string(), fit.coef[0]);
                ci.insert("alpha".to_string(), fit.ci[0]);
            }
            DriftModel::Sign { .. } => {
                // k = θ/β with a delta-method interval
                let k = fit.coef[0] / beta;
                let g = [1.0 / beta, -fit.coef[0] / (beta * beta)];
                let var = g[0] * g[0] * fit.cov[0][0]
                    + 2.0 * g[0] * g[1] * fit.cov[0][1]
                    + g[1] * g[1] * fit.cov[1][1];
                let half = (fit.ci[1][1] - fit.coef[1]) / fit.std_err[1] * var.sqrt();
                estimates.insert("k".to_string(), k);
                ci.insert("k".to_string(), [k - half, k + half]);
                estimates.insert("k_beta".to_string(), fit.coef[0]);
                ci.insert("k_beta".to_string(), fit.ci[0]);
            }
        }
        OlsReport {
            model,
            estimates,
            ci,
            sigma2: fit.sigma2,
            n_rows: fit.n_rows,
        }
    }

    pub fn covers(&self, name: &str, truth: f64) -> Option<bool> {
        self.ci.get(name).map(|c| c[0] <= truth && truth <= c[1])
    }
}
