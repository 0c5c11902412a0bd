//! Regular and lattice-and-random-intermediate-point (LARI) subsampling of
//! recorded paths.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::path::MovementPath;

/// Relative tolerance used to decide whether a time sits on a lattice.
const TIME_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SamplingDesign {
    Regular { h: f64 },
    /// Lattice every `2h` plus one uniform intermediate time per interval,
    /// optionally restricted to multiples of `resolution` from the interval start.
    Lari { h: f64, resolution: Option<f64> },
}

impl SamplingDesign {
    pub fn h(&self) -> f64 {
        match *self {
            SamplingDesign::Regular { h } | SamplingDesign::Lari { h, .. } => h,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SamplingDesign::Regular { .. } => "regular",
            SamplingDesign::Lari { .. } => "lari",
        }
    }

    pub fn apply<R: Rng + ?Sized>(&self, path: &MovementPath, rng: &mut R) -> Result<Subsample> {
        match *self {
            SamplingDesign::Regular { h } => subsample_regular(path, h),
            SamplingDesign::Lari { h, resolution } => subsample_lari(path, h, resolution, rng),
        }
    }
}

/// Observed part of a path plus the times (and, for synthetic data, the
/// positions) that were removed.
#[derive(Debug, Clone, PartialEq)]
pub struct Subsample {
    pub observed: MovementPath,
    pub unobserved_times: Vec<f64>,
    pub unobserved_truth: Option<Vec<[f64; 2]>>,
}

impl Subsample {
    /// Unobserved points as a path-like record (for CSV output), if any truth exists.
    pub fn unobserved_path(&self) -> Option<(Vec<f64>, Vec<[f64; 2]>)> {
        self.unobserved_truth
            .as_ref()
            .map(|t| (self.unobserved_times.clone(), t.clone()))
    }
}

fn is_multiple(x: f64, unit: f64) -> bool {
    let q = x / unit;
    (q - q.round()).abs() <= TIME_TOL * q.abs().max(1.0)
}

fn native_spacing(path: &MovementPath) -> f64 {
    path.steps().into_iter().fold(f64::INFINITY, f64::min)
}

fn split(path: &MovementPath, keep: &[bool]) -> Result<Subsample> {
    let mut ot = Vec::new();
    let mut op = Vec::new();
    let mut ut = Vec::new();
    let mut up = Vec::new();
    for ((&t, &r), &k) in path.times().iter().zip(path.positions()).zip(keep) {
        if k {
            ot.push(t);
            op.push(r);
        } else {
            ut.push(t);
            up.push(r);
        }
    }
    Ok(Subsample {
        observed: MovementPath::new(path.id(), ot, op)?,
        unobserved_times: ut,
        unobserved_truth: Some(up),
    })
}

/// Keeps times `t0, t0 + h, t0 + 2h, …` of the source path.
pub fn subsample_regular(path: &MovementPath, h: f64) -> Result<Subsample> {
    if !(h > 0.0) {
        return Err(Error::Parameter(format!("h must be > 0, got {h}")));
    }
    if !is_multiple(h, native_spacing(path)) {
        return Err(Error::Alignment { h });
    }
    let t0 = path.times()[0];
    let keep: Vec<bool> = path.times().iter().map(|&t| is_multiple(t - t0, h)).collect();
    split(path, &keep)
}

/// LARI design: lattice `t0, t0 + 2h, …` plus one uniformly drawn interior
/// source time per full lattice interval. A trailing partial interval gets
/// the final time `T` as an extra lattice point and no intermediate point.
pub fn subsample_lari<R: Rng + ?Sized>(
    path: &MovementPath,
    h: f64,
    resolution: Option<f64>,
    rng: &mut R,
) -> Result<Subsample> {
    if !(h > 0.0) {
        return Err(Error::Parameter(format!("h must be > 0, got {h}")));
    }
    let spacing = 2.0 * h;
    if !is_multiple(spacing, native_spacing(path)) {
        return Err(Error::Alignment { h: spacing });
    }
    if let Some(res) = resolution {
        if !(res > 0.0) || !is_multiple(spacing, res) {
            return Err(Error::Design(format!(
                "resolution {res} must be positive and divide the lattice spacing {spacing}"
            )));
        }
    }
    let times = path.times();
    let t0 = times[0];
    let n = times.len();
    let mut keep = vec![false; n];
    let lattice: Vec<usize> = (0..n).filter(|&i| is_multiple(times[i] - t0, spacing)).collect();
    for &i in &lattice {
        keep[i] = true;
    }
    for w in lattice.windows(2) {
        let (a, b) = (w[0], w[1]);
        let candidates: Vec<usize> = (a + 1..b)
            .filter(|&i| resolution.is_none_or(|res| is_multiple(times[i] - times[a], res)))
            .collect();
        if candidates.is_empty() {
            return Err(Error::Design(format!(
                "no interior time available in lattice interval ({}, {})",
                times[a], times[b]
            )));
        }
        let pick = candidates[rng.random_range(0..candidates.len())];
        keep[pick] = true;
    }
    keep[n - 1] = true;
    split(path, &keep)
}

/// Drops observations closer than `threshold` to the previously retained one.
pub fn remove_stationary(path: &MovementPath, threshold: f64) -> Result<MovementPath> {
    if !(threshold >= 0.0) {
        return Err(Error::Parameter(format!("threshold must be >= 0, got {threshold}")));
    }
    let mut times = vec![path.times()[0]];
    let mut pos = vec![path.positions()[0]];
    for (&t, &r) in path.times().iter().zip(path.positions()).skip(1) {
        let last = pos[pos.len() - 1];
        let d = ((r[0] - last[0]).powi(2) + (r[1] - last[1]).powi(2)).sqrt();
        if d >= threshold {
            times.push(t);
            pos.push(r);
        }
    }
    if times.len() < 3 {
        return Err(Error::TooShort {
            len: times.len(),
            min: 3,
        });
    }
    MovementPath::new(path.id(), times, pos)
}
