//! Potential and motility surfaces.
//!
//! Gridded surfaces are zeroth-order (piecewise-constant) rasters over square
//! cells; analytic surfaces cover the closed forms used by the synthetic
//! studies. Gridded gradients use raster centered differences with a
//! one-sided fallback next to inactive cells.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::linalg::SparseSym;

/// Raster of values over square cells, row-major with row 0 at the bottom.
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedSurface {
    nx: usize,
    ny: usize,
    origin: [f64; 2],
    cell: f64,
    values: Vec<f64>,
    active: Vec<bool>,
    ordinal: Vec<Option<usize>>,
    active_cells: Vec<usize>,
}

impl GriddedSurface {
    pub fn new(
        nx: usize,
        ny: usize,
        origin: [f64; 2],
        cell: f64,
        values: Vec<f64>,
        active: Vec<bool>,
    ) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::Parameter(format!("grid must be non-empty, got {nx}x{ny}")));
        }
        if !(cell > 0.0 && cell.is_finite()) {
            return Err(Error::Parameter(format!("cell side must be positive, got {cell}")));
        }
        if values.len() != nx * ny || active.len() != nx * ny {
            return Err(Error::Shape(format!(
                "expected {} values and mask entries, got {} and {}",
                nx * ny,
                values.len(),
                active.len()
            )));
        }
        let mut ordinal = vec![None; nx * ny];
        let mut active_cells = Vec::new();
        for (idx, &a) in active.iter().enumerate() {
            if a {
                ordinal[idx] = Some(active_cells.len());
                active_cells.push(idx);
            }
        }
        Ok(GriddedSurface {
            nx,
            ny,
            origin,
            cell,
            values,
            active,
            ordinal,
            active_cells,
        })
    }

    /// Fully active grid with every cell set to `value`.
    pub fn filled(nx: usize, ny: usize, origin: [f64; 2], cell: f64, value: f64) -> Result<Self> {
        Self::new(nx, ny, origin, cell, vec![value; nx * ny], vec![true; nx * ny])
    }

    /// Fully active grid sampling `f` at cell centers.
    pub fn from_fn(
        nx: usize,
        ny: usize,
        origin: [f64; 2],
        cell: f64,
        f: impl Fn([f64; 2]) -> f64,
    ) -> Result<Self> {
        let mut grid = Self::filled(nx, ny, origin, cell, 0.0)?;
        for idx in 0..nx * ny {
            grid.values[idx] = f(grid.center(idx));
        }
        Ok(grid)
    }

    /// Same geometry and mask, new active-cell values (in active ordinal order).
    pub fn with_active_values(&self, active_values: &[f64]) -> Result<Self> {
        if active_values.len() != self.active_cells.len() {
            return Err(Error::Shape(format!(
                "expected {} active values, got {}",
                self.active_cells.len(),
                active_values.len()
            )));
        }
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = f64::NAN);
        for (k, &idx) in self.active_cells.iter().enumerate() {
            out.values[idx] = active_values[k];
        }
        Ok(out)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn cell(&self) -> f64 {
        self.cell
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.active
    }

    pub fn is_active(&self, idx: usize) -> bool {
        self.active[idx]
    }

    /// Number of active cells (J).
    pub fn n_active(&self) -> usize {
        self.active_cells.len()
    }

    /// Grid indices of the active cells, in ordinal order.
    pub fn active_cells(&self) -> &[usize] {
        &self.active_cells
    }

    /// Active ordinal of a grid index.
    pub fn ordinal(&self, idx: usize) -> Option<usize> {
        self.ordinal[idx]
    }

    pub fn active_values(&self) -> Vec<f64> {
        self.active_cells.iter().map(|&i| self.values[i]).collect()
    }

    pub fn center(&self, idx: usize) -> [f64; 2] {
        let (ix, iy) = (idx % self.nx, idx / self.nx);
        [
            self.origin[0] + (ix as f64 + 0.5) * self.cell,
            self.origin[1] + (iy as f64 + 0.5) * self.cell,
        ]
    }

    fn axis_index(&self, coord: f64, start: f64, count: usize) -> Option<usize> {
        let u = (coord - start) / self.cell;
        if !(u >= 0.0) || u > count as f64 {
            return None;
        }
        // half-open cells; the upper edge belongs to the last cell
        Some((u.floor() as usize).min(count - 1))
    }

    /// Grid index of the cell containing `pos`, active or not.
    pub fn cell_index(&self, pos: [f64; 2]) -> Option<usize> {
        let ix = self.axis_index(pos[0], self.origin[0], self.nx)?;
        let iy = self.axis_index(pos[1], self.origin[1], self.ny)?;
        Some(iy * self.nx + ix)
    }

    /// Grid index of the active cell containing `pos`.
    pub fn active_index(&self, pos: [f64; 2]) -> Option<usize> {
        self.cell_index(pos).filter(|&i| self.active[i])
    }

    pub fn locate(&self, pos: [f64; 2]) -> Result<usize> {
        self.active_index(pos).ok_or(Error::OutOfDomain {
            x: pos[0],
            y: pos[1],
        })
    }

    pub fn evaluate(&self, pos: [f64; 2]) -> Result<f64> {
        Ok(self.values[self.locate(pos)?])
    }

    /// Centered-difference stencil for the derivative along `axis`, with the
    /// one-sided fallback next to inactive cells. Empty when both sides are
    /// inactive. Entries are `(grid index, weight)`.
    pub fn gradient_stencil(&self, pos: [f64; 2], axis: usize, fd_step: f64) -> Result<Stencil> {
        let here = self.locate(pos)?;
        let mut plus = pos;
        plus[axis] += fd_step;
        let mut minus = pos;
        minus[axis] -= fd_step;
        let mut st = Stencil::default();
        match (self.active_index(plus), self.active_index(minus)) {
            (Some(p), Some(m)) => {
                st.push(p, 0.5 / fd_step);
                st.push(m, -0.5 / fd_step);
            }
            (Some(p), None) => {
                st.push(p, 1.0 / fd_step);
                st.push(here, -1.0 / fd_step);
            }
            (None, Some(m)) => {
                st.push(here, 1.0 / fd_step);
                st.push(m, -1.0 / fd_step);
            }
            (None, None) => {}
        }
        Ok(st)
    }

    /// Centered-difference gradient; errors if an offset leaves the active region.
    pub fn gradient(&self, pos: [f64; 2], fd_step: f64) -> Result<[f64; 2]> {
        self.locate(pos)?;
        let mut g = [0.0; 2];
        for (axis, gu) in g.iter_mut().enumerate() {
            let mut plus = pos;
            plus[axis] += fd_step;
            let mut minus = pos;
            minus[axis] -= fd_step;
            let (p, m) = match (self.active_index(plus), self.active_index(minus)) {
                (Some(p), Some(m)) => (p, m),
                _ => {
                    return Err(Error::Boundary {
                        x: pos[0],
                        y: pos[1],
                    })
                }
            };
            *gu = (self.values[p] - self.values[m]) / (2.0 * fd_step);
        }
        Ok(g)
    }

    /// Gradient with one-sided differences at boundary cells (total on the active region).
    pub fn gradient_one_sided(&self, pos: [f64; 2], fd_step: f64) -> Result<[f64; 2]> {
        let mut g = [0.0; 2];
        for (axis, gu) in g.iter_mut().enumerate() {
            *gu = self.gradient_stencil(pos, axis, fd_step)?.apply(&self.values);
        }
        Ok(g)
    }

    /// Rook-adjacent active neighbours of an active grid index.
    pub fn neighbours(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        let (ix, iy) = (idx % self.nx, idx / self.nx);
        let mut out = [None; 4];
        if ix > 0 {
            out[0] = Some(idx - 1);
        }
        if ix + 1 < self.nx {
            out[1] = Some(idx + 1);
        }
        if iy > 0 {
            out[2] = Some(idx - self.nx);
        }
        if iy + 1 < self.ny {
            out[3] = Some(idx + self.nx);
        }
        out.into_iter().flatten().filter(|&j| self.active[j])
    }

    /// Connected components of the active cells under rook adjacency.
    /// Returns a component label per active ordinal and the component count.
    pub fn components(&self) -> (Vec<usize>, usize) {
        let n = self.n_active();
        let mut label = vec![usize::MAX; n];
        let mut count = 0;
        let mut stack = Vec::new();
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            label[start] = count;
            stack.push(self.active_cells[start]);
            while let Some(idx) = stack.pop() {
                for nb in self.neighbours(idx) {
                    let k = self.ordinal[nb].unwrap();
                    if label[k] == usize::MAX {
                        label[k] = count;
                        stack.push(nb);
                    }
                }
            }
            count += 1;
        }
        (label, count)
    }

    /// Reads the ASCII raster format: header `nx ny x0 y0 cell`, then `ny`
    /// rows of `nx` values from the top row down, `NA` marking inactive cells.
    pub fn read_ascii<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader
            .lines()
            .enumerate()
            .filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()));
        let (hline, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty raster".into(),
        })?;
        let header = header?;
        let parse_err = |line: usize, msg: String| Error::Parse {
            line: line as u64 + 1,
            msg,
        };
        let tok: Vec<&str> = header.split_whitespace().collect();
        if tok.len() != 5 {
            return Err(parse_err(hline, format!("header needs 5 fields, got {}", tok.len())));
        }
        let nx: usize = tok[0].parse().map_err(|e| parse_err(hline, format!("nx: {e}")))?;
        let ny: usize = tok[1].parse().map_err(|e| parse_err(hline, format!("ny: {e}")))?;
        let mut nums = [0.0; 3];
        for (k, t) in tok[2..].iter().enumerate() {
            nums[k] = t.parse().map_err(|e| parse_err(hline, format!("{t}: {e}")))?;
        }
        let mut values = vec![f64::NAN; nx * ny];
        let mut active = vec![false; nx * ny];
        for row in 0..ny {
            let (ln, line) = lines.next().ok_or(Error::Parse {
                line: hline as u64 + 2 + row as u64,
                msg: format!("expected {ny} raster rows, found {row}"),
            })?;
            let line = line?;
            let iy = ny - 1 - row;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != nx {
                return Err(parse_err(ln, format!("expected {nx} values, got {}", fields.len())));
            }
            for (ix, f) in fields.iter().enumerate() {
                if *f == "NA" {
                    continue;
                }
                let v: f64 = f.parse().map_err(|e| parse_err(ln, format!("{f}: {e}")))?;
                values[iy * nx + ix] = v;
                active[iy * nx + ix] = true;
            }
        }
        Self::new(nx, ny, [nums[0], nums[1]], nums[2], values, active)
    }

    pub fn write_ascii<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "{} {} {} {} {}",
            self.nx,
            self.ny,
            fmt_f64(self.origin[0]),
            fmt_f64(self.origin[1]),
            fmt_f64(self.cell)
        )?;
        for iy in (0..self.ny).rev() {
            let row: Vec<String> = (0..self.nx)
                .map(|ix| {
                    let idx = iy * self.nx + ix;
                    if self.active[idx] {
                        fmt_f64(self.values[idx])
                    } else {
                        "NA".to_string()
                    }
                })
                .collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        Ok(())
    }
}

/// Sparse linear functional over grid cells.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Stencil {
    entries: Vec<(usize, f64)>,
}

impl Stencil {
    fn push(&mut self, idx: usize, w: f64) {
        match self.entries.iter_mut().find(|(i, _)| *i == idx) {
            Some(e) => e.1 += w,
            None => self.entries.push((idx, w)),
        }
        self.entries.retain(|&(_, w)| w != 0.0);
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn apply(&self, values: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, w)| w * values[i]).sum()
    }
}

/// Closed-form surfaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AnalyticSurface {
    Constant { c: f64 },
    /// `k |r - center|²`
    Quadratic { k: f64, center: [f64; 2] },
    /// `k (|x - a_x| + |y - a_y|)`, gradient `k sign(r - a)` with sign(0) = 0.
    AbsSign { k: f64, attractor: [f64; 2] },
    /// `c x`
    LinearX { c: f64 },
    /// `low` where `y <= threshold`, `high` above.
    StepY { low: f64, high: f64, threshold: f64 },
    /// `slope y + intercept`
    LinearY { slope: f64, intercept: f64 },
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

impl AnalyticSurface {
    pub fn evaluate(&self, r: [f64; 2]) -> f64 {
        match *self {
            AnalyticSurface::Constant { c } => c,
            AnalyticSurface::Quadratic { k, center } => {
                let (dx, dy) = (r[0] - center[0], r[1] - center[1]);
                k * (dx * dx + dy * dy)
            }
            AnalyticSurface::AbsSign { k, attractor } => {
                k * ((r[0] - attractor[0]).abs() + (r[1] - attractor[1]).abs())
            }
            AnalyticSurface::LinearX { c } => c * r[0],
            AnalyticSurface::StepY {
                low,
                high,
                threshold,
            } => {
                if r[1] <= threshold {
                    low
                } else {
                    high
                }
            }
            AnalyticSurface::LinearY { slope, intercept } => slope * r[1] + intercept,
        }
    }

    pub fn gradient(&self, r: [f64; 2]) -> [f64; 2] {
        match *self {
            AnalyticSurface::Constant { .. } | AnalyticSurface::StepY { .. } => [0.0, 0.0],
            AnalyticSurface::Quadratic { k, center } => {
                [2.0 * k * (r[0] - center[0]), 2.0 * k * (r[1] - center[1])]
            }
            AnalyticSurface::AbsSign { k, attractor } => [
                k * sign0(r[0] - attractor[0]),
                k * sign0(r[1] - attractor[1]),
            ],
            AnalyticSurface::LinearX { c } => [c, 0.0],
            AnalyticSurface::LinearY { slope, .. } => [0.0, slope],
        }
    }
}

/// Either kind of surface.
#[derive(Debug, Clone, PartialEq)]
pub enum Surface {
    Analytic(AnalyticSurface),
    Gridded(GriddedSurface),
}

impl From<AnalyticSurface> for Surface {
    fn from(s: AnalyticSurface) -> Self {
        Surface::Analytic(s)
    }
}

impl From<GriddedSurface> for Surface {
    fn from(s: GriddedSurface) -> Self {
        Surface::Gridded(s)
    }
}

impl Surface {
    pub fn constant(c: f64) -> Self {
        Surface::Analytic(AnalyticSurface::Constant { c })
    }

    pub fn contains(&self, pos: [f64; 2]) -> bool {
        match self {
            Surface::Analytic(_) => true,
            Surface::Gridded(g) => g.active_index(pos).is_some(),
        }
    }

    pub fn evaluate(&self, pos: [f64; 2]) -> Result<f64> {
        match self {
            Surface::Analytic(a) => Ok(a.evaluate(pos)),
            Surface::Gridded(g) => g.evaluate(pos),
        }
    }

    /// Closed form for analytic surfaces; one-sided-fallback raster
    /// differences with `fd_step` (default one cell) for gridded ones.
    pub fn gradient(&self, pos: [f64; 2], fd_step: Option<f64>) -> Result<[f64; 2]> {
        match self {
            Surface::Analytic(a) => Ok(a.gradient(pos)),
            Surface::Gridded(g) => g.gradient_one_sided(pos, fd_step.unwrap_or(g.cell())),
        }
    }
}

/// Mean drift `m(r) · (−∇p(r))`.
pub fn drift(potential: &Surface, motility: &Surface, pos: [f64; 2]) -> Result<[f64; 2]> {
    let m = motility.evaluate(pos)?;
    let g = potential.gradient(pos, None)?;
    Ok([-m * g[0], -m * g[1]])
}

/// Noise magnitude `σ · m(r)`.
pub fn noise_scale(motility: &Surface, sigma: f64, pos: [f64; 2]) -> Result<f64> {
    if sigma < 0.0 {
        return Err(Error::Parameter(format!("sigma must be >= 0, got {sigma}")));
    }
    Ok(sigma * motility.evaluate(pos)?)
}

/// First-difference (CAR-style) penalty over active cells with rook adjacency.
///
/// Index 0 is a zero row/column reserved for the friction coefficient; active
/// ordinal `k` maps to index `k + 1`.
pub fn car_penalty(grid: &GriddedSurface) -> SparseSym {
    let n = grid.n_active() + 1;
    let mut trip = Vec::new();
    for (k, &idx) in grid.active_cells().iter().enumerate() {
        let mut deg = 0.0;
        for nb in grid.neighbours(idx) {
            deg += 1.0;
            let j = grid.ordinal(nb).unwrap();
            if j < k {
                trip.push((k + 1, j + 1, -1.0));
            }
        }
        trip.push((k + 1, k + 1, deg));
    }
    SparseSym::from_lower_triplets(n, &trip)
}

/// Subtracts the active-cell mean.
pub fn center_surface(surface: &GriddedSurface) -> GriddedSurface {
    let vals = surface.active_values();
    if vals.is_empty() {
        return surface.clone();
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let centered: Vec<f64> = vals.iter().map(|v| v - mean).collect();
    surface
        .with_active_values(&centered)
        .expect("same active count")
}
