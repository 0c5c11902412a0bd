//! Sparse symmetric matrices and an envelope (skyline) LDLᵀ factorization.
//!
//! Grid problems ordered row-major have a bandwidth of a few grid rows, so
//! the envelope of the lower triangle stays narrow and factorization fills
//! only inside it. A dense border row (e.g. a global coefficient ordered
//! last) costs one full row.

use crate::error::{Error, Result};

/// Symmetric sparse matrix in compressed-row form holding both triangles.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSym {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl SparseSym {
    /// Builds from `(row, col, value)` triplets given for the lower triangle
    /// (`row >= col`). Duplicates are summed and mirrored to the upper half.
    pub fn from_lower_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, v) in triplets {
            assert!(i < n && j < n && i >= j, "triplet ({i}, {j}) outside lower triangle");
            rows[i].push((j, v));
            if i != j {
                rows[j].push((i, v));
            }
        }
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(j, _)| j);
            let mut last: Option<usize> = None;
            for (j, v) in row {
                if last == Some(j) {
                    *data.last_mut().unwrap() += v;
                } else {
                    indices.push(j);
                    data.push(v);
                    last = Some(j);
                }
            }
            indptr.push(indices.len());
        }
        SparseSym {
            n,
            indptr,
            indices,
            data,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.data[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.matvec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.n]; self.n];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        out
    }
}

/// Lower-triangular envelope storage of a symmetric matrix.
///
/// Row `i` stores columns `first[i]..=i`.
#[derive(Debug, Clone)]
pub struct Skyline {
    first: Vec<usize>,
    offset: Vec<usize>,
    values: Vec<f64>,
}

impl Skyline {
    /// `first[i] <= i` is the first stored column of row `i`.
    pub fn new(first: Vec<usize>) -> Self {
        let mut offset = Vec::with_capacity(first.len() + 1);
        offset.push(0);
        for (i, &f) in first.iter().enumerate() {
            assert!(f <= i, "envelope start {f} beyond diagonal of row {i}");
            offset.push(offset[i] + (i - f + 1));
        }
        let len = *offset.last().unwrap();
        Skyline {
            first,
            offset,
            values: vec![0.0; len],
        }
    }

    /// Envelope from a per-row list of lower-triangle column indices.
    pub fn from_pattern(n: usize, lower_cols: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut first: Vec<usize> = (0..n).collect();
        for (i, j) in lower_cols {
            let (r, c) = if i >= j { (i, j) } else { (j, i) };
            if c < first[r] {
                first[r] = c;
            }
        }
        Skyline::new(first)
    }

    pub fn n(&self) -> usize {
        self.first.len()
    }

    pub fn envelope_len(&self) -> usize {
        self.values.len()
    }

    fn slot(&self, i: usize, j: usize) -> usize {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        assert!(c >= self.first[r], "entry ({r}, {c}) outside envelope");
        self.offset[r] + (c - self.first[r])
    }

    /// Adds `v` to the symmetric pair `(i, j)` / `(j, i)`.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.values[s] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        if c < self.first[r] {
            0.0
        } else {
            self.values[self.slot(r, c)]
        }
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.values[self.offset[i + 1] - 1]
    }

    /// Replaces row/column `i` by the identity row (pins unknown `i` to the rhs).
    pub fn pin(&mut self, i: usize) {
        let n = self.n();
        for c in self.first[i]..i {
            let s = self.slot(i, c);
            self.values[s] = 0.0;
        }
        for r in (i + 1)..n {
            if self.first[r] <= i {
                let s = self.slot(r, i);
                self.values[s] = 0.0;
            }
        }
        let s = self.slot(i, i);
        self.values[s] = 1.0;
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let f = self.first[i];
            let row = &self.values[self.offset[i]..self.offset[i + 1]];
            for (k, &v) in row.iter().enumerate() {
                let j = f + k;
                y[i] += v * x[j];
                if j != i {
                    y[j] += v * x[i];
                }
            }
        }
        y
    }

    /// LDLᵀ factorization inside the envelope. Fails when a pivot falls
    /// below `rel_tol` times the original diagonal entry.
    pub fn factor(&self, rel_tol: f64) -> Result<LdlFactor> {
        let n = self.n();
        let mut l = self.values.clone();
        let mut d = vec![0.0; n];
        let mut w: Vec<f64> = Vec::new();
        let mut min_ratio = f64::INFINITY;
        for i in 0..n {
            let fi = self.first[i];
            let base_i = self.offset[i];
            w.clear();
            w.resize(i - fi, 0.0);
            for j in fi..i {
                let fj = self.first[j];
                let start = fi.max(fj);
                let base_j = self.offset[j];
                let mut s = l[base_i + (j - fi)];
                for k in start..j {
                    s -= w[k - fi] * l[base_j + (k - fj)];
                }
                w[j - fi] = s;
                l[base_i + (j - fi)] = s / d[j];
            }
            let mut di = l[base_i + (i - fi)];
            for k in fi..i {
                di -= w[k - fi] * l[base_i + (k - fi)];
            }
            let orig = self.values[base_i + (i - fi)].abs();
            let scale = if orig > 0.0 { orig } else { 1.0 };
            let ratio = di / scale;
            if !(ratio > rel_tol) {
                return Err(Error::Rank(format!(
                    "pivot {i} is {di:.3e} (diagonal {orig:.3e})"
                )));
            }
            min_ratio = min_ratio.min(ratio);
            d[i] = di;
            l[base_i + (i - fi)] = 1.0;
        }
        Ok(LdlFactor {
            first: self.first.clone(),
            offset: self.offset.clone(),
            l,
            d,
            min_pivot_ratio: min_ratio,
        })
    }
}

/// Envelope LDLᵀ factor; unit diagonal of L is stored in place.
#[derive(Debug, Clone)]
pub struct LdlFactor {
    first: Vec<usize>,
    offset: Vec<usize>,
    l: Vec<f64>,
    d: Vec<f64>,
    min_pivot_ratio: f64,
}

impl LdlFactor {
    pub fn n(&self) -> usize {
        self.d.len()
    }

    /// Smallest pivot relative to its original diagonal entry.
    pub fn min_pivot_ratio(&self) -> f64 {
        self.min_pivot_ratio
    }

    fn l_at(&self, r: usize, c: usize) -> f64 {
        self.l[self.offset[r] + (c - self.first[r])]
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n();
        assert_eq!(b.len(), n);
        let mut x = b.to_vec();
        for i in 0..n {
            let fi = self.first[i];
            let mut s = x[i];
            for j in fi..i {
                s -= self.l_at(i, j) * x[j];
            }
            x[i] = s;
        }
        for i in 0..n {
            x[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            let xi = x[i];
            for j in self.first[i]..i {
                x[j] -= self.l_at(i, j) * xi;
            }
        }
        x
    }

    /// Diagonal of the inverse by the Takahashi recurrences, evaluated only on
    /// the envelope (which is closed under the recurrence).
    pub fn inverse_diagonal(&self) -> Vec<f64> {
        let n = self.n();
        // below[i] = rows k > i whose envelope reaches column i
        let mut below: Vec<Vec<usize>> = vec![Vec::new(); n];
        for k in 0..n {
            for i in self.first[k]..k {
                below[i].push(k);
            }
        }
        let mut z = vec![0.0; self.l.len()];
        let at = |r: usize, c: usize| -> usize {
            let (r, c) = if r >= c { (r, c) } else { (c, r) };
            self.offset[r] + (c - self.first[r])
        };
        for i in (0..n).rev() {
            let cols = &below[i];
            for &j in cols {
                let mut s = 0.0;
                for &k in cols {
                    s -= self.l_at(k, i) * z[at(k, j)];
                }
                z[at(j, i)] = s;
            }
            let mut s = 1.0 / self.d[i];
            for &k in cols {
                s -= self.l_at(k, i) * z[at(k, i)];
            }
            z[at(i, i)] = s;
        }
        (0..n).map(|i| z[at(i, i)]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(n: usize) -> Skyline {
        let mut first: Vec<usize> = (0..n).map(|i| i.saturating_sub(1)).collect();
        first[0] = 0;
        let mut s = Skyline::new(first);
        for i in 0..n {
            s.add(i, i, 4.0);
            if i > 0 {
                s.add(i, i - 1, -1.0);
            }
        }
        s
    }

    #[test]
    fn solve_tridiagonal() {
        let s = tridiag(6);
        let x_true: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
        let b = s.matvec(&x_true);
        let x = s.factor(1e-12).unwrap().solve(&b);
        for (a, b) in x.iter().zip(&x_true) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn inverse_diagonal_matches_solves() {
        // arrow + band structure with a dense last row
        let n: usize = 7;
        let mut first: Vec<usize> = (0..n).map(|i| i.saturating_sub(2)).collect();
        first[n - 1] = 0;
        let mut s = Skyline::new(first);
        for i in 0..n {
            s.add(i, i, 5.0 + i as f64);
            if i >= 1 {
                s.add(i, i - 1, -1.0);
            }
            if i >= 2 && i < n - 1 {
                s.add(i, i - 2, 0.5);
            }
        }
        for j in 0..n - 1 {
            s.add(n - 1, j, 0.3);
        }
        let f = s.factor(1e-12).unwrap();
        let diag = f.inverse_diagonal();
        for i in 0..n {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            let col = f.solve(&e);
            assert!((col[i] - diag[i]).abs() < 1e-12, "{i}: {} vs {}", col[i], diag[i]);
        }
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let mut s = Skyline::new(vec![0, 0]);
        s.add(0, 0, 1.0);
        s.add(1, 1, 1.0);
        s.add(1, 0, -1.0);
        assert!(matches!(s.factor(1e-10), Err(Error::Rank(_))));
    }

    #[test]
    fn pin_fixes_unknown() {
        let mut s = Skyline::new(vec![0, 0]);
        s.add(0, 0, 1.0);
        s.add(1, 1, 1.0);
        s.add(1, 0, -1.0);
        s.pin(0);
        let x = s.factor(1e-10).unwrap().solve(&[0.0, 2.0]);
        assert_eq!(x, vec![0.0, 2.0]);
    }

    #[test]
    fn sparse_sym_sums_duplicates() {
        let m = SparseSym::from_lower_triplets(2, &[(0, 0, 1.0), (1, 0, -1.0), (1, 0, -1.0)]);
        assert_eq!(m.get(0, 1), -2.0);
        assert_eq!(m.get(1, 0), -2.0);
        assert_eq!(m.quad_form(&[1.0, 1.0]), 1.0 - 4.0);
    }
}
