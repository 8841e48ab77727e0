//! Small dense-banded linear algebra: tridiagonal and general banded
//! operators on interior nodes, banded Cholesky, and preconditioned CG.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::sqrt;
use crate::{Error, Result};

/// Tridiagonal operator; `lower[i]` multiplies `u[i-1]`, `upper[i]` multiplies `u[i+1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiag {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiag {
    pub fn zeros(n: usize) -> Self {
        Self {
            lower: vec![0.0; n],
            diag: vec![0.0; n],
            upper: vec![0.0; n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n);
        t.diag.iter_mut().for_each(|d| *d = 1.0);
        t
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let mut t = Self::zeros(d.len());
        t.diag.copy_from_slice(d);
        t
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.len();
        for i in 0..n {
            let mut s = self.diag[i] * x[i];
            if i > 0 {
                s += self.lower[i] * x[i - 1];
            }
            if i + 1 < n {
                s += self.upper[i] * x[i + 1];
            }
            out[i] = s;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.apply_into(x, &mut out);
        out
    }

    /// `self + s·other`.
    pub fn add_scaled(&self, other: &Tridiag, s: f64) -> Tridiag {
        let zip = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + s * y).collect();
        Tridiag {
            lower: zip(&self.lower, &other.lower),
            diag: zip(&self.diag, &other.diag),
            upper: zip(&self.upper, &other.upper),
        }
    }

    pub fn scaled(&self, s: f64) -> Tridiag {
        let sc = |a: &[f64]| a.iter().map(|x| s * x).collect();
        Tridiag {
            lower: sc(&self.lower),
            diag: sc(&self.diag),
            upper: sc(&self.upper),
        }
    }

    /// `diag(d)·self`.
    pub fn scale_rows(&self, d: &[f64]) -> Tridiag {
        let mut t = self.clone();
        for i in 0..self.len() {
            t.lower[i] *= d[i];
            t.diag[i] *= d[i];
            t.upper[i] *= d[i];
        }
        t
    }

    pub fn add_diag(&mut self, d: &[f64]) {
        for (a, b) in self.diag.iter_mut().zip(d) {
            *a += b;
        }
    }

    /// Largest absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.len())
            .map(|i| self.lower[i].abs() + self.diag[i].abs() + self.upper[i].abs())
            .fold(0.0, f64::max)
    }

    pub fn transpose(&self) -> Tridiag {
        let n = self.len();
        let mut t = Tridiag::zeros(n);
        t.diag.copy_from_slice(&self.diag);
        for i in 0..n {
            if i > 0 {
                t.lower[i] = self.upper[i - 1];
            }
            if i + 1 < n {
                t.upper[i] = self.lower[i + 1];
            }
        }
        t
    }

    /// Adjoint in the weighted inner product `⟨u, v⟩ = Σ wᵢ uᵢ vᵢ`: `W⁻¹ Tᵀ W`.
    pub fn mass_adjoint(&self, w: &[f64]) -> Tridiag {
        let n = self.len();
        let mut t = Tridiag::zeros(n);
        t.diag.copy_from_slice(&self.diag);
        for i in 0..n {
            if i > 0 {
                t.lower[i] = self.upper[i - 1] * w[i - 1] / w[i];
            }
            if i + 1 < n {
                t.upper[i] = self.lower[i + 1] * w[i + 1] / w[i];
            }
        }
        t
    }

    /// `I + dt·self`.
    pub fn shifted(&self, dt: f64) -> Tridiag {
        let mut t = self.scaled(dt);
        t.diag.iter_mut().for_each(|d| *d += 1.0);
        t
    }

    /// Thomas algorithm without pivoting.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.len();
        let mut c = vec![0.0; n];
        let mut x = vec![0.0; n];
        let mut piv = self.diag.first().copied().unwrap_or(1.0);
        for i in 0..n {
            if i > 0 {
                piv = self.diag[i] - self.lower[i] * c[i - 1];
            }
            if piv == 0.0 || !piv.is_finite() {
                return Err(Error::Singular { row: i });
            }
            c[i] = if i + 1 < n { self.upper[i] / piv } else { 0.0 };
            let prev = if i > 0 { self.lower[i] * x[i - 1] } else { 0.0 };
            x[i] = (rhs[i] - prev) / piv;
        }
        for i in (0..n.saturating_sub(1)).rev() {
            x[i] -= c[i] * x[i + 1];
        }
        Ok(x)
    }

    pub fn to_band(&self) -> BandOp {
        let n = self.len();
        let mut b = BandOp::zeros(n, 1);
        for i in 0..n {
            b.set(i, i, self.diag[i]);
            if i > 0 {
                b.set(i, i - 1, self.lower[i]);
            }
            if i + 1 < n {
                b.set(i, i + 1, self.upper[i]);
            }
        }
        b
    }
}

/// Square banded operator with equal lower/upper half-bandwidth.
#[derive(Debug, Clone, PartialEq)]
pub struct BandOp {
    n: usize,
    hb: usize,
    data: Vec<f64>,
}

impl BandOp {
    pub fn zeros(n: usize, hb: usize) -> Self {
        Self {
            n,
            hb,
            data: vec![0.0; n * (2 * hb + 1)],
        }
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let mut b = Self::zeros(d.len(), 0);
        b.data.copy_from_slice(d);
        b
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn half_bandwidth(&self) -> usize {
        self.hb
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> Option<usize> {
        if j + self.hb < i || j > i + self.hb || j >= self.n {
            None
        } else {
            Some(i * (2 * self.hb + 1) + (j + self.hb - i))
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.idx(i, j).map_or(0.0, |k| self.data[k])
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j).expect("entry outside band");
        self.data[k] = v;
    }

    /// Nonzero pattern of row `i` as `(column, value)` pairs.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = i.saturating_sub(self.hb);
        let hi = (i + self.hb).min(self.n - 1);
        (lo..=hi).map(move |j| (j, self.get(i, j)))
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    fn widened(&self, hb: usize) -> BandOp {
        let mut b = BandOp::zeros(self.n, hb.max(self.hb));
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                b.set(i, j, v);
            }
        }
        b
    }

    pub fn add(&self, other: &BandOp) -> BandOp {
        let mut b = self.widened(other.hb);
        for i in 0..self.n {
            for (j, v) in other.row(i) {
                let cur = b.get(i, j);
                b.set(i, j, cur + v);
            }
        }
        b
    }

    pub fn scaled(&self, s: f64) -> BandOp {
        let mut b = self.clone();
        b.data.iter_mut().for_each(|v| *v *= s);
        b
    }

    /// `self · other`.
    pub fn matmul(&self, other: &BandOp) -> BandOp {
        let mut out = BandOp::zeros(self.n, self.hb + other.hb);
        for i in 0..self.n {
            for (k, a) in self.row(i) {
                if a == 0.0 {
                    continue;
                }
                for (j, b) in other.row(k) {
                    let cur = out.get(i, j);
                    out.set(i, j, cur + a * b);
                }
            }
        }
        out
    }

    /// `diag(d)·self`.
    pub fn scale_rows(&self, d: &[f64]) -> BandOp {
        let mut b = self.clone();
        let w = 2 * self.hb + 1;
        for i in 0..self.n {
            b.data[i * w..(i + 1) * w]
                .iter_mut()
                .for_each(|v| *v *= d[i]);
        }
        b
    }

    pub fn transpose(&self) -> BandOp {
        let mut b = BandOp::zeros(self.n, self.hb);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                b.set(j, i, v);
            }
        }
        b
    }

    /// `W⁻¹ selfᵀ W` for the diagonal weight `w`.
    pub fn mass_adjoint(&self, w: &[f64]) -> BandOp {
        let mut b = BandOp::zeros(self.n, self.hb);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                b.set(j, i, v * w[i] / w[j]);
            }
        }
        b
    }
}

/// Symmetric positive definite banded matrix, stored as its lower band,
/// factorized in place by Cholesky.
#[derive(Debug, Clone)]
pub struct SymBandCholesky {
    n: usize,
    hb: usize,
    /// `l[i*(hb+1) + (i-j)]` for `j ∈ [i-hb, i]`.
    l: Vec<f64>,
    factored: bool,
}

impl SymBandCholesky {
    pub fn zeros(n: usize, hb: usize) -> Self {
        Self {
            n,
            hb,
            l: vec![0.0; n * (hb + 1)],
            factored: false,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn half_bandwidth(&self) -> usize {
        self.hb
    }

    /// Adds `v` to entry `(i, j)`; only `j ≤ i` entries are stored.
    #[inline]
    pub fn add_lower(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(j <= i && i - j <= self.hb);
        self.l[i * (self.hb + 1) + (i - j)] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        if i - j > self.hb {
            0.0
        } else {
            self.l[i * (self.hb + 1) + (i - j)]
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.l[i * (self.hb + 1)]).collect()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert!(!self.factored);
        let mut y = vec![0.0; self.n];
        let w = self.hb + 1;
        for i in 0..self.n {
            let row = &self.l[i * w..(i + 1) * w];
            y[i] += row[0] * x[i];
            for (d, &v) in row.iter().enumerate().skip(1) {
                if d > i {
                    break;
                }
                let j = i - d;
                y[i] += v * x[j];
                y[j] += v * x[i];
            }
        }
        y
    }

    /// In-place factorization `A = L Lᵀ`.
    pub fn factor(&mut self) -> Result<()> {
        let w = self.hb + 1;
        let n = self.n;
        for j in 0..n {
            let jlo = j.saturating_sub(self.hb);
            // diagonal
            let mut s = self.l[j * w];
            for k in jlo..j {
                let v = self.l[j * w + (j - k)];
                s -= v * v;
            }
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::NotPositiveDefinite { row: j, pivot: s });
            }
            let d = sqrt(s);
            self.l[j * w] = d;
            let ihi = (j + self.hb).min(n - 1);
            for i in j + 1..=ihi {
                let ilo = i.saturating_sub(self.hb).max(jlo);
                let mut s = self.l[i * w + (i - j)];
                for k in ilo..j {
                    s -= self.l[i * w + (i - k)] * self.l[j * w + (j - k)];
                }
                self.l[i * w + (i - j)] = s / d;
            }
        }
        self.factored = true;
        Ok(())
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert!(self.factored, "solve before factor");
        let w = self.hb + 1;
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(self.hb);
            let mut s = y[i];
            for k in lo..i {
                s -= self.l[i * w + (i - k)] * y[k];
            }
            y[i] = s / self.l[i * w];
        }
        for i in (0..n).rev() {
            let hi = (i + self.hb).min(n - 1);
            let mut s = y[i];
            for k in i + 1..=hi {
                s -= self.l[k * w + (k - i)] * y[k];
            }
            y[i] = s / self.l[i * w];
        }
        y
    }
}

/// Outcome of a conjugate-gradient solve.
#[derive(Debug, Clone, PartialEq)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Relative residual `‖r_k‖/‖b‖` per iteration (starting at iteration 0).
    pub residuals: Vec<f64>,
    /// Energy `½ xᵀAx − bᵀx` per iteration.
    pub energies: Vec<f64>,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Preconditioned conjugate gradient for an SPD operator given as closures.
pub fn pcg(
    mut apply: impl FnMut(&[f64]) -> Vec<f64>,
    mut precond: impl FnMut(&[f64]) -> Vec<f64>,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> CgOutcome {
    let n = b.len();
    let bnorm = sqrt(dot(b, b));
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return CgOutcome {
            x,
            iterations: 0,
            residuals: vec![0.0],
            energies: vec![0.0],
            converged: true,
        };
    }
    let mut r = b.to_vec();
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut residuals = vec![1.0];
    let mut energies = vec![0.0];
    let mut it = 0;
    let mut converged = false;
    while it < max_iter {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let a = rz / pap;
        for i in 0..n {
            x[i] += a * p[i];
            r[i] -= a * ap[i];
        }
        it += 1;
        let rel = sqrt(dot(&r, &r)) / bnorm;
        residuals.push(rel);
        // ½xᵀAx − bᵀx = −½ xᵀ(b + r)
        let e = -0.5
            * x.iter()
                .zip(b.iter().zip(&r))
                .map(|(xi, (bi, ri))| xi * (bi + ri))
                .sum::<f64>();
        energies.push(e);
        if rel <= tol {
            converged = true;
            break;
        }
        z = precond(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    CgOutcome {
        x,
        iterations: it,
        residuals,
        energies,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thomas_matches_product() {
        let t = Tridiag {
            lower: vec![0.0, -1.0, -2.0, 0.5],
            diag: vec![4.0, 5.0, 6.0, 3.0],
            upper: vec![1.0, -1.0, 0.3, 0.0],
        };
        let x = vec![1.0, -2.0, 0.5, 3.0];
        let b = t.apply(&x);
        let y = t.solve(&b).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn mass_adjoint_pairs() {
        let t = Tridiag {
            lower: vec![0.0, -1.0, -2.0],
            diag: vec![4.0, 5.0, 6.0],
            upper: vec![1.0, -1.5, 0.0],
        };
        let w = [0.5, 2.0, 0.25];
        let ts = t.mass_adjoint(&w);
        let u = [1.0, 2.0, -1.0];
        let v = [0.3, -0.7, 2.0];
        let lhs: f64 = t
            .apply(&u)
            .iter()
            .zip(&v)
            .zip(&w)
            .map(|((a, b), c)| a * b * c)
            .sum();
        let rhs: f64 = ts
            .apply(&v)
            .iter()
            .zip(&u)
            .zip(&w)
            .map(|((a, b), c)| a * b * c)
            .sum();
        assert!((lhs - rhs).abs() < 1e-14);
        let bs = t.to_band().mass_adjoint(&w);
        assert_eq!(bs.apply(&v), ts.apply(&v));
    }

    #[test]
    fn band_cholesky_and_cg_agree() {
        let n = 12;
        let mut a = SymBandCholesky::zeros(n, 2);
        for i in 0..n {
            a.add_lower(i, i, 6.0 + i as f64 * 0.1);
            if i >= 1 {
                a.add_lower(i, i - 1, -1.5);
            }
            if i >= 2 {
                a.add_lower(i, i - 2, 0.7);
            }
        }
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let a0 = a.clone();
        let cg = pcg(|x| a0.apply(x), |r| r.to_vec(), &b, 1e-14, 100);
        assert!(cg.converged);
        for w in cg.energies.windows(2) {
            assert!(w[1] <= w[0] + 1e-14);
        }
        a.factor().unwrap();
        let x = a.solve(&b);
        for (p, q) in x.iter().zip(&cg.x) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}
