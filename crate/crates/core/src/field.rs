//! Space grid, time mesh and space–time fields.

use alloc::vec;
use alloc::vec::Vec;

use crate::geometry::Window;
use crate::math::{powf, sqrt};
use crate::{Error, Result};

/// Graded grid `x_j = (j/N)^γ`, `j = 0..=N`, clustering nodes near the
/// degeneracy at `x = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    grading: f64,
}

impl SpatialGrid {
    pub fn graded(n: usize, grading: f64) -> Result<Self> {
        if n < 4 {
            return Err(Error::InvalidParameter {
                name: "N",
                reason: "at least 4 intervals are required",
            });
        }
        if !(grading >= 1.0) || !grading.is_finite() {
            return Err(Error::InvalidParameter {
                name: "grading",
                reason: "grading exponent must be ≥ 1",
            });
        }
        let mut nodes: Vec<f64> = (0..=n)
            .map(|j| powf(j as f64 / n as f64, grading))
            .collect();
        nodes[0] = 0.0;
        nodes[n] = 1.0;
        Ok(Self::from_nodes_unchecked(nodes, grading))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::graded(n, 1.0)
    }

    /// Builds a grid from explicit nodes (strictly increasing, from 0 to 1).
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 5 || nodes[0] != 0.0 || *nodes.last().unwrap() != 1.0 {
            return Err(Error::InvalidParameter {
                name: "nodes",
                reason: "nodes must run from 0 to 1 with at least 4 intervals",
            });
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter {
                name: "nodes",
                reason: "nodes must be strictly increasing",
            });
        }
        Ok(Self::from_nodes_unchecked(nodes, f64::NAN))
    }

    fn from_nodes_unchecked(nodes: Vec<f64>, grading: f64) -> Self {
        let n = nodes.len() - 1;
        let mut weights = vec![0.0; n + 1];
        weights[0] = 0.5 * (nodes[1] - nodes[0]);
        weights[n] = 0.5 * (nodes[n] - nodes[n - 1]);
        for j in 1..n {
            weights[j] = 0.5 * (nodes[j + 1] - nodes[j - 1]);
        }
        Self {
            nodes,
            weights,
            grading,
        }
    }

    /// Number of intervals `N`.
    pub fn intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Number of interior nodes `N − 1`.
    pub fn interior(&self) -> usize {
        self.nodes.len() - 2
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn grading(&self) -> f64 {
        self.grading
    }

    /// Dual-cell lengths; the lumped mass of the nodal trapezoid rule.
    pub fn mass(&self) -> &[f64] {
        &self.weights
    }

    /// Mass restricted to interior nodes.
    pub fn interior_mass(&self) -> &[f64] {
        &self.weights[1..self.nodes.len() - 1]
    }

    pub fn spacing(&self, j: usize) -> f64 {
        self.nodes[j + 1] - self.nodes[j]
    }

    pub fn face(&self, j: usize) -> f64 {
        0.5 * (self.nodes[j] + self.nodes[j + 1])
    }

    pub fn min_spacing(&self) -> f64 {
        (0..self.intervals())
            .map(|j| self.spacing(j))
            .fold(f64::INFINITY, f64::min)
    }

    /// Fraction of each dual cell covered by `w`; `Σ mass_j χ_j = |w|` exactly
    /// up to roundoff. Boundary nodes get 0.
    pub fn indicator(&self, w: &Window) -> Vec<f64> {
        let n = self.intervals();
        let mut chi = vec![0.0; n + 1];
        for j in 1..n {
            let lo = self.face(j - 1);
            let hi = self.face(j);
            let cover = (hi.min(w.hi) - lo.max(w.lo)).max(0.0);
            chi[j] = cover / self.weights[j];
        }
        chi
    }

    /// `Σ_j mass_j u_j v_j`.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(u)
            .zip(v)
            .map(|((w, a), b)| w * a * b)
            .sum()
    }

    pub fn norm(&self, u: &[f64]) -> f64 {
        sqrt(self.inner(u, u))
    }
}

/// Uniform time mesh `t_n = n T / M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeMesh {
    steps: usize,
    horizon: f64,
}

impl TimeMesh {
    pub fn new(steps: usize, horizon: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::InvalidParameter {
                name: "M",
                reason: "at least 2 time steps are required",
            });
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidParameter {
                name: "T",
                reason: "horizon must be positive",
            });
        }
        Ok(Self { steps, horizon })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        if n == self.steps {
            self.horizon
        } else {
            self.horizon * n as f64 / self.steps as f64
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|n| self.time(n)).collect()
    }
}

/// A scalar field on the `(M+1) × (N+1)` space–time mesh, row-major by time.
///
/// State-like quantities (`y`, `ψ`) live on time levels `1..=M` with the
/// initial value in level 0; adjoint- and control-like quantities (`p`, `φ`,
/// `h`, `v`) live on levels `0..M`, level `M` holding the terminal value.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Field {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn like(grid: &SpatialGrid, mesh: &TimeMesh) -> Self {
        Self::zeros(mesh.steps() + 1, grid.intervals() + 1)
    }

    /// Samples `f(x, t)` at every node, forcing zero Dirichlet values.
    pub fn from_fn(grid: &SpatialGrid, mesh: &TimeMesh, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut out = Self::like(grid, mesh);
        let n = grid.intervals();
        for k in 0..=mesh.steps() {
            let t = mesh.time(k);
            let row = out.row_mut(k);
            for j in 1..n {
                row[j] = f(grid.nodes()[j], t);
            }
        }
        out
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.cols..(k + 1) * self.cols]
    }

    pub fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.cols..(k + 1) * self.cols]
    }

    pub fn interior(&self, k: usize) -> &[f64] {
        &self.row(k)[1..self.cols - 1]
    }

    pub fn set_interior(&mut self, k: usize, v: &[f64]) {
        let c = self.cols;
        self.row_mut(k)[1..c - 1].copy_from_slice(v);
    }

    pub fn check_shape(&self, other: &Field) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Dimension {
                expected: self.data.len(),
                got: other.data.len(),
            });
        }
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> Field {
        let mut f = self.clone();
        f.data.iter_mut().for_each(|v| *v *= s);
        f
    }

    /// `self += s·other`.
    pub fn axpy(&mut self, s: f64, other: &Field) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn add(&self, other: &Field) -> Field {
        let mut f = self.clone();
        f.axpy(1.0, other);
        f
    }

    pub fn sub(&self, other: &Field) -> Field {
        let mut f = self.clone();
        f.axpy(-1.0, other);
        f
    }

    /// Multiplies every row nodewise by `w`.
    pub fn mask(&self, w: &[f64]) -> Field {
        let mut f = self.clone();
        for k in 0..self.rows {
            for (v, m) in f.row_mut(k).iter_mut().zip(w) {
                *v *= m;
            }
        }
        f
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Space–time quadratures consistent with the backward-Euler pairing.
#[derive(Debug, Clone, Copy)]
pub struct Quadrature<'a> {
    pub grid: &'a SpatialGrid,
    pub mesh: &'a TimeMesh,
}

impl<'a> Quadrature<'a> {
    pub fn new(grid: &'a SpatialGrid, mesh: &'a TimeMesh) -> Self {
        Self { grid, mesh }
    }

    fn rows(&self, u: &Field, v: &Field, range: core::ops::Range<usize>) -> f64 {
        let dt = self.mesh.dt();
        range
            .map(|k| dt * self.grid.inner(u.row(k), v.row(k)))
            .sum()
    }

    /// `Σ_{n=1}^{M} dt ⟨u^n, v^n⟩` (state levels).
    pub fn state(&self, u: &Field, v: &Field) -> f64 {
        self.rows(u, v, 1..self.mesh.steps() + 1)
    }

    /// `Σ_{k=0}^{M−1} dt ⟨u^k, v^k⟩` (adjoint and control levels).
    pub fn adjoint(&self, u: &Field, v: &Field) -> f64 {
        self.rows(u, v, 0..self.mesh.steps())
    }

    /// Trapezoid rule in time.
    pub fn trapezoid(&self, u: &Field, v: &Field) -> f64 {
        0.5 * (self.state(u, v) + self.adjoint(u, v))
    }

    /// `Σ_{all levels} dt ⟨u, v⟩`, the plain discrete L²(Q) product.
    pub fn full(&self, u: &Field, v: &Field) -> f64 {
        self.rows(u, v, 0..self.mesh.steps() + 1)
    }

    pub fn norm_full(&self, u: &Field) -> f64 {
        sqrt(self.full(u, u))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_basics() {
        let g = SpatialGrid::graded(8, 2.0).unwrap();
        assert_eq!(g.nodes()[0], 0.0);
        assert_eq!(g.nodes()[8], 1.0);
        let total: f64 = g.mass().iter().sum();
        assert!((total - 1.0).abs() < 1e-15);
        let w = Window::new(0.3, 0.7).unwrap();
        let chi = g.indicator(&w);
        let cover: f64 = chi.iter().zip(g.mass()).map(|(c, m)| c * m).sum();
        assert!((cover - 0.4).abs() < 1e-14);
    }

    #[test]
    fn trapezoid_of_constant() {
        let g = SpatialGrid::uniform(10).unwrap();
        let m = TimeMesh::new(10, 2.0).unwrap();
        let one = Field::from_fn(&g, &m, |_, _| 1.0);
        let q = Quadrature::new(&g, &m);
        // interior mass is 1 − h, times T
        assert!((q.trapezoid(&one, &one) - 0.9 * 2.0).abs() < 1e-14);
    }
}
