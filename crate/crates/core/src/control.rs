//! Null controllability of the leader: the weighted Lax–Milgram problem for
//! the linearized optimality system, its reconstruction, the weighted
//! estimates, and the Newton iteration for the semilinear system.
//!
//! Unknowns `(φ, ψ₁, ψ₂)` live on the active levels only; beyond the first
//! saturated level `K` every weighted quantity is zero.

use alloc::vec;
use alloc::vec::Vec;

use crate::band::{pcg, SymBandCholesky};
use crate::carleman::CarlemanWeights;
use crate::discretization::Discretization;
use crate::field::Field;
use crate::math::{exp, ln, sqrt};
use crate::nash::{control_norm, controls_from_adjoint, functional_gradient, GameSpec};
use crate::nonlinearity::SemilinearF;
use crate::solvers::{
    solve_forward_controlled, solve_linearized_coupled, state_operator, trapezoid_factors,
    LinearOps, LinearizedSystem, PicardOptions, StepOptions,
};
use crate::{Error, Result};

/// `‖u‖_{H¹_a}` of a full row: lumped `L²` plus the face-based `a`-energy.
pub fn h1a_norm(disc: &Discretization, u: &[f64]) -> f64 {
    let w = disc.grid.mass();
    let l2: f64 = u.iter().zip(w).map(|(v, m)| m * v * v).sum();
    sqrt(l2 + disc.gradient_energy(u))
}

fn l2_row(disc: &Discretization, u: &[f64]) -> f64 {
    let w = disc.grid.mass();
    u.iter().zip(w).map(|(v, m)| m * v * v).sum()
}

/// `ρ² v2` evaluated through logarithms.
fn weighted(ln_rho: f64, v2: f64) -> f64 {
    if v2 == 0.0 {
        0.0
    } else {
        exp(2.0 * ln_rho + ln(v2))
    }
}

/// Sources of the linear problem: `H` on left rows, `H_i` on right rows.
#[derive(Debug, Clone)]
pub struct LinearControlProblem {
    pub big_h: Field,
    pub big_h_i: [Field; 2],
    pub y0: Vec<f64>,
}

impl LinearControlProblem {
    /// Zero sources.
    pub fn homogeneous(disc: &Discretization, y0: Vec<f64>) -> Self {
        Self {
            big_h: disc.zeros(),
            big_h_i: [disc.zeros(), disc.zeros()],
            y0,
        }
    }

    /// `κ₀ = ‖ρ₂H‖² + Σ‖ρ₂H_i‖² + ‖y0‖²`; fails when a source reaches a
    /// saturated level.
    pub fn kappa0(&self, disc: &Discretization, weights: &CarlemanWeights) -> Result<f64> {
        let dt = disc.dt();
        let kk = weights.active;
        let mut total = l2_row(disc, &self.y0);
        for k in 0..disc.levels() - 1 {
            let s = l2_row(disc, self.big_h.row(k));
            if k >= kk && s > 0.0 {
                return Err(Error::InfiniteBudget { level: k });
            }
            total += dt * weighted(weights.ln_rho2[k], s);
        }
        for hi in &self.big_h_i {
            for n in 1..disc.levels() {
                let s = l2_row(disc, hi.row(n));
                if n >= kk && s > 0.0 {
                    return Err(Error::InfiniteBudget { level: n });
                }
                total += dt * weighted(weights.ln_rho2[n], s);
            }
        }
        Ok(total)
    }

    /// `κ₁ = κ₀ − ‖y0‖² + ‖y0‖²_{H¹_a}`.
    pub fn kappa1(&self, disc: &Discretization, weights: &CarlemanWeights) -> Result<f64> {
        let k0 = self.kappa0(disc, weights)?;
        let n = h1a_norm(disc, &self.y0);
        Ok(k0 - l2_row(disc, &self.y0) + n * n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LaxMilgramMethod {
    /// Banded Cholesky, polished by conjugate gradients preconditioned with
    /// the factorization.
    Direct,
    /// Jacobi-preconditioned conjugate gradients.
    Cg { max_iter: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaxMilgramOptions {
    pub method: LaxMilgramMethod,
    /// Relative residual target of the (scaled) normal equations.
    pub tol: f64,
    /// First and largest diagonal shift tried when the factorization meets
    /// a nonpositive pivot.
    pub min_shift: f64,
    pub max_shift: f64,
}

impl Default for LaxMilgramOptions {
    fn default() -> Self {
        Self {
            method: LaxMilgramMethod::Direct,
            tol: 1e-13,
            min_shift: 1e-14,
            max_shift: 1e-8,
        }
    }
}

/// Diagnostics of one Lax–Milgram solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub unknowns: usize,
    pub shift: f64,
    pub half_bandwidth: usize,
    pub iterations: usize,
    pub residuals: Vec<f64>,
    pub energies: Vec<f64>,
    pub converged: bool,
}

impl SolveReport {
    /// CG energies never increase (up to rounding).
    pub fn energy_monotone(&self) -> bool {
        self.energies
            .windows(2)
            .all(|w| w[1] <= w[0] + 1e-12 * (1.0 + w[0].abs()))
    }
}

/// Slab ordering of the unknowns: slab `s` holds `φ^s` (if `s < K`) and
/// `ψ_i^s` (if `s ≥ 1`), interleaved node by node.
#[derive(Debug, Clone)]
struct Layout {
    m: usize,
    active: usize,
    offsets: Vec<usize>,
    total: usize,
}

impl Layout {
    fn new(m: usize, active: usize) -> Self {
        let mut offsets = Vec::with_capacity(active + 2);
        let mut acc = 0;
        for s in 0..=active {
            offsets.push(acc);
            acc += m * Self::fields(active, s);
        }
        Self {
            m,
            active,
            offsets,
            total: acc,
        }
    }

    fn fields(active: usize, s: usize) -> usize {
        usize::from(s < active) + if s >= 1 { 2 } else { 0 }
    }

    fn phi(&self, k: usize, j: usize) -> usize {
        debug_assert!(k < self.active);
        self.offsets[k] + j * Self::fields(self.active, k)
    }

    fn psi(&self, i: usize, n: usize, j: usize) -> usize {
        debug_assert!(n >= 1 && n <= self.active);
        self.offsets[n] + j * Self::fields(self.active, n) + usize::from(n < self.active) + i
    }
}

/// Sparse rows of the residual map `R` with their quadrature weights.
#[derive(Debug, Clone)]
struct Rows {
    start: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    weight: Vec<f64>,
}

impl Rows {
    fn push(&mut self, entries: &[(usize, f64)], w: f64) {
        for &(c, v) in entries {
            self.cols.push(c);
            self.vals.push(v);
        }
        self.start.push(self.cols.len());
        self.weight.push(w);
    }

    fn len(&self) -> usize {
        self.weight.len()
    }

    fn entries(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.start[r], self.start[r + 1]);
        self.cols[a..b]
            .iter()
            .copied()
            .zip(self.vals[a..b].iter().copied())
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|r| self.entries(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }
}

/// The assembled and factorized weighted bilinear form
/// `b(u, u') = Σ w₀ (Ru)(Ru') + Σ w₁ χ_O φ φ'`.
#[derive(Debug, Clone)]
pub struct LaxMilgram {
    layout: Layout,
    rows: Rows,
    /// Row ranges of `z0` and `z_i`.
    z0_rows: usize,
    zi_rows: usize,
    /// `(index, weight)` of the observation term.
    diag: Vec<(usize, f64)>,
    scale: Vec<f64>,
    chol: Option<SymBandCholesky>,
    shift: f64,
    half_bandwidth: usize,
    opts: LaxMilgramOptions,
}

impl LaxMilgram {
    pub fn assemble(
        disc: &Discretization,
        sys: &LinearizedSystem,
        weights: &CarlemanWeights,
        opts: LaxMilgramOptions,
    ) -> Result<Self> {
        let m = disc.interior();
        let kk = weights.active;
        if kk < 2 {
            return Err(Error::InvalidParameter {
                name: "saturation",
                reason: "fewer than two active levels",
            });
        }
        let layout = Layout::new(m, kk);
        let dt = disc.dt();
        let mass = disc.mass();
        let chi_o = &sys.chi_leader()[1..=m];
        let mut rows = Rows {
            start: vec![0],
            cols: Vec::new(),
            vals: Vec::new(),
            weight: Vec::new(),
        };
        let mut buf: Vec<(usize, f64)> = Vec::with_capacity(16);
        // z0^n = (L*φ)_{n−1} + Σ Q*_{i,n} ψ_i^n, n = 1..K−1
        for n in 1..kk {
            let adj = &sys.ops.adjoint[n];
            let w0 = weights.inv_sq_rho0(n);
            for j in 0..m {
                buf.clear();
                if j > 0 {
                    buf.push((layout.phi(n - 1, j - 1), adj.lower[j]));
                }
                buf.push((layout.phi(n - 1, j), 1.0 / dt + adj.diag[j]));
                if j + 1 < m {
                    buf.push((layout.phi(n - 1, j + 1), adj.upper[j]));
                }
                buf.push((layout.phi(n, j), -1.0 / dt));
                for i in 0..2 {
                    for (c, v) in sys.up_adjoint[i][n].row(j) {
                        if v != 0.0 {
                            buf.push((layout.psi(i, n, c), v));
                        }
                    }
                }
                rows.push(&buf, dt * mass[j] * w0);
            }
        }
        let z0_rows = rows.len();
        // z_i^k = (Lψ_i)_k + χ_i φ^k/(μ_i ω_k), k = 0..K−1
        for i in 0..2 {
            let chi = &sys.chi_follower(i)[1..=m];
            for k in 0..kk {
                let fwd = &sys.ops.forward[k + 1];
                let w0 = weights.inv_sq_rho0(k);
                for j in 0..m {
                    buf.clear();
                    if k >= 1 {
                        buf.push((layout.psi(i, k, j), -1.0 / dt));
                    }
                    if chi[j] != 0.0 {
                        buf.push((layout.phi(k, j), chi[j] * sys.down[i][k]));
                    }
                    if j > 0 {
                        buf.push((layout.psi(i, k + 1, j - 1), fwd.lower[j]));
                    }
                    buf.push((layout.psi(i, k + 1, j), 1.0 / dt + fwd.diag[j]));
                    if j + 1 < m {
                        buf.push((layout.psi(i, k + 1, j + 1), fwd.upper[j]));
                    }
                    rows.push(&buf, dt * mass[j] * w0);
                }
            }
        }
        let zi_rows = (rows.len() - z0_rows) / 2;
        let mut diag = Vec::new();
        for k in 0..kk {
            let w1 = weights.inv_sq_rho1(k);
            for j in 0..m {
                if chi_o[j] > 0.0 {
                    diag.push((layout.phi(k, j), dt * mass[j] * chi_o[j] * w1));
                }
            }
        }

        let n = layout.total;
        let mut d = vec![0.0; n];
        let mut hb = 0;
        for r in 0..rows.len() {
            let w = rows.weight[r];
            let (mut lo, mut hi) = (usize::MAX, 0);
            for (c, v) in rows.entries(r) {
                d[c] += w * v * v;
                lo = lo.min(c);
                hi = hi.max(c);
            }
            hb = hb.max(hi - lo);
        }
        for &(c, w) in &diag {
            d[c] += w;
        }
        if let Some(r) = d.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::NotPositiveDefinite {
                row: r,
                pivot: d[r],
            });
        }
        let scale: Vec<f64> = d.iter().map(|v| 1.0 / sqrt(*v)).collect();

        let (chol, shift) = match opts.method {
            LaxMilgramMethod::Direct => {
                let mut base = SymBandCholesky::zeros(n, hb);
                for r in 0..rows.len() {
                    let w = rows.weight[r];
                    let (a, b) = (rows.start[r], rows.start[r + 1]);
                    for p in a..b {
                        let (cp, vp) = (rows.cols[p], rows.vals[p] * scale[rows.cols[p]]);
                        for q in a..b {
                            let cq = rows.cols[q];
                            if cq <= cp {
                                base.add_lower(cp, cq, w * vp * rows.vals[q] * scale[cq]);
                            }
                        }
                    }
                }
                for &(cidx, w) in &diag {
                    base.add_lower(cidx, cidx, w * scale[cidx] * scale[cidx]);
                }
                // Rounding-level pivots come from adjoint modes that the
                // right-hand side cannot excite; a tiny shift removes them.
                let mut shift = 0.0;
                loop {
                    let mut c = base.clone();
                    if shift > 0.0 {
                        for i in 0..n {
                            c.add_lower(i, i, shift);
                        }
                    }
                    match c.factor() {
                        Ok(()) => break (Some(c), shift),
                        Err(e) => {
                            shift = if shift == 0.0 {
                                opts.min_shift
                            } else {
                                shift * 10.0
                            };
                            if shift > opts.max_shift {
                                return Err(e);
                            }
                        }
                    }
                }
            }
            LaxMilgramMethod::Cg { .. } => (None, 0.0),
        };
        Ok(Self {
            layout,
            rows,
            z0_rows,
            zi_rows,
            diag,
            scale,
            chol,
            shift,
            half_bandwidth: hb,
            opts,
        })
    }

    pub fn unknowns(&self) -> usize {
        self.layout.total
    }

    pub fn half_bandwidth(&self) -> usize {
        self.half_bandwidth
    }

    /// Diagonal shift applied to the scaled matrix before factorization.
    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// Scaled operator `D^{-1/2} 𝔅 D^{-1/2}`.
    fn apply_scaled(&self, x: &[f64]) -> Vec<f64> {
        let xs: Vec<f64> = x.iter().zip(&self.scale).map(|(a, s)| a * s).collect();
        let z = self.rows.apply(&xs);
        let mut out = vec![0.0; x.len()];
        for (r, zr) in z.iter().enumerate() {
            let wz = self.rows.weight[r] * zr;
            for (c, v) in self.rows.entries(r) {
                out[c] += v * wz;
            }
        }
        for &(c, w) in &self.diag {
            out[c] += w * xs[c];
        }
        out.iter_mut().zip(&self.scale).for_each(|(o, s)| *o *= s);
        out
    }

    /// `b(u, u)` for unscaled coefficients.
    fn energy(&self, u: &[f64]) -> f64 {
        let z = self.rows.apply(u);
        let a: f64 = z
            .iter()
            .zip(&self.rows.weight)
            .map(|(z, w)| w * z * z)
            .sum();
        a + self.diag.iter().map(|&(c, w)| w * u[c] * u[c]).sum::<f64>()
    }

    /// Right-hand side `ℓ(u')`.
    fn rhs(&self, disc: &Discretization, problem: &LinearControlProblem) -> Vec<f64> {
        let (m, kk, dt) = (self.layout.m, self.layout.active, disc.dt());
        let mass = disc.mass();
        let mut f = vec![0.0; self.layout.total];
        for k in 0..kk {
            let hr = problem.big_h.interior(k);
            for j in 0..m {
                f[self.layout.phi(k, j)] += dt * mass[j] * hr[j];
            }
        }
        for j in 0..m {
            f[self.layout.phi(0, j)] += mass[j] * problem.y0[j + 1];
        }
        for i in 0..2 {
            for n in 1..=kk {
                let hr = problem.big_h_i[i].interior(n);
                for j in 0..m {
                    f[self.layout.psi(i, n, j)] += dt * mass[j] * hr[j];
                }
            }
        }
        f
    }

    /// Solves `b(û, u') = ℓ(u')` and reconstructs the controlled triple.
    pub fn solve(
        &self,
        disc: &Discretization,
        weights: &CarlemanWeights,
        problem: &LinearControlProblem,
    ) -> Result<ControlledTriple> {
        let kappa0 = problem.kappa0(disc, weights)?;
        let f = self.rhs(disc, problem);
        let fs: Vec<f64> = f.iter().zip(&self.scale).map(|(a, s)| a * s).collect();
        let outcome = match (&self.chol, self.opts.method) {
            (Some(c), _) => pcg(
                |x| self.apply_scaled(x),
                |r| c.solve(r),
                &fs,
                self.opts.tol,
                30,
            ),
            (None, LaxMilgramMethod::Cg { max_iter }) => pcg(
                |x| self.apply_scaled(x),
                |r| r.to_vec(),
                &fs,
                self.opts.tol,
                max_iter,
            ),
            (None, LaxMilgramMethod::Direct) => unreachable!("direct solver without factorization"),
        };
        if !outcome.x.iter().all(|v| v.is_finite()) {
            return Err(Error::Stagnation {
                iterations: outcome.iterations,
                residual: f64::NAN,
            });
        }
        let u: Vec<f64> = outcome
            .x
            .iter()
            .zip(&self.scale)
            .map(|(a, s)| a * s)
            .collect();
        let report = SolveReport {
            unknowns: self.layout.total,
            shift: self.shift,
            half_bandwidth: self.half_bandwidth,
            iterations: outcome.iterations,
            residuals: outcome.residuals,
            energies: outcome.energies,
            converged: outcome.converged,
        };
        Ok(self.reconstruct(disc, weights, problem, &u, kappa0, report))
    }

    fn reconstruct(
        &self,
        disc: &Discretization,
        weights: &CarlemanWeights,
        problem: &LinearControlProblem,
        u: &[f64],
        kappa0: f64,
        report: SolveReport,
    ) -> ControlledTriple {
        let (m, kk, dt) = (self.layout.m, self.layout.active, disc.dt());
        let mass = disc.mass();
        let z = self.rows.apply(u);
        let mut y = disc.zeros();
        y.row_mut(0).copy_from_slice(&problem.y0);
        let mut p = [disc.zeros(), disc.zeros()];
        let mut h = disc.zeros();
        let mut phi = disc.zeros();
        let mut psi = [disc.zeros(), disc.zeros()];
        let mut budget = Budget::default();
        for n in 1..kk {
            let w0 = weights.inv_sq_rho0(n);
            let zr = &z[(n - 1) * m..n * m];
            let row: Vec<f64> = zr.iter().map(|v| w0 * v).collect();
            y.set_interior(n, &row);
            budget.y += dt * w0 * zr.iter().zip(mass).map(|(v, w)| w * v * v).sum::<f64>();
        }
        for i in 0..2 {
            let base = self.z0_rows + i * self.zi_rows;
            for k in 0..kk {
                let w0 = weights.inv_sq_rho0(k);
                let zr = &z[base + k * m..base + (k + 1) * m];
                let row: Vec<f64> = zr.iter().map(|v| w0 * v).collect();
                p[i].set_interior(k, &row);
                budget.p[i] += dt * w0 * zr.iter().zip(mass).map(|(v, w)| w * v * v).sum::<f64>();
            }
            for n in 1..=kk {
                let row: Vec<f64> = (0..m).map(|j| u[self.layout.psi(i, n, j)]).collect();
                psi[i].set_interior(n, &row);
            }
        }
        let chi_o = &disc.chi_leader()[1..=m];
        for k in 0..kk {
            let w1 = weights.inv_sq_rho1(k);
            let fr: Vec<f64> = (0..m).map(|j| u[self.layout.phi(k, j)]).collect();
            let hr: Vec<f64> = (0..m)
                .map(|j| if chi_o[j] > 0.0 { -w1 * fr[j] } else { 0.0 })
                .collect();
            budget.h += dt
                * w1
                * (0..m)
                    .map(|j| mass[j] * chi_o[j] * fr[j] * fr[j])
                    .sum::<f64>();
            phi.set_interior(k, &fr);
            h.set_interior(k, &hr);
        }
        budget.total = budget.y + budget.p[0] + budget.p[1] + budget.h;
        let energy = self.energy(u);
        ControlledTriple {
            y,
            p,
            h,
            phi,
            psi,
            budget,
            energy,
            kappa0,
            active: kk,
            report,
        }
    }
}

/// `∫ρ₀²|y|² + Σ∫ρ₀²|p_i|² + ∫_O ρ₁²|h|²` and its parts.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Budget {
    pub y: f64,
    pub p: [f64; 2],
    pub h: f64,
    pub total: f64,
}

/// Output of the linear null-control problem.
#[derive(Debug, Clone)]
pub struct ControlledTriple {
    pub y: Field,
    pub p: [Field; 2],
    /// Leader control on left rows, supported in `O`.
    pub h: Field,
    pub phi: Field,
    pub psi: [Field; 2],
    pub budget: Budget,
    /// `b(û, û)` computed from the coefficient vector.
    pub energy: f64,
    pub kappa0: f64,
    pub active: usize,
    pub report: SolveReport,
}

impl ControlledTriple {
    /// `budget / κ₀`.
    pub fn constant(&self) -> f64 {
        if self.kappa0 == 0.0 {
            0.0
        } else {
            self.budget.total / self.kappa0
        }
    }

    /// `‖y(T)‖` of the reconstructed state.
    pub fn terminal_norm(&self, disc: &Discretization) -> f64 {
        sqrt(l2_row(disc, self.y.row(self.y.rows() - 1)))
    }

    /// Sup-norm residual of the linear optimality system, relative to the
    /// size of its terms.
    pub fn equation_residual(
        &self,
        disc: &Discretization,
        sys: &LinearizedSystem,
        problem: &LinearControlProblem,
    ) -> f64 {
        let r = linear_residual(sys, &self.y, [&self.p[0], &self.p[1]], &self.h);
        let dt = disc.dt();
        let scale = self
            .y
            .max_abs()
            .max(self.p[0].max_abs())
            .max(self.p[1].max_abs())
            / dt
            + self.h.max_abs()
            + problem.big_h.max_abs()
            + problem.big_h_i[0]
                .max_abs()
                .max(problem.big_h_i[1].max_abs());
        let mut worst = r.a0.sub(&problem.big_h).max_abs();
        for i in 0..2 {
            worst = worst.max(r.a[i].sub(&problem.big_h_i[i]).max_abs());
        }
        worst / scale.max(f64::MIN_POSITIVE)
    }
}

/// Solves the weighted linear null-control problem.
pub fn solve_linear_null_control(
    disc: &Discretization,
    sys: &LinearizedSystem,
    weights: &CarlemanWeights,
    problem: &LinearControlProblem,
    opts: LaxMilgramOptions,
) -> Result<ControlledTriple> {
    LaxMilgram::assemble(disc, sys, weights, opts)?.solve(disc, weights, problem)
}

/// Independent check: the controlled state recomputed by Picard sweeps on
/// the linear system driven by the reconstructed `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearCheck {
    pub terminal: f64,
    /// `‖y(T)‖/‖y0‖`.
    pub relative_terminal: f64,
    pub sweeps: usize,
    /// Max difference between the recomputed and reconstructed states.
    pub state_mismatch: f64,
}

pub fn verify_linear_control(
    disc: &Discretization,
    sys: &LinearizedSystem,
    problem: &LinearControlProblem,
    triple: &ControlledTriple,
    opts: PicardOptions,
) -> Result<LinearCheck> {
    let sol = solve_linearized_coupled(
        disc,
        sys,
        &problem.big_h,
        [&problem.big_h_i[0], &problem.big_h_i[1]],
        &triple.h,
        &problem.y0,
        opts,
    )?;
    let last = disc.levels() - 1;
    let terminal = sqrt(l2_row(disc, sol.y.row(last)));
    let y0n = sqrt(l2_row(disc, &problem.y0));
    Ok(LinearCheck {
        terminal,
        relative_terminal: if y0n > 0.0 { terminal / y0n } else { terminal },
        sweeps: sol.history.len(),
        state_mismatch: sol.y.sub(&triple.y).max_abs(),
    })
}

/// Weighted bundles of the additional estimates and their constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdditionalEstimates {
    /// `sup ρ̂²‖y‖² + Σ sup ρ̂²‖p_i‖² + ∫ρ̂²(a|y_x|² + Σ a|p_{i,x}|²)`.
    pub lower: f64,
    /// `sup ρ₁²‖√a y_x‖² + … + ∫ρ₁²(|y_t|² + |(a y_x)_x|² + …)`.
    pub upper: f64,
    pub kappa0: f64,
    pub kappa1: f64,
}

impl AdditionalEstimates {
    pub fn lower_constant(&self) -> f64 {
        self.lower / self.kappa0
    }

    pub fn upper_constant(&self) -> f64 {
        self.upper / self.kappa1
    }

    pub fn finite(&self) -> bool {
        self.lower.is_finite() && self.upper.is_finite() && self.kappa0 > 0.0 && self.kappa1 > 0.0
    }
}

pub fn additional_estimates(
    disc: &Discretization,
    weights: &CarlemanWeights,
    problem: &LinearControlProblem,
    triple: &ControlledTriple,
) -> Result<AdditionalEstimates> {
    let dt = disc.dt();
    let kk = triple.active;
    let mass = disc.mass();
    let flux_sq = |u: &[f64]| -> f64 {
        let d = disc.flux_divergence(u);
        d.iter().zip(mass).map(|(v, w)| w * v * v).sum()
    };
    let diff_sq = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .zip(disc.grid.mass())
            .map(|((x, y), w)| {
                let d = (x - y) / dt;
                w * d * d
            })
            .sum()
    };
    let mut lower = 0.0;
    let mut upper = 0.0;

    // state: levels 0..K−1
    let (mut sup_l, mut sup_u) = (0.0f64, 0.0f64);
    for n in 0..kk {
        let yr = triple.y.row(n);
        let ge = disc.gradient_energy(yr);
        sup_l = sup_l.max(weighted(weights.ln_rhohat[n], l2_row(disc, yr)));
        sup_u = sup_u.max(weighted(weights.ln_rho1[n], ge));
        if n >= 1 {
            lower += dt * weighted(weights.ln_rhohat[n], ge);
            let tt = diff_sq(yr, triple.y.row(n - 1)) + flux_sq(yr);
            upper += dt * weighted(weights.ln_rho1[n], tt);
        }
    }
    lower += sup_l;
    upper += sup_u;

    // adjoints: levels 0..K−1, with p^K = 0
    for p in &triple.p {
        let (mut sup_l, mut sup_u) = (0.0f64, 0.0f64);
        for k in 0..kk {
            let pr = p.row(k);
            let ge = disc.gradient_energy(pr);
            sup_l = sup_l.max(weighted(weights.ln_rhohat[k], l2_row(disc, pr)));
            sup_u = sup_u.max(weighted(weights.ln_rho1[k], ge));
            lower += dt * weighted(weights.ln_rhohat[k], ge);
            let tt = diff_sq(pr, p.row(k + 1)) + flux_sq(pr);
            upper += dt * weighted(weights.ln_rho1[k], tt);
        }
        lower += sup_l;
        upper += sup_u;
    }
    Ok(AdditionalEstimates {
        lower,
        upper,
        kappa0: problem.kappa0(disc, weights)?,
        kappa1: problem.kappa1(disc, weights)?,
    })
}

/// Residuals of the optimality system: `A0` on left rows, `A_i` on right
/// rows and the trace `A3 = y(0)`.
#[derive(Debug, Clone)]
pub struct Residuals {
    pub a0: Field,
    pub a: [Field; 2],
    pub a3: Vec<f64>,
}

impl Residuals {
    pub fn sub(&self, other: &Residuals) -> Residuals {
        Residuals {
            a0: self.a0.sub(&other.a0),
            a: [self.a[0].sub(&other.a[0]), self.a[1].sub(&other.a[1])],
            a3: self.a3.iter().zip(&other.a3).map(|(a, b)| a - b).collect(),
        }
    }

    /// `ρ₂`-weighted norm over active rows plus `‖A3‖_{H¹_a}`.
    pub fn z_norm(&self, disc: &Discretization, weights: &CarlemanWeights) -> f64 {
        let dt = disc.dt();
        let kk = weights.active;
        let mut s = 0.0;
        for k in 0..kk.min(disc.levels() - 1) {
            s += dt * weighted(weights.ln_rho2[k], l2_row(disc, self.a0.row(k)));
        }
        for a in &self.a {
            for n in 1..kk {
                s += dt * weighted(weights.ln_rho2[n], l2_row(disc, a.row(n)));
            }
        }
        let t = h1a_norm(disc, &self.a3);
        sqrt(s + t * t)
    }

    /// Largest residual on saturated rows.
    pub fn tail(&self, active: usize) -> f64 {
        let mut worst: f64 = 0.0;
        for k in active..self.a0.rows() - 1 {
            worst = worst.max(self.a0.row(k).iter().fold(0.0, |m, v| m.max(v.abs())));
        }
        for a in &self.a {
            for n in active..a.rows() {
                worst = worst.max(a.row(n).iter().fold(0.0, |m, v| m.max(v.abs())));
            }
        }
        worst
    }
}

/// Action of the linear system on `(y, p, h)`.
pub fn linear_residual(sys: &LinearizedSystem, y: &Field, p: [&Field; 2], h: &Field) -> Residuals {
    let mut a0 = sys.ops.forward_residual(y);
    a0.axpy(1.0, &sys.follower_feedback(p));
    let hm = h.mask(sys.chi_leader());
    for k in 0..a0.rows() - 1 {
        let src = hm.row(k).to_vec();
        for (v, s) in a0.row_mut(k).iter_mut().zip(src) {
            *v -= s;
        }
    }
    let mut a = [
        sys.ops.backward_residual(p[0]),
        sys.ops.backward_residual(p[1]),
    ];
    for (i, ai) in a.iter_mut().enumerate() {
        ai.axpy(1.0, &sys.apply_up(i, y));
    }
    Residuals {
        a0,
        a,
        a3: y.row(0).to_vec(),
    }
}

/// The semilinear map `𝒜(y, p₁, p₂, h)`.
pub fn nonlinear_residual(
    disc: &Discretization,
    game: &GameSpec,
    f: &SemilinearF,
    y: &Field,
    p: [&Field; 2],
    h: &Field,
) -> Residuals {
    let dt = disc.dt();
    let levels = disc.levels();
    let omega = game.omega(disc);
    let c = trapezoid_factors(levels);
    let chi_o = disc.chi_leader();
    let chi_d = disc.chi_observation();
    let mut a0 = disc.zeros();
    for k in 0..levels - 1 {
        let kn = state_operator(disc, f, k + 1, y.interior(k + 1));
        let (yn, yo) = (y.interior(k + 1), y.interior(k));
        let row = a0.row_mut(k);
        for j in 1..row.len() - 1 {
            let mut v = (yn[j - 1] - yo[j - 1]) / dt + kn[j - 1] - chi_o[j] * h.row(k)[j];
            for i in 0..2 {
                v += disc.chi_follower(i)[j] * p[i].row(k)[j] / (game.mu[i] * omega[k]);
            }
            row[j] = v;
        }
    }
    let ops = LinearOps::along(disc, f, y);
    let mut a = [disc.zeros(), disc.zeros()];
    for i in 0..2 {
        let mut ai = ops.backward_residual(p[i]);
        for n in 1..levels {
            let s = game.alpha[i] * c[n] * omega[n];
            let (yr, tr) = (y.row(n).to_vec(), game.targets[i].row(n).to_vec());
            let row = ai.row_mut(n);
            for j in 1..row.len() - 1 {
                row[j] -= s * chi_d[j] * (yr[j] - tr[j]);
            }
        }
        a[i] = ai;
    }
    Residuals {
        a0,
        a,
        a3: y.row(0).to_vec(),
    }
}

/// Time profile `exp(−(ln ρ₂ − min ln ρ₂))` on active levels, zero beyond.
pub fn target_time_profile(weights: &CarlemanWeights) -> Vec<f64> {
    let floor = weights
        .ln_rho2
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    (0..weights.levels())
        .map(|n| {
            if weights.is_active(n) {
                exp(-(weights.ln_rho2[n] - floor))
            } else {
                0.0
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NewtonMode {
    /// Reuse the linearization at zero.
    Frozen,
    /// Relinearize at every iterate.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub mode: NewtonMode,
    /// Closed-loop `‖y(T)‖` at which the iteration stops.
    pub terminal_tol: f64,
    /// Scaled follower gradient residual at which the iteration stops.
    pub equilibrium_tol: f64,
    pub max_iter: usize,
    /// Growth of the relative `𝒵`-residual declared divergence.
    pub blowup: f64,
    pub solver: LaxMilgramOptions,
    pub picard: PicardOptions,
    pub step: StepOptions,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            mode: NewtonMode::Frozen,
            terminal_tol: 1e-6,
            equilibrium_tol: 1e-6,
            max_iter: 10,
            blowup: 1e6,
            solver: LaxMilgramOptions::default(),
            picard: PicardOptions {
                tol: 1e-13,
                max_sweeps: 400,
            },
            step: StepOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NewtonStatus {
    Converged,
    Diverged,
    Stagnated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonStep {
    pub iteration: usize,
    /// `‖𝒜(u) − (0, 0, y0)‖_𝒵` relative to its value at `u = 0`.
    pub residual: f64,
    /// Largest residual on saturated rows.
    pub tail: f64,
    pub budget: f64,
    /// Closed-loop `‖y(T)‖`, infinite when the simulation failed.
    pub terminal: f64,
    pub equilibrium: [f64; 2],
}

/// Closed-loop check of the computed controls.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    pub y: Field,
    pub v: [Field; 2],
    pub terminal: f64,
    /// Scaled quasi-equilibrium gradient residuals of the followers.
    pub equilibrium: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct NonlinearOutcome {
    pub status: NewtonStatus,
    pub iterations: usize,
    pub history: Vec<NewtonStep>,
    pub y: Field,
    pub p: [Field; 2],
    pub h: Field,
    /// Simulation of the last iterate, when it succeeded.
    pub closed_loop: Option<ClosedLoop>,
    /// `‖y0‖_{H¹_a}`.
    pub radius: f64,
}

impl NonlinearOutcome {
    pub fn converged(&self) -> bool {
        self.status == NewtonStatus::Converged
    }

    pub fn into_result(self) -> Result<Self> {
        let last = self.history.last().map_or(f64::NAN, |s| s.residual);
        match self.status {
            NewtonStatus::Converged => Ok(self),
            NewtonStatus::Diverged => Err(Error::NewtonDivergence {
                iteration: self.iterations,
                residual: last,
            }),
            NewtonStatus::Stagnated => Err(Error::NewtonStagnation {
                iterations: self.iterations,
                residual: last,
            }),
        }
    }
}

/// Simulates the semilinear system under `h` and `v_i = −p_i/(μ_i ω)`.
pub fn closed_loop(
    disc: &Discretization,
    game: &GameSpec,
    f: &SemilinearF,
    y0: &[f64],
    h: &Field,
    p: [&Field; 2],
    step: StepOptions,
) -> Result<ClosedLoop> {
    let v = controls_from_adjoint(disc, game, p);
    let y = solve_forward_controlled(disc, f, y0, h, &v[0], &v[1], step)?;
    let terminal = sqrt(l2_row(disc, y.row(disc.levels() - 1)));
    let mut equilibrium = [0.0; 2];
    for (i, e) in equilibrium.iter_mut().enumerate() {
        let g = functional_gradient(disc, game, f, i, y0, h, [&v[0], &v[1]], step)?;
        *e = control_norm(disc, i, &g) / (1.0 + control_norm(disc, i, &v[i]));
    }
    Ok(ClosedLoop {
        y,
        v,
        terminal,
        equilibrium,
    })
}

/// Zeroes left rows `≥ K` of `a0` and right rows `≥ K` of `a_i`.
fn truncate(mut r: Residuals, active: usize) -> Residuals {
    for k in active..r.a0.rows() {
        r.a0.row_mut(k).iter_mut().for_each(|v| *v = 0.0);
    }
    for a in &mut r.a {
        for n in active..a.rows() {
            a.row_mut(n).iter_mut().for_each(|v| *v = 0.0);
        }
    }
    r
}

/// One linear solve: the leader control from the weighted problem, the
/// states from the forward–backward system it drives.
fn linear_step(
    disc: &Discretization,
    sys: &LinearizedSystem,
    lm: &LaxMilgram,
    weights: &CarlemanWeights,
    src: Residuals,
    picard: PicardOptions,
) -> Result<(Field, [Field; 2], Field, f64)> {
    let problem = LinearControlProblem {
        big_h: src.a0,
        big_h_i: src.a,
        y0: src.a3,
    };
    let triple = lm.solve(disc, weights, &problem)?;
    let sol = solve_linearized_coupled(
        disc,
        sys,
        &problem.big_h,
        [&problem.big_h_i[0], &problem.big_h_i[1]],
        &triple.h,
        &problem.y0,
        picard,
    )?;
    let [p0, p1] = sol.p;
    Ok((sol.y, [p0, p1], triple.h, triple.budget.total))
}

/// Newton iteration `u ← u + W(target − 𝒜(u))` on the semilinear
/// optimality system, where `W` inverts the linearization at zero (frozen)
/// or at the current iterate (full). Sources are truncated to the active
/// levels.
pub fn solve_nonlinear_null_control(
    disc: &Discretization,
    game: &GameSpec,
    f: &SemilinearF,
    weights: &CarlemanWeights,
    y0: &[f64],
    opts: NewtonOptions,
) -> Result<NonlinearOutcome> {
    let omega = game.omega(disc);
    let kk = weights.active;
    let frozen = LinearizedSystem::frozen(disc, f, game.alpha, game.mu, &omega);
    let frozen_lm = LaxMilgram::assemble(disc, &frozen, weights, opts.solver)?;
    let target = Residuals {
        a0: disc.zeros(),
        a: [disc.zeros(), disc.zeros()],
        a3: y0.to_vec(),
    };
    let mut y = disc.zeros();
    let mut p = [disc.zeros(), disc.zeros()];
    let mut h = disc.zeros();
    let base = nonlinear_residual(disc, game, f, &y, [&p[0], &p[1]], &h)
        .sub(&target)
        .z_norm(disc, weights);
    let mut history: Vec<NewtonStep> = Vec::new();
    let mut status = NewtonStatus::Stagnated;
    let mut closed = None;
    for it in 1..=opts.max_iter {
        let r = nonlinear_residual(disc, game, f, &y, [&p[0], &p[1]], &h).sub(&target);
        let step = match opts.mode {
            NewtonMode::Frozen => {
                // 𝒜'(0) u_new = target − (𝒜(u) − 𝒜'(0) u)
                let lin = linear_residual(&frozen, &y, [&p[0], &p[1]], &h);
                let src = truncate(lin.sub(&r), kk);
                linear_step(disc, &frozen, &frozen_lm, weights, src, opts.picard)
            }
            NewtonMode::Full => {
                let sys = LinearizedSystem::at_state(
                    disc,
                    f,
                    game.alpha,
                    game.mu,
                    &omega,
                    &y,
                    [&p[0], &p[1]],
                );
                let zero = Residuals {
                    a0: disc.zeros(),
                    a: [disc.zeros(), disc.zeros()],
                    a3: vec![0.0; y0.len()],
                };
                let src = truncate(zero.sub(&r), kk);
                LaxMilgram::assemble(disc, &sys, weights, opts.solver)
                    .and_then(|lm| linear_step(disc, &sys, &lm, weights, src, opts.picard))
            }
        };
        let (dy, dp, dh, budget) = match step {
            Ok(s) => s,
            Err(
                Error::InfiniteBudget { .. }
                | Error::NotPositiveDefinite { .. }
                | Error::SweepDivergence { .. }
                | Error::StepFailure { .. },
            ) => {
                status = NewtonStatus::Diverged;
                break;
            }
            Err(e) => return Err(e),
        };
        match opts.mode {
            NewtonMode::Frozen => {
                y = dy;
                p = dp;
                h = dh;
            }
            NewtonMode::Full => {
                y.axpy(1.0, &dy);
                let [d0, d1] = dp;
                p[0].axpy(1.0, &d0);
                p[1].axpy(1.0, &d1);
                h.axpy(1.0, &dh);
            }
        }
        let r = nonlinear_residual(disc, game, f, &y, [&p[0], &p[1]], &h).sub(&target);
        let zn = r.z_norm(disc, weights);
        let rel = if base > 0.0 { zn / base } else { zn };
        let sim = closed_loop(disc, game, f, y0, &h, [&p[0], &p[1]], opts.step).ok();
        let (terminal, equilibrium) = sim
            .as_ref()
            .map_or((f64::INFINITY, [f64::INFINITY; 2]), |c| {
                (c.terminal, c.equilibrium)
            });
        history.push(NewtonStep {
            iteration: it,
            residual: rel,
            tail: r.tail(kk),
            budget,
            terminal,
            equilibrium,
        });
        closed = sim;
        if !rel.is_finite() || !y.is_finite() || rel > opts.blowup {
            status = NewtonStatus::Diverged;
            break;
        }
        if terminal <= opts.terminal_tol && equilibrium.iter().all(|e| *e <= opts.equilibrium_tol) {
            status = NewtonStatus::Converged;
            break;
        }
        let worse = history.len() >= 3 && {
            let n = history.len();
            history[n - 1].residual > history[n - 2].residual
                && history[n - 2].residual > history[n - 3].residual
        };
        if worse && rel > 1.0 {
            status = NewtonStatus::Diverged;
            break;
        }
    }
    Ok(NonlinearOutcome {
        status,
        iterations: history.len(),
        history,
        y,
        p,
        h,
        closed_loop: closed,
        radius: h1a_norm(disc, y0),
    })
}
