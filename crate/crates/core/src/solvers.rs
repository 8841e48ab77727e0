//! Forward semilinear solver, adjoint solvers, coupled forward–backward
//! systems and energy diagnostics.

use alloc::vec;
use alloc::vec::Vec;

use crate::band::{BandOp, Tridiag};
use crate::discretization::{march_backward, march_forward, Discretization};
use crate::field::{Field, Quadrature};
use crate::math::sqrt;
use crate::nonlinearity::SemilinearF;
use crate::{Error, Result};

/// Inner Newton settings for the implicit semilinear step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 25,
        }
    }
}

/// Trajectory-level fixed-point settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardOptions {
    /// Relative L²(Q) distance between successive sweeps.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_sweeps: 200,
        }
    }
}

/// Per-level derivative data of `F(y, Cβ y_x)` at a state row.
fn jets(
    disc: &Discretization,
    f: &SemilinearF,
    n: usize,
    y: Option<&[f64]>,
) -> Vec<crate::nonlinearity::Jet> {
    let cb = disc.c_beta(n);
    let m = disc.interior();
    match y {
        None => (0..m).map(|_| f.jet(0.0, 0.0)).collect(),
        Some(y) => {
            let gy = disc.gradient().apply(y);
            (0..m).map(|i| f.jet(y[i], cb[i] * gy[i])).collect()
        }
    }
}

/// `J_n = K_n + diag(D₁F) + diag(D₂F·Cβ)·G`, the linearization of the spatial
/// part at the interior state `y` (or at 0).
pub fn linearized_operator(
    disc: &Discretization,
    f: &SemilinearF,
    n: usize,
    y: Option<&[f64]>,
) -> Tridiag {
    let cb = disc.c_beta(n);
    let js = jets(disc, f, n, y);
    let d1: Vec<f64> = js.iter().map(|j| j.d1).collect();
    let d2cb: Vec<f64> = js.iter().zip(&cb).map(|(j, c)| j.d2 * c).collect();
    let mut op = disc
        .transport(n)
        .add_scaled(&disc.gradient().scale_rows(&d2cb), 1.0);
    op.add_diag(&d1);
    op
}

/// `K_n y + F(y, Cβ G y)` on interior nodes.
pub fn state_operator(disc: &Discretization, f: &SemilinearF, n: usize, y: &[f64]) -> Vec<f64> {
    let cb = disc.c_beta(n);
    let gy = disc.gradient().apply(y);
    let mut out = disc.transport(n).apply(y);
    for i in 0..y.len() {
        out[i] += f.value(y[i], cb[i] * gy[i]);
    }
    out
}

/// `(dJ_n[θ])* p`: derivative of the adjoint operator in the state direction
/// `θ`, applied to `p` (all interior vectors).
pub fn second_order_term(
    disc: &Discretization,
    f: &SemilinearF,
    n: usize,
    y: &[f64],
    theta: &[f64],
    p: &[f64],
) -> Vec<f64> {
    let cb = disc.c_beta(n);
    let js = jets(disc, f, n, Some(y));
    let gt = disc.gradient().apply(theta);
    let m = y.len();
    let mut e1p = vec![0.0; m];
    let mut flux = vec![0.0; m];
    for i in 0..m {
        let w = cb[i] * gt[i];
        let e1 = js[i].d11 * theta[i] + js[i].d12 * w;
        let e2 = js[i].d12 * theta[i] + js[i].d22 * w;
        e1p[i] = e1 * p[i];
        flux[i] = cb[i] * e2 * p[i];
    }
    let gs = disc.gradient().mass_adjoint(disc.mass());
    let g = gs.apply(&flux);
    e1p.iter().zip(&g).map(|(a, b)| a + b).collect()
}

/// Matrix of `θ ↦ (dJ_n[θ])* p` (pentadiagonal).
pub fn second_order_matrix(
    disc: &Discretization,
    f: &SemilinearF,
    n: usize,
    y: &[f64],
    p: &[f64],
) -> BandOp {
    let cb = disc.c_beta(n);
    let js = jets(disc, f, n, Some(y));
    let m = y.len();
    let g = disc.gradient().to_band();
    let gs = disc.gradient().mass_adjoint(disc.mass()).to_band();
    let d11: Vec<f64> = (0..m).map(|i| p[i] * js[i].d11).collect();
    let d12: Vec<f64> = (0..m).map(|i| p[i] * js[i].d12 * cb[i]).collect();
    let d21: Vec<f64> = (0..m).map(|i| cb[i] * p[i] * js[i].d12).collect();
    let d22: Vec<f64> = (0..m).map(|i| cb[i] * p[i] * js[i].d22 * cb[i]).collect();
    BandOp::from_diag(&d11)
        .add(&g.scale_rows(&d12))
        .add(&gs.matmul(&BandOp::from_diag(&d21)))
        .add(&gs.matmul(&g.scale_rows(&d22)))
}

/// Forward operators `J_n` and their mass adjoints for a linear problem.
#[derive(Debug, Clone)]
pub struct LinearOps {
    pub forward: Vec<Tridiag>,
    pub adjoint: Vec<Tridiag>,
    dt: f64,
}

impl LinearOps {
    pub fn new(forward: Vec<Tridiag>, mass: &[f64], dt: f64) -> Self {
        let adjoint = forward.iter().map(|t| t.mass_adjoint(mass)).collect();
        Self {
            forward,
            adjoint,
            dt,
        }
    }

    /// Linearization at zero for every level.
    pub fn frozen(disc: &Discretization, f: &SemilinearF) -> Self {
        let ops = (0..disc.levels())
            .map(|n| linearized_operator(disc, f, n, None))
            .collect();
        Self::new(ops, disc.mass(), disc.dt())
    }

    /// Linearization along the trajectory `y` (level `n` uses `y^n`).
    pub fn along(disc: &Discretization, f: &SemilinearF, y: &Field) -> Self {
        let ops = (0..disc.levels())
            .map(|n| linearized_operator(disc, f, n, Some(y.interior(n))))
            .collect();
        Self::new(ops, disc.mass(), disc.dt())
    }

    /// `w^0 = init`, `(I + dt J_n) w^n = w^{n−1} + dt g^{n−1}`.
    pub fn forward(&self, init: &[f64], source: Option<&Field>) -> Result<Field> {
        march_forward(&self.forward, init, source, self.dt)
    }

    /// `q^M = terminal`, `(I + dt J*_{k+1}) q^k = q^{k+1} + dt r^{k+1}`.
    pub fn backward(&self, terminal: &[f64], source: Option<&Field>) -> Result<Field> {
        march_backward(&self.adjoint, terminal, source, self.dt)
    }

    /// Residual of the forward scheme at left rows: `(w^{k+1} − w^k)/dt + J_{k+1} w^{k+1}`.
    pub fn forward_residual(&self, w: &Field) -> Field {
        let mut out = Field::zeros(w.rows(), w.cols());
        for k in 0..w.rows() - 1 {
            let jw = self.forward[k + 1].apply(w.interior(k + 1));
            let r: Vec<f64> = (0..jw.len())
                .map(|i| (w.interior(k + 1)[i] - w.interior(k)[i]) / self.dt + jw[i])
                .collect();
            out.set_interior(k, &r);
        }
        out
    }

    /// Residual of the backward scheme at right rows: `(q^{n−1} − q^n)/dt + J*_n q^{n−1}`.
    pub fn backward_residual(&self, q: &Field) -> Field {
        let mut out = Field::zeros(q.rows(), q.cols());
        for n in 1..q.rows() {
            let jq = self.adjoint[n].apply(q.interior(n - 1));
            let r: Vec<f64> = (0..jq.len())
                .map(|i| (q.interior(n - 1)[i] - q.interior(n)[i]) / self.dt + jq[i])
                .collect();
            out.set_interior(n, &r);
        }
        out
    }
}

/// Solves the semilinear state equation with source `g` (left rows).
///
/// Each backward-Euler step is solved by Newton's method on the tridiagonal
/// Jacobian; affine `F` takes a single linear solve.
pub fn solve_forward_semilinear(
    disc: &Discretization,
    f: &SemilinearF,
    y0: &[f64],
    source: &Field,
    opts: StepOptions,
) -> Result<Field> {
    if f.is_affine() {
        return LinearOps::frozen(disc, f).forward(y0, Some(source));
    }
    let dt = disc.dt();
    let mut y = disc.zeros();
    y.row_mut(0).copy_from_slice(y0);
    y.row_mut(0)[0] = 0.0;
    let last = y.cols() - 1;
    y.row_mut(0)[last] = 0.0;
    let m = disc.interior();
    for n in 1..disc.levels() {
        // rounding in K y scales with ‖K‖
        let k_norm = disc.transport(n).norm_inf();
        let prev = y.interior(n - 1).to_vec();
        let src = source.interior(n - 1);
        let mut cur = prev.clone();
        let mut res_norm = f64::INFINITY;
        let mut converged = false;
        for _ in 0..opts.max_iter {
            let k = state_operator(disc, f, n, &cur);
            let r: Vec<f64> = (0..m)
                .map(|i| (cur[i] - prev[i]) / dt + k[i] - src[i])
                .collect();
            let amp = prev.iter().chain(&cur).fold(0.0f64, |a, v| a.max(v.abs()));
            let scale = 1.0 + amp / dt + k_norm * amp;
            res_norm = r.iter().fold(0.0f64, |a, v| a.max(v.abs())) / scale;
            if res_norm <= opts.tol {
                converged = true;
                break;
            }
            let jac = linearized_operator(disc, f, n, Some(&cur)).shifted(dt);
            let rhs: Vec<f64> = r.iter().map(|v| -dt * v).collect();
            let delta = jac.solve(&rhs).map_err(|_| Error::StepFailure {
                level: n,
                residual: res_norm,
            })?;
            for i in 0..m {
                cur[i] += delta[i];
            }
        }
        if !converged || !cur.iter().all(|v| v.is_finite()) {
            return Err(Error::StepFailure {
                level: n,
                residual: res_norm,
            });
        }
        y.set_interior(n, &cur);
    }
    Ok(y)
}

/// Convenience wrapper taking the three controls.
pub fn solve_forward_controlled(
    disc: &Discretization,
    f: &SemilinearF,
    y0: &[f64],
    h: &Field,
    v1: &Field,
    v2: &Field,
    opts: StepOptions,
) -> Result<Field> {
    solve_forward_semilinear(disc, f, y0, &disc.control_source(h, v1, v2), opts)
}

/// Trapezoid-in-time factors `c_n` (½ at the end levels, 1 inside).
pub fn trapezoid_factors(levels: usize) -> Vec<f64> {
    let mut c = vec![1.0; levels];
    c[0] = 0.5;
    c[levels - 1] = 0.5;
    c
}

/// Adjoint of follower `i`:
/// `(I + dt J*_n(y)) p^{n−1} = p^n + dt α c_n ω_n χ_d (y^n − y_d^n)`, `p^M = 0`.
pub fn solve_adjoint_follower(
    disc: &Discretization,
    f: &SemilinearF,
    y: &Field,
    alpha: f64,
    target: &Field,
    omega: &[f64],
) -> Result<Field> {
    let ops = LinearOps::along(disc, f, y);
    let src = tracking_source(disc, y, alpha, target, omega);
    ops.backward(&vec![0.0; y.cols()], Some(&src))
}

/// `α c_n ω_n χ_d (y^n − y_d^n)` on right rows.
pub fn tracking_source(
    disc: &Discretization,
    y: &Field,
    alpha: f64,
    target: &Field,
    omega: &[f64],
) -> Field {
    let c = trapezoid_factors(disc.levels());
    let chi = disc.chi_observation();
    let mut src = disc.zeros();
    for n in 1..disc.levels() {
        let s = alpha * c[n] * omega[n];
        let (yr, tr) = (y.row(n), target.row(n));
        let row = src.row_mut(n);
        for j in 0..row.len() {
            row[j] = s * chi[j] * (yr[j] - tr[j]);
        }
    }
    src
}

/// Linear forward–backward optimality system
///
/// ```text
/// (y^{k+1}−y^k)/dt + J_{k+1} y^{k+1} + Σ χ_i p_i^k /(μ_i ω_k) − χ_O h^k = H^k
/// (p_i^k−p_i^{k+1})/dt + J*_{k+1} p_i^k + Q_{i,k+1} y^{k+1}    = H_i^{k+1}
/// ```
///
/// with `Q_{i,n} = −α_i c_n ω_n χ_d` at the zero linearization, plus the
/// second-order term when linearizing at a nonzero adjoint state.
#[derive(Debug, Clone)]
pub struct LinearizedSystem {
    pub ops: LinearOps,
    /// `1/(μ_i ω_k)` per left row.
    pub down: [Vec<f64>; 2],
    /// `Q_{i,n}` per level (level 0 unused).
    pub up: [Vec<BandOp>; 2],
    /// `Q*_{i,n}` (mass adjoints).
    pub up_adjoint: [Vec<BandOp>; 2],
    chi_followers: [Vec<f64>; 2],
    chi_leader: Vec<f64>,
    alpha: [f64; 2],
}

impl LinearizedSystem {
    fn build(
        disc: &Discretization,
        ops: LinearOps,
        alpha: [f64; 2],
        mu: [f64; 2],
        omega: &[f64],
        extra: Option<(&SemilinearF, &Field, [&Field; 2])>,
    ) -> Self {
        let levels = disc.levels();
        let c = trapezoid_factors(levels);
        let chi_d: Vec<f64> = disc.chi_observation()[1..disc.grid.intervals()].to_vec();
        let mass = disc.mass();
        let mut up: [Vec<BandOp>; 2] = [Vec::with_capacity(levels), Vec::with_capacity(levels)];
        for i in 0..2 {
            for n in 0..levels {
                let d: Vec<f64> = chi_d
                    .iter()
                    .map(|x| -alpha[i] * c[n] * omega[n] * x)
                    .collect();
                let mut q = BandOp::from_diag(&d);
                if let Some((f, y, p)) = extra {
                    if n >= 1 {
                        q = q.add(&second_order_matrix(
                            disc,
                            f,
                            n,
                            y.interior(n),
                            p[i].interior(n - 1),
                        ));
                    }
                }
                up[i].push(q);
            }
        }
        let up_adjoint = [
            up[0].iter().map(|q| q.mass_adjoint(mass)).collect(),
            up[1].iter().map(|q| q.mass_adjoint(mass)).collect(),
        ];
        let down = [
            omega.iter().map(|w| 1.0 / (mu[0] * w)).collect(),
            omega.iter().map(|w| 1.0 / (mu[1] * w)).collect(),
        ];
        Self {
            ops,
            down,
            up,
            up_adjoint,
            chi_followers: [disc.chi_follower(0).to_vec(), disc.chi_follower(1).to_vec()],
            chi_leader: disc.chi_leader().to_vec(),
            alpha,
        }
    }

    /// Linearization at the zero state.
    pub fn frozen(
        disc: &Discretization,
        f: &SemilinearF,
        alpha: [f64; 2],
        mu: [f64; 2],
        omega: &[f64],
    ) -> Self {
        Self::build(disc, LinearOps::frozen(disc, f), alpha, mu, omega, None)
    }

    /// Linearization at the state `(y, p₁, p₂)`.
    pub fn at_state(
        disc: &Discretization,
        f: &SemilinearF,
        alpha: [f64; 2],
        mu: [f64; 2],
        omega: &[f64],
        y: &Field,
        p: [&Field; 2],
    ) -> Self {
        Self::build(
            disc,
            LinearOps::along(disc, f, y),
            alpha,
            mu,
            omega,
            Some((f, y, p)),
        )
    }

    pub fn alpha(&self) -> [f64; 2] {
        self.alpha
    }

    pub fn chi_follower(&self, i: usize) -> &[f64] {
        &self.chi_followers[i]
    }

    pub fn chi_leader(&self) -> &[f64] {
        &self.chi_leader
    }

    /// `χ_i p^k/(μ_i ω_k)` summed over followers, at left rows.
    pub fn follower_feedback(&self, p: [&Field; 2]) -> Field {
        let mut out = Field::zeros(p[0].rows(), p[0].cols());
        for i in 0..2 {
            for k in 0..out.rows() {
                let s = self.down[i][k];
                let chi = &self.chi_followers[i];
                let pr = p[i].row(k).to_vec();
                for (j, v) in out.row_mut(k).iter_mut().enumerate() {
                    *v += s * chi[j] * pr[j];
                }
            }
        }
        out
    }

    /// `Q_{i,n} y^n` at right rows.
    pub fn apply_up(&self, i: usize, y: &Field) -> Field {
        let mut out = Field::zeros(y.rows(), y.cols());
        for n in 1..y.rows() {
            let v = self.up[i][n].apply(y.interior(n));
            out.set_interior(n, &v);
        }
        out
    }

    /// `Q*_{i,n} ψ^n` at right rows.
    pub fn apply_up_adjoint(&self, i: usize, psi: &Field) -> Field {
        let mut out = Field::zeros(psi.rows(), psi.cols());
        for n in 1..psi.rows() {
            let v = self.up_adjoint[i][n].apply(psi.interior(n));
            out.set_interior(n, &v);
        }
        out
    }
}

/// `y` and the two follower adjoints of a coupled solve.
#[derive(Debug, Clone)]
pub struct CoupledSolution {
    pub y: Field,
    pub p: [Field; 2],
    /// Relative sweep-to-sweep distances.
    pub history: Vec<f64>,
}

fn rel_distance(q: &Quadrature, new: [&Field; 3], old: [&Field; 3]) -> f64 {
    let mut d = 0.0;
    let mut s = 0.0;
    for k in 0..3 {
        let diff = new[k].sub(old[k]);
        d += q.full(&diff, &diff);
        s += q.full(new[k], new[k]);
    }
    if d == 0.0 {
        0.0
    } else {
        sqrt(d / s.max(f64::MIN_POSITIVE))
    }
}

/// Picard sweeps on the linear optimality system with sources `H` (left
/// rows), `H_i` (right rows), leader control `h` and initial state `y0`.
pub fn solve_linearized_coupled(
    disc: &Discretization,
    sys: &LinearizedSystem,
    big_h: &Field,
    big_h_i: [&Field; 2],
    h: &Field,
    y0: &[f64],
    opts: PicardOptions,
) -> Result<CoupledSolution> {
    let q = Quadrature::new(&disc.grid, &disc.mesh);
    let base = h.mask(sys.chi_leader()).add(big_h);
    let zero_row = vec![0.0; y0.len()];
    let mut y = disc.zeros();
    let mut p = [disc.zeros(), disc.zeros()];
    let mut history = Vec::new();
    for sweep in 0..opts.max_sweeps {
        let src = base.sub(&sys.follower_feedback([&p[0], &p[1]]));
        let y_new = sys.ops.forward(y0, Some(&src))?;
        let mut p_new = [disc.zeros(), disc.zeros()];
        for i in 0..2 {
            let s = big_h_i[i].sub(&sys.apply_up(i, &y_new));
            p_new[i] = sys.ops.backward(&zero_row, Some(&s))?;
        }
        let d = rel_distance(&q, [&y_new, &p_new[0], &p_new[1]], [&y, &p[0], &p[1]]);
        history.push(d);
        y = y_new;
        p = p_new;
        if !d.is_finite() {
            break;
        }
        if d <= opts.tol && sweep > 0 || d == 0.0 {
            return Ok(CoupledSolution { y, p, history });
        }
    }
    Err(Error::SweepDivergence {
        sweeps: history.len(),
        last: history.last().copied().unwrap_or(f64::NAN),
    })
}

/// Adjoint optimality system
///
/// ```text
/// (φ^{n−1}−φ^n)/dt + J*_n φ^{n−1} + Σ Q*_{i,n} ψ_i^n = F^n,      φ^M = φ_T
/// (ψ_i^{k+1}−ψ_i^k)/dt + J_{k+1} ψ_i^{k+1} + χ_i φ^k/(μ_i ω_k) = F_i^k,  ψ_i^0 = 0
/// ```
#[derive(Debug, Clone)]
pub struct AdjointSolution {
    pub phi: Field,
    pub psi: [Field; 2],
    pub history: Vec<f64>,
}

pub fn solve_adjoint_coupled(
    disc: &Discretization,
    sys: &LinearizedSystem,
    phi_t: &[f64],
    big_f: &Field,
    big_f_i: [&Field; 2],
    opts: PicardOptions,
) -> Result<AdjointSolution> {
    let q = Quadrature::new(&disc.grid, &disc.mesh);
    let zero_row = vec![0.0; phi_t.len()];
    let mut phi = disc.zeros();
    let mut psi = [disc.zeros(), disc.zeros()];
    let mut history = Vec::new();
    for sweep in 0..opts.max_sweeps {
        let mut src = big_f.clone();
        for i in 0..2 {
            src.axpy(-1.0, &sys.apply_up_adjoint(i, &psi[i]));
        }
        let phi_new = sys.ops.backward(phi_t, Some(&src))?;
        let mut psi_new = [disc.zeros(), disc.zeros()];
        for i in 0..2 {
            let fb = follower_term(sys, i, &phi_new);
            psi_new[i] = sys.ops.forward(&zero_row, Some(&big_f_i[i].sub(&fb)))?;
        }
        let d = rel_distance(
            &q,
            [&phi_new, &psi_new[0], &psi_new[1]],
            [&phi, &psi[0], &psi[1]],
        );
        history.push(d);
        phi = phi_new;
        psi = psi_new;
        if !d.is_finite() {
            break;
        }
        if d <= opts.tol && sweep > 0 || d == 0.0 {
            return Ok(AdjointSolution { phi, psi, history });
        }
    }
    Err(Error::SweepDivergence {
        sweeps: history.len(),
        last: history.last().copied().unwrap_or(f64::NAN),
    })
}

fn follower_term(sys: &LinearizedSystem, i: usize, phi: &Field) -> Field {
    let mut out = Field::zeros(phi.rows(), phi.cols());
    let chi = sys.chi_follower(i);
    for k in 0..phi.rows() {
        let s = sys.down[i][k];
        let pr = phi.row(k).to_vec();
        for (j, v) in out.row_mut(k).iter_mut().enumerate() {
            *v = s * chi[j] * pr[j];
        }
    }
    out
}

/// Reduced pair `(φ, ϱ)` with `ϱ = α₁ψ₁ + α₂ψ₂`, valid at the zero
/// linearization:
///
/// ```text
/// (φ^{n−1}−φ^n)/dt + J*_n φ^{n−1} − c_n ω_n χ_d ϱ^n = F^n
/// (ϱ^{k+1}−ϱ^k)/dt + J_{k+1} ϱ^{k+1} + Σ α_i χ_i φ^k/(μ_i ω_k) = G^k
/// ```
///
/// Runs exactly `sweeps` Picard sweeps when `fixed` is set (so it can be
/// compared sweep-for-sweep with the full system), otherwise to tolerance.
pub fn solve_adjoint_reduced(
    disc: &Discretization,
    sys: &LinearizedSystem,
    omega: &[f64],
    phi_t: &[f64],
    big_f: &Field,
    big_g: &Field,
    opts: PicardOptions,
    fixed: Option<usize>,
) -> Result<(Field, Field, Vec<f64>)> {
    let q = Quadrature::new(&disc.grid, &disc.mesh);
    let c = trapezoid_factors(disc.levels());
    let chi_d = disc.chi_observation();
    let zero_row = vec![0.0; phi_t.len()];
    let alpha = sys.alpha();
    let mut phi = disc.zeros();
    let mut rho = disc.zeros();
    let mut history = Vec::new();
    let max = fixed.unwrap_or(opts.max_sweeps);
    for sweep in 0..max {
        let mut src = big_f.clone();
        for n in 1..disc.levels() {
            let s = c[n] * omega[n];
            let rr = rho.row(n).to_vec();
            for (j, v) in src.row_mut(n).iter_mut().enumerate() {
                *v += s * chi_d[j] * rr[j];
            }
        }
        let phi_new = sys.ops.backward(phi_t, Some(&src))?;
        let mut g = big_g.clone();
        for i in 0..2 {
            g.axpy(-alpha[i], &follower_term(sys, i, &phi_new));
        }
        let rho_new = sys.ops.forward(&zero_row, Some(&g))?;
        let d = rel_distance(&q, [&phi_new, &rho_new, &rho_new], [&phi, &rho, &rho]);
        history.push(d);
        phi = phi_new;
        rho = rho_new;
        if fixed.is_none() && (d <= opts.tol && sweep > 0 || d == 0.0) {
            return Ok((phi, rho, history));
        }
    }
    if fixed.is_some() {
        return Ok((phi, rho, history));
    }
    Err(Error::SweepDivergence {
        sweeps: history.len(),
        last: history.last().copied().unwrap_or(f64::NAN),
    })
}

/// The four quadratic quantities of one field.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FieldEnergy {
    /// `max_n ‖u^n‖²`.
    pub sup_l2: f64,
    /// `Σ_{n≥1} dt Σ_faces a |Δu|²/h`.
    pub gradient: f64,
    /// `Σ_{n≥1} dt ‖(u^n − u^{n−1})/dt‖²`.
    pub time_derivative: f64,
    /// `Σ_{n≥1} dt ‖(a u_x)_x‖²`.
    pub flux_divergence: f64,
}

impl FieldEnergy {
    pub fn is_valid(&self) -> bool {
        [
            self.sup_l2,
            self.gradient,
            self.time_derivative,
            self.flux_divergence,
        ]
        .iter()
        .all(|v| v.is_finite() && *v >= 0.0)
    }

    pub fn total(&self) -> f64 {
        self.sup_l2 + self.gradient + self.time_derivative + self.flux_divergence
    }
}

/// Energy quantities per field plus the quadratic data budget.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EnergyReport {
    pub fields: Vec<FieldEnergy>,
    /// `‖sources‖²_{L²(Q)} + ‖y0‖²`.
    pub budget: f64,
}

impl EnergyReport {
    /// `Σ energies / budget`, the fitted constant of the Grönwall-type bound.
    pub fn fitted_constant(&self) -> f64 {
        let e: f64 = self.fields.iter().map(|f| f.total()).sum();
        if self.budget == 0.0 {
            if e == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            e / self.budget
        }
    }

    /// True if the fitted constant grew by more than `factor` from `coarse`.
    pub fn refinement_violation(coarse: &EnergyReport, fine: &EnergyReport, factor: f64) -> bool {
        fine.fitted_constant() > factor * coarse.fitted_constant()
    }
}

pub fn field_energy(disc: &Discretization, u: &Field) -> FieldEnergy {
    let dt = disc.dt();
    let g = &disc.grid;
    let mut e = FieldEnergy::default();
    for n in 0..u.rows() {
        e.sup_l2 = e.sup_l2.max(g.inner(u.row(n), u.row(n)));
        if n == 0 {
            continue;
        }
        e.gradient += dt * disc.gradient_energy(u.row(n));
        let ut: Vec<f64> = u
            .row(n)
            .iter()
            .zip(u.row(n - 1))
            .map(|(a, b)| (a - b) / dt)
            .collect();
        e.time_derivative += dt * g.inner(&ut, &ut);
        let lap = disc.flux_divergence(u.row(n));
        let m = disc.mass();
        e.flux_divergence += dt * lap.iter().zip(m).map(|(v, w)| w * v * v).sum::<f64>();
    }
    e
}

pub fn energy_diagnostics(
    disc: &Discretization,
    fields: &[&Field],
    sources: &[&Field],
    y0: &[f64],
) -> EnergyReport {
    let q = Quadrature::new(&disc.grid, &disc.mesh);
    let budget = sources.iter().map(|s| q.full(s, s)).sum::<f64>() + disc.grid.inner(y0, y0);
    EnergyReport {
        fields: fields.iter().map(|u| field_energy(disc, u)).collect(),
        budget,
    }
}
