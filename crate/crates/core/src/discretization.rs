//! Conservative finite-difference operators on the graded grid and the
//! per-level operator bundle of the cylinder equation.

use alloc::vec;
use alloc::vec::Vec;

use crate::band::Tridiag;
use crate::field::{Field, SpatialGrid, TimeMesh};
use crate::geometry::{
    transform_coefficients, Coefficients, ControlGeometry, Degeneracy, GradientWeight, MovingDomain,
};
use crate::{Error, Result};

/// Tridiagonal operator on all `N + 1` nodes. Boundary rows are zero, so the
/// operator maps Dirichlet data to interior values.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalOperator {
    full: Tridiag,
}

impl NodalOperator {
    pub fn full(&self) -> &Tridiag {
        &self.full
    }

    /// Apply to a full nodal row (boundary values included).
    pub fn apply_full(&self, u: &[f64]) -> Vec<f64> {
        self.full.apply(u)
    }

    /// Restriction to interior rows and columns (homogeneous Dirichlet data).
    pub fn interior(&self) -> Tridiag {
        let n = self.full.len();
        let mut t = Tridiag {
            lower: self.full.lower[1..n - 1].to_vec(),
            diag: self.full.diag[1..n - 1].to_vec(),
            upper: self.full.upper[1..n - 1].to_vec(),
        };
        t.lower[0] = 0.0;
        t.upper[n - 3] = 0.0;
        t
    }
}

/// Flux-form discretization of `scale·(a u_x)_x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stiffness {
    /// Symmetric, negative semi-definite flux matrix `S` on interior nodes.
    pub symmetric: Tridiag,
    /// `M⁻¹ S` with the lumped mass `M`; self-adjoint in the `M` product.
    pub operator: NodalOperator,
}

/// `scale·(a u_x)_x` with `a` sampled at face midpoints.
pub fn assemble_stiffness(grid: &SpatialGrid, a: impl Fn(f64) -> f64, scale: f64) -> Stiffness {
    let n = grid.intervals();
    let face: Vec<f64> = (0..n)
        .map(|j| scale * a(grid.face(j)) / grid.spacing(j))
        .collect();
    let mut full = Tridiag::zeros(n + 1);
    for j in 1..n {
        let m = grid.mass()[j];
        full.lower[j] = face[j - 1] / m;
        full.upper[j] = face[j] / m;
        full.diag[j] = -(face[j - 1] + face[j]) / m;
    }
    let mut sym = Tridiag::zeros(n - 1);
    for j in 1..n {
        let i = j - 1;
        sym.diag[i] = -(face[j - 1] + face[j]);
        if j > 1 {
            sym.lower[i] = face[j - 1];
        }
        if j + 1 < n {
            sym.upper[i] = face[j];
        }
    }
    Stiffness {
        symmetric: sym,
        operator: NodalOperator { full },
    }
}

/// Differencing rule for first-order terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DriftRule {
    /// One-sided difference against the flow of `u_t + c u_x`.
    #[default]
    Upwind,
    Central,
}

/// `c(x)·u_x` as it appears in `u_t + c u_x`.
pub fn assemble_drift(
    grid: &SpatialGrid,
    coeff: impl Fn(f64) -> f64,
    rule: DriftRule,
) -> NodalOperator {
    let n = grid.intervals();
    let x = grid.nodes();
    let mut full = Tridiag::zeros(n + 1);
    for j in 1..n {
        let c = coeff(x[j]);
        match rule {
            DriftRule::Upwind => {
                if c > 0.0 {
                    let h = x[j] - x[j - 1];
                    full.lower[j] = -c / h;
                    full.diag[j] = c / h;
                } else if c < 0.0 {
                    let h = x[j + 1] - x[j];
                    full.upper[j] = c / h;
                    full.diag[j] = -c / h;
                }
            }
            DriftRule::Central => {
                let h = x[j + 1] - x[j - 1];
                full.lower[j] = -c / h;
                full.upper[j] = c / h;
            }
        }
    }
    NodalOperator { full }
}

/// Central gradient `u_x`.
pub fn assemble_gradient(grid: &SpatialGrid) -> NodalOperator {
    assemble_drift(grid, |_| 1.0, DriftRule::Central)
}

/// One backward-Euler step `(I + dt·op) x = state + dt·source` on interior values.
///
/// Backward-in-time problems call this with the adjoint operator, which is the
/// reversed-time form of the same kernel.
pub fn step_implicit(state: &[f64], op: &Tridiag, source: &[f64], dt: f64) -> Result<Vec<f64>> {
    let rhs: Vec<f64> = state.iter().zip(source).map(|(s, f)| s + dt * f).collect();
    op.shifted(dt).solve(&rhs)
}

/// Cylinder model: grid, mesh, coefficients and the operators of
/// `y_t − b (a y_x)_x − B x y_x` at every time level, plus window indicators.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub grid: SpatialGrid,
    pub mesh: TimeMesh,
    pub deg: Degeneracy,
    pub gw: GradientWeight,
    pub domain: MovingDomain,
    pub windows: ControlGeometry,
    coeffs: Vec<Coefficients>,
    laplacian: Tridiag,
    gradient: Tridiag,
    transport: Vec<Tridiag>,
    beta: Vec<f64>,
    chi_leader: Vec<f64>,
    chi_followers: [Vec<f64>; 2],
    chi_obs: Vec<f64>,
}

impl Discretization {
    pub fn new(
        grid: SpatialGrid,
        mesh: TimeMesh,
        deg: Degeneracy,
        gw: GradientWeight,
        domain: MovingDomain,
        windows: ControlGeometry,
        rule: DriftRule,
    ) -> Result<Self> {
        if (domain.horizon() - mesh.horizon()).abs() > 1e-12 * mesh.horizon() {
            return Err(Error::InvalidParameter {
                name: "T",
                reason: "domain and time mesh horizons differ",
            });
        }
        let coeffs = mesh
            .times()
            .iter()
            .map(|&t| transform_coefficients(&domain, &deg, &gw, t))
            .collect::<Result<Vec<_>>>()?;
        let laplacian = assemble_stiffness(&grid, |x| deg.a(x), 1.0)
            .operator
            .interior();
        let gradient = assemble_gradient(&grid).interior();
        let transport = coeffs
            .iter()
            .map(|c| {
                let bb = c.big_b;
                let drift = assemble_drift(&grid, |x| -bb * x, rule).interior();
                laplacian.scaled(-c.b).add_scaled(&drift, 1.0)
            })
            .collect();
        let beta = grid.nodes()[1..grid.intervals()]
            .iter()
            .map(|&x| gw.beta(x))
            .collect();
        let chi_leader = grid.indicator(&windows.leader);
        let chi_followers = [
            grid.indicator(&windows.followers[0]),
            grid.indicator(&windows.followers[1]),
        ];
        let chi_obs = grid.indicator(&windows.observation);
        Ok(Self {
            grid,
            mesh,
            deg,
            gw,
            domain,
            windows,
            coeffs,
            laplacian,
            gradient,
            transport,
            beta,
            chi_leader,
            chi_followers,
            chi_obs,
        })
    }

    pub fn coefficients(&self, n: usize) -> Coefficients {
        self.coeffs[n]
    }

    pub fn levels(&self) -> usize {
        self.mesh.steps() + 1
    }

    pub fn interior(&self) -> usize {
        self.grid.interior()
    }

    pub fn dt(&self) -> f64 {
        self.mesh.dt()
    }

    /// `M⁻¹S ≈ (a u_x)_x` on interior nodes.
    pub fn laplacian(&self) -> &Tridiag {
        &self.laplacian
    }

    /// Central gradient on interior nodes.
    pub fn gradient(&self) -> &Tridiag {
        &self.gradient
    }

    /// `−b_n (a u_x)_x − B_n x u_x` at level `n`.
    pub fn transport(&self, n: usize) -> &Tridiag {
        &self.transport[n]
    }

    /// `C_n β(x_j)` on interior nodes.
    pub fn c_beta(&self, n: usize) -> Vec<f64> {
        let c = self.coeffs[n].c;
        self.beta.iter().map(|b| c * b).collect()
    }

    pub fn chi_leader(&self) -> &[f64] {
        &self.chi_leader
    }

    pub fn chi_follower(&self, i: usize) -> &[f64] {
        &self.chi_followers[i]
    }

    pub fn chi_observation(&self) -> &[f64] {
        &self.chi_obs
    }

    /// Interior mass weights.
    pub fn mass(&self) -> &[f64] {
        self.grid.interior_mass()
    }

    pub fn zeros(&self) -> Field {
        Field::like(&self.grid, &self.mesh)
    }

    /// Source `χ_O h + χ₁ v¹ + χ₂ v²`.
    pub fn control_source(&self, h: &Field, v1: &Field, v2: &Field) -> Field {
        let mut s = h.mask(&self.chi_leader);
        s.axpy(1.0, &v1.mask(&self.chi_followers[0]));
        s.axpy(1.0, &v2.mask(&self.chi_followers[1]));
        s
    }

    /// Face-based `Σ_faces a(x_{j+½}) (Δu)²/h` of a full row.
    pub fn gradient_energy(&self, u: &[f64]) -> f64 {
        let g = &self.grid;
        (0..g.intervals())
            .map(|j| {
                let d = u[j + 1] - u[j];
                self.deg.a(g.face(j)) * d * d / g.spacing(j)
            })
            .sum()
    }

    /// `(a u_x)_x` of a full row, interior values.
    pub fn flux_divergence(&self, u: &[f64]) -> Vec<f64> {
        self.laplacian.apply(&u[1..u.len() - 1])
    }
}

/// Marches `(I + dt J_n) w^n = w^{n−1} + dt g^{n−1}`
/// for `n = 1..=M`, given per-level interior operators `J_n`.
pub fn march_forward(
    ops: &[Tridiag],
    init: &[f64],
    source: Option<&Field>,
    dt: f64,
) -> Result<Field> {
    let rows = ops.len();
    let cols = init.len();
    let mut out = Field::zeros(rows, cols);
    out.row_mut(0).copy_from_slice(init);
    let zero = vec![0.0; cols - 2];
    for n in 1..rows {
        let src = source.map_or(&zero[..], |s| s.interior(n - 1));
        let next = step_implicit(out.interior(n - 1), &ops[n], src, dt).map_err(|_| {
            Error::StepFailure {
                level: n,
                residual: f64::NAN,
            }
        })?;
        out.set_interior(n, &next);
    }
    Ok(out)
}

/// Solves `(I + dt J*_{k+1}) q^k = q^{k+1} + dt r^{k+1}` for `k = M−1..=0`,
/// given per-level adjoint operators `J*_n`.
pub fn march_backward(
    adj: &[Tridiag],
    terminal: &[f64],
    source: Option<&Field>,
    dt: f64,
) -> Result<Field> {
    let rows = adj.len();
    let cols = terminal.len();
    let mut out = Field::zeros(rows, cols);
    out.row_mut(rows - 1).copy_from_slice(terminal);
    let zero = vec![0.0; cols - 2];
    for k in (0..rows - 1).rev() {
        let src = source.map_or(&zero[..], |s| s.interior(k + 1));
        let next = step_implicit(out.interior(k + 1), &adj[k + 1], src, dt).map_err(|_| {
            Error::StepFailure {
                level: k,
                residual: f64::NAN,
            }
        })?;
        out.set_interior(k, &next);
    }
    Ok(out)
}
