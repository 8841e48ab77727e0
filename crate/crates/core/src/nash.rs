//! Follower Nash quasi-equilibria, functional evaluation and gradients, and
//! the second-derivative convexity certificate.

use alloc::vec;
use alloc::vec::Vec;
use rand_core::RngCore;

use crate::discretization::Discretization;
use crate::field::{Field, Quadrature};
use crate::math::{exp, ln, sin, sqrt};
use crate::nonlinearity::SemilinearF;
use crate::solvers::{
    second_order_term, solve_adjoint_follower, solve_forward_controlled, trapezoid_factors,
    LinearOps, StepOptions,
};
use crate::{Error, Result};

/// Parameters of the two followers' tracking functionals.
#[derive(Debug, Clone)]
pub struct GameSpec {
    pub alpha: [f64; 2],
    pub mu: [f64; 2],
    /// Targets `y_{i,d}`, supported in the observation window.
    pub targets: [Field; 2],
    /// Weight the functionals by `|Jac τ|⁻¹ = 1/ℓ(t)`.
    pub jacobian_weighting: bool,
}

impl GameSpec {
    pub fn new(
        alpha: [f64; 2],
        mu: [f64; 2],
        targets: [Field; 2],
        jacobian_weighting: bool,
    ) -> Result<Self> {
        if alpha
            .iter()
            .chain(&mu)
            .any(|v| !(*v >= 0.0) || !v.is_finite())
        {
            return Err(Error::InvalidParameter {
                name: "alpha/mu",
                reason: "tracking and penalty weights must be finite and nonnegative",
            });
        }
        if mu.iter().any(|m| *m <= 0.0) {
            return Err(Error::InvalidParameter {
                name: "mu",
                reason: "control penalties must be positive",
            });
        }
        Ok(Self {
            alpha,
            mu,
            targets,
            jacobian_weighting,
        })
    }

    /// Zero targets.
    pub fn untargeted(disc: &Discretization, alpha: [f64; 2], mu: [f64; 2]) -> Self {
        Self {
            alpha,
            mu,
            targets: [disc.zeros(), disc.zeros()],
            jacobian_weighting: false,
        }
    }

    /// Time weights `ω_n`: `1/ℓ(t_n)` with Jacobian weighting, else 1.
    pub fn omega(&self, disc: &Discretization) -> Vec<f64> {
        disc.mesh
            .times()
            .iter()
            .map(|&t| {
                if self.jacobian_weighting {
                    1.0 / disc.domain.ell(t)
                } else {
                    1.0
                }
            })
            .collect()
    }
}

/// Smooth bump targets on the observation window with the given time
/// profile: `y_{1,d} = A s(x) π(t)`, `y_{2,d} = −½ A s(x) π(t)`.
pub fn bump_targets(disc: &Discretization, amplitude: f64, profile: &[f64]) -> [Field; 2] {
    let w = disc.windows.observation;
    let mut t1 = disc.zeros();
    let nodes = disc.grid.nodes().to_vec();
    for k in 0..disc.levels() {
        let row = t1.row_mut(k);
        for j in 1..nodes.len() - 1 {
            let x = nodes[j];
            if w.contains(x) {
                let s = sin(core::f64::consts::PI * (x - w.lo) / w.len());
                row[j] = amplitude * s * s * profile[k];
            }
        }
    }
    let t2 = t1.scaled(-0.5);
    [t1, t2]
}

/// `J_i = (α/2) Σ_n c_n dt ω_n ‖χ_d(y−y_d)‖² + (μ/2) Σ_{k<M} dt ω_k ‖χ_i v‖²`.
pub fn evaluate_functional(
    disc: &Discretization,
    game: &GameSpec,
    i: usize,
    y: &Field,
    v: &Field,
) -> f64 {
    let dt = disc.dt();
    let c = trapezoid_factors(disc.levels());
    let omega = game.omega(disc);
    let w = disc.grid.mass();
    let chi_d = disc.chi_observation();
    let chi_i = disc.chi_follower(i);
    let target = &game.targets[i];
    let mut track = 0.0;
    let mut cost = 0.0;
    for n in 0..disc.levels() {
        let (yr, tr) = (y.row(n), target.row(n));
        let s: f64 = (0..yr.len())
            .map(|j| w[j] * chi_d[j] * (yr[j] - tr[j]) * (yr[j] - tr[j]))
            .sum();
        track += c[n] * dt * omega[n] * s;
        if n + 1 < disc.levels() {
            let vr = v.row(n);
            let s: f64 = (0..vr.len()).map(|j| w[j] * chi_i[j] * vr[j] * vr[j]).sum();
            cost += dt * omega[n] * s;
        }
    }
    0.5 * game.alpha[i] * track + 0.5 * game.mu[i] * cost
}

/// `v_i = −p_i/(μ_i ω)` on the support of `χ_i`, at control levels `0..M`.
pub fn controls_from_adjoint(disc: &Discretization, game: &GameSpec, p: [&Field; 2]) -> [Field; 2] {
    let omega = game.omega(disc);
    let mk = |i: usize| {
        let chi = disc.chi_follower(i);
        let mut v = disc.zeros();
        for k in 0..disc.levels() - 1 {
            let s = -1.0 / (game.mu[i] * omega[k]);
            let pr = p[i].row(k).to_vec();
            for (j, x) in v.row_mut(k).iter_mut().enumerate() {
                if chi[j] > 0.0 {
                    *x = s * pr[j];
                }
            }
        }
        v
    };
    [mk(0), mk(1)]
}

/// L² norm over `O_i × (0, T)` at control levels.
pub fn control_norm(disc: &Discretization, i: usize, v: &Field) -> f64 {
    let q = Quadrature::new(&disc.grid, &disc.mesh);
    let masked = v.mask(disc.chi_follower(i));
    sqrt(q.adjoint(&masked, v))
}

/// Follower quasi-equilibrium for a fixed leader control.
#[derive(Debug, Clone)]
pub struct NashSolution {
    pub y: Field,
    pub p: [Field; 2],
    pub v: [Field; 2],
    /// `‖∇J_i‖/(1 + ‖v_i‖)` recomputed at the returned controls.
    pub residuals: [f64; 2],
    /// Relative sweep-to-sweep distances.
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NashOptions {
    pub tol: f64,
    pub max_sweeps: usize,
    pub step: StepOptions,
}

impl Default for NashOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_sweeps: 300,
            step: StepOptions::default(),
        }
    }
}

/// Picard iteration on the optimality system
/// `y = S(h, −p₁/μ₁, −p₂/μ₂)`, `p_i = adjoint_i(y)`.
pub fn nash_fixed_point(
    disc: &Discretization,
    game: &GameSpec,
    f: &SemilinearF,
    h: &Field,
    y0: &[f64],
    opts: NashOptions,
) -> Result<NashSolution> {
    let omega = game.omega(disc);
    let q = Quadrature::new(&disc.grid, &disc.mesh);
    let mut p = [disc.zeros(), disc.zeros()];
    let mut y = disc.zeros();
    let mut history = Vec::new();
    let mut converged = false;
    for sweep in 0..opts.max_sweeps {
        let v = controls_from_adjoint(disc, game, [&p[0], &p[1]]);
        let y_new = solve_forward_controlled(disc, f, y0, h, &v[0], &v[1], opts.step)?;
        let p_new = [
            solve_adjoint_follower(disc, f, &y_new, game.alpha[0], &game.targets[0], &omega)?,
            solve_adjoint_follower(disc, f, &y_new, game.alpha[1], &game.targets[1], &omega)?,
        ];
        let mut d = 0.0;
        let mut s = 0.0;
        for (a, b) in [(&y_new, &y), (&p_new[0], &p[0]), (&p_new[1], &p[1])] {
            let diff = a.sub(b);
            d += q.full(&diff, &diff);
            s += q.full(a, a);
        }
        let dist = if d == 0.0 {
            0.0
        } else {
            sqrt(d / s.max(f64::MIN_POSITIVE))
        };
        history.push(dist);
        y = y_new;
        p = p_new;
        if !dist.is_finite() || dist > 1e8 {
            break;
        }
        if dist <= opts.tol && sweep > 0 || dist == 0.0 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::SweepDivergence {
            sweeps: history.len(),
            last: history.last().copied().unwrap_or(f64::NAN),
        });
    }
    let v = controls_from_adjoint(disc, game, [&p[0], &p[1]]);
    let mut residuals = [0.0; 2];
    for i in 0..2 {
        let g = functional_gradient(disc, game, f, i, y0, h, [&v[0], &v[1]], opts.step)?;
        residuals[i] = control_norm(disc, i, &g) / (1.0 + control_norm(disc, i, &v[i]));
    }
    Ok(NashSolution {
        y,
        p,
        v,
        residuals,
        history,
    })
}

/// Riesz representative `μ_i ω v_i + p_i` of `D_{v_i} J_i` on `O_i`.
pub fn functional_gradient(
    disc: &Discretization,
    game: &GameSpec,
    f: &SemilinearF,
    i: usize,
    y0: &[f64],
    h: &Field,
    v: [&Field; 2],
    step: StepOptions,
) -> Result<Field> {
    let omega = game.omega(disc);
    let y = solve_forward_controlled(disc, f, y0, h, v[0], v[1], step)?;
    let p = solve_adjoint_follower(disc, f, &y, game.alpha[i], &game.targets[i], &omega)?;
    Ok(gradient_from_adjoint(disc, game, i, v[i], &p))
}

fn gradient_from_adjoint(
    disc: &Discretization,
    game: &GameSpec,
    i: usize,
    v: &Field,
    p: &Field,
) -> Field {
    let omega = game.omega(disc);
    let chi = disc.chi_follower(i);
    let mut g = disc.zeros();
    for k in 0..disc.levels() - 1 {
        let (vr, pr) = (v.row(k).to_vec(), p.row(k).to_vec());
        for (j, x) in g.row_mut(k).iter_mut().enumerate() {
            if chi[j] > 0.0 {
                *x = game.mu[i] * omega[k] * vr[j] + pr[j];
            }
        }
    }
    g
}

/// `⟨a, b⟩` over `O_i × (0, T)` at control levels.
pub fn control_inner(disc: &Discretization, i: usize, a: &Field, b: &Field) -> f64 {
    let q = Quadrature::new(&disc.grid, &disc.mesh);
    q.adjoint(&a.mask(disc.chi_follower(i)), b)
}

/// Controls and state at which second derivatives are taken.
#[derive(Debug, Clone)]
pub struct SecondOrderState<'a> {
    pub y: &'a Field,
    /// Adjoint of the differentiated follower at `y`.
    pub p: &'a Field,
}

/// `η + μ ω v̄` for the direction `v̄` of follower `i`: the Hessian of `J_i`
/// with respect to `v_i` applied to `v̄`, as a field on control levels.
pub fn hessian_apply(
    disc: &Discretization,
    game: &GameSpec,
    f: &SemilinearF,
    i: usize,
    state: &SecondOrderState,
    dir: &Field,
) -> Result<Field> {
    let omega = game.omega(disc);
    let c = trapezoid_factors(disc.levels());
    let ops = LinearOps::along(disc, f, state.y);
    let chi_i = disc.chi_follower(i);
    let chi_d = disc.chi_observation();
    let theta = ops.forward(&vec![0.0; dir.cols()], Some(&dir.mask(chi_i)))?;
    // η^{n−1} from η^n with source α c ω χ_d θ^n − (dJ_n[θ^n])* p^{n−1}
    let mut src = disc.zeros();
    for n in 1..disc.levels() {
        let corr = second_order_term(
            disc,
            f,
            n,
            state.y.interior(n),
            theta.interior(n),
            state.p.interior(n - 1),
        );
        let s = game.alpha[i] * c[n] * omega[n];
        let th = theta.row(n).to_vec();
        let row = src.row_mut(n);
        for j in 1..row.len() - 1 {
            row[j] = s * chi_d[j] * th[j] - corr[j - 1];
        }
    }
    let eta = ops.backward(&vec![0.0; dir.cols()], Some(&src))?;
    let mut out = disc.zeros();
    for k in 0..disc.levels() - 1 {
        let (er, dr) = (eta.row(k).to_vec(), dir.row(k).to_vec());
        for (j, x) in out.row_mut(k).iter_mut().enumerate() {
            *x = er[j] + game.mu[i] * omega[k] * dr[j];
        }
    }
    Ok(out)
}

/// `⟨D²_{v_i}J_i (v̄, ṽ)⟩`, averaged over both orderings.
pub fn second_derivative_bilinear(
    disc: &Discretization,
    game: &GameSpec,
    f: &SemilinearF,
    i: usize,
    state: &SecondOrderState,
    a: &Field,
    b: &Field,
) -> Result<f64> {
    let ha = hessian_apply(disc, game, f, i, state, a)?;
    let hb = hessian_apply(disc, game, f, i, state, b)?;
    Ok(0.5 * (control_inner(disc, i, &ha, b) + control_inner(disc, i, &hb, a)))
}

/// `⟨D²_{v_i}J_i (v̄, v̄)⟩ = ∫ η v̄ + μ ∫ ω |v̄|²` over `O_i`.
pub fn second_derivative_form(
    disc: &Discretization,
    game: &GameSpec,
    f: &SemilinearF,
    i: usize,
    state: &SecondOrderState,
    dir: &Field,
) -> Result<f64> {
    let h = hessian_apply(disc, game, f, i, state, dir)?;
    Ok(control_inner(disc, i, &h, dir))
}

/// Random probe directions supported in `O_i` at control levels, uniform in
/// `[−1, 1]` nodewise.
pub fn random_probes(
    disc: &Discretization,
    i: usize,
    count: usize,
    rng: &mut impl RngCore,
) -> Vec<Field> {
    let chi = disc.chi_follower(i).to_vec();
    (0..count)
        .map(|_| {
            let mut v = disc.zeros();
            for k in 0..disc.levels() - 1 {
                for (j, x) in v.row_mut(k).iter_mut().enumerate() {
                    let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
                    if chi[j] > 0.0 {
                        *x = 2.0 * u - 1.0;
                    }
                }
            }
            v
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexityReport {
    /// `min_probes form/⟨ω v̄, v̄⟩`.
    pub margin: f64,
    pub certified: bool,
    pub normalized_forms: Vec<f64>,
}

/// Convexity margin of `J_i` in `v_i` at a quasi-equilibrium.
pub fn convexity_margin(
    disc: &Discretization,
    game: &GameSpec,
    f: &SemilinearF,
    i: usize,
    sol: &NashSolution,
    probes: &[Field],
) -> Result<ConvexityReport> {
    let state = SecondOrderState {
        y: &sol.y,
        p: &sol.p[i],
    };
    let omega = game.omega(disc);
    let mut forms = Vec::with_capacity(probes.len());
    for d in probes {
        let mut wd = d.clone();
        for (k, om) in omega.iter().enumerate() {
            wd.row_mut(k).iter_mut().for_each(|v| *v *= om);
        }
        let nrm = control_inner(disc, i, &wd, d);
        if nrm == 0.0 {
            continue;
        }
        forms.push(second_derivative_form(disc, game, f, i, &state, d)? / nrm);
    }
    let margin = forms.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(ConvexityReport {
        margin,
        certified: margin > 0.0 && margin.is_finite(),
        normalized_forms: forms,
    })
}

/// One trial of the `μ` bisection.
#[derive(Debug, Clone, PartialEq)]
pub struct MuTrial {
    pub mu: f64,
    pub certified: bool,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MuThreshold {
    /// Smallest certified `μ` found (upper end of the final bracket); `None`
    /// if even the upper bracket end fails.
    pub mu_star: Option<f64>,
    pub trials: Vec<MuTrial>,
}

/// Log-scale bisection for the convexity threshold with `μ₁ = μ₂ = μ`.
pub fn convexity_threshold(
    disc: &Discretization,
    game: &GameSpec,
    f: &SemilinearF,
    h: &Field,
    y0: &[f64],
    probes: &[Field],
    bracket: (f64, f64),
    iterations: usize,
    opts: NashOptions,
) -> Result<MuThreshold> {
    let mut trials = Vec::new();
    let trial = |mu: f64, trials: &mut Vec<MuTrial>| -> bool {
        let mut g = game.clone();
        g.mu = [mu, mu];
        let res = nash_fixed_point(disc, &g, f, h, y0, opts)
            .and_then(|sol| convexity_margin(disc, &g, f, 0, &sol, probes));
        let (certified, margin) = match res {
            Ok(r) => (r.certified, r.margin),
            Err(_) => (false, f64::NAN),
        };
        trials.push(MuTrial {
            mu,
            certified,
            margin,
        });
        certified
    };
    let (mut lo, mut hi) = (ln(bracket.0), ln(bracket.1));
    if trial(exp(lo), &mut trials) {
        return Ok(MuThreshold {
            mu_star: Some(exp(lo)),
            trials,
        });
    }
    if !trial(exp(hi), &mut trials) {
        return Ok(MuThreshold {
            mu_star: None,
            trials,
        });
    }
    for _ in 0..iterations {
        let mid = 0.5 * (lo + hi);
        if trial(exp(mid), &mut trials) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(MuThreshold {
        mu_star: Some(exp(hi)),
        trials,
    })
}
