//! Carleman weight functions, the ρ-weights of the control problem, and
//! empirical observability/Carleman ratios.
//!
//! All exponential factors are handled through their logarithms; a weight
//! that exceeds the representable range saturates to `f64::INFINITY`.

use alloc::vec;
use alloc::vec::Vec;
use rand_core::RngCore;

use crate::discretization::Discretization;
use crate::field::Field;
use crate::geometry::Degeneracy;
use crate::math::{exp, ln, log_sum_exp, powf, sin};
use crate::solvers::{
    solve_adjoint_coupled, solve_adjoint_reduced, LinearizedSystem, PicardOptions,
};
use crate::{Error, Result};

/// `Ψ` on `[0, 1]`: `∫₀ˣ s/a` left of `α'`, `−∫_{β'}ˣ s/a` right of `β'`,
/// and a quintic Hermite bridge matching value, slope and curvature between.
#[derive(Debug, Clone, PartialEq)]
pub struct Psi {
    alpha: f64,
    ap: f64,
    bp: f64,
    bridge: [f64; 6],
    max: f64,
    min: f64,
}

impl Psi {
    pub fn new(deg: &Degeneracy, ap: f64, bp: f64) -> Result<Self> {
        if !(0.0 < ap && ap < bp && bp < 1.0) {
            return Err(Error::InvalidParameter {
                name: "alpha_p/beta_p",
                reason: "need 0 < α' < β' < 1",
            });
        }
        let alpha = deg.alpha();
        let e = 2.0 - alpha;
        let (p0, d0, s0) = (
            powf(ap, e) / e,
            powf(ap, 1.0 - alpha),
            (1.0 - alpha) * powf(ap, -alpha),
        );
        let (p1, d1, s1) = (
            0.0,
            -powf(bp, 1.0 - alpha),
            -(1.0 - alpha) * powf(bp, -alpha),
        );
        let h = bp - ap;
        let c0 = p0;
        let c1 = h * d0;
        let c2 = 0.5 * h * h * s0;
        let pp = p1 - (c0 + c1 + c2);
        let dd = h * d1 - (c1 + 2.0 * c2);
        let ss = h * h * s1 - 2.0 * c2;
        let c3 = 10.0 * pp - 4.0 * dd + 0.5 * ss;
        let c4 = -15.0 * pp + 7.0 * dd - ss;
        let c5 = 6.0 * pp - 3.0 * dd + 0.5 * ss;
        let mut psi = Self {
            alpha,
            ap,
            bp,
            bridge: [c0, c1, c2, c3, c4, c5],
            max: 0.0,
            min: 0.0,
        };
        // Extrema on a fixed fine sampling, independent of any solver grid.
        let samples = 20_000;
        let (mut mx, mut mn) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..=samples {
            let v = psi.eval(i as f64 / samples as f64);
            mx = mx.max(v);
            mn = mn.min(v);
        }
        psi.max = mx;
        psi.min = mn;
        Ok(psi)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let e = 2.0 - self.alpha;
        if x < self.ap {
            if x <= 0.0 {
                0.0
            } else {
                powf(x, e) / e
            }
        } else if x >= self.bp {
            -(powf(x, e) - powf(self.bp, e)) / e
        } else {
            let s = (x - self.ap) / (self.bp - self.ap);
            let c = &self.bridge;
            c[0] + s * (c[1] + s * (c[2] + s * (c[3] + s * (c[4] + s * c[5]))))
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        if x < self.ap {
            if x <= 0.0 {
                0.0
            } else {
                powf(x, 1.0 - self.alpha)
            }
        } else if x >= self.bp {
            -powf(x, 1.0 - self.alpha)
        } else {
            let h = self.bp - self.ap;
            let s = (x - self.ap) / h;
            let c = &self.bridge;
            (c[1] + s * (2.0 * c[2] + s * (3.0 * c[3] + s * (4.0 * c[4] + s * 5.0 * c[5])))) / h
        }
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        if x < self.ap {
            if x <= 0.0 {
                f64::INFINITY
            } else {
                (1.0 - self.alpha) * powf(x, -self.alpha)
            }
        } else if x >= self.bp {
            -(1.0 - self.alpha) * powf(x, -self.alpha)
        } else {
            let h = self.bp - self.ap;
            let s = (x - self.ap) / h;
            let c = &self.bridge;
            (2.0 * c[2] + s * (6.0 * c[3] + s * (12.0 * c[4] + s * 20.0 * c[5]))) / (h * h)
        }
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    /// `|Ψ|_∞`.
    pub fn sup_abs(&self) -> f64 {
        self.max.abs().max(self.min.abs())
    }
}

/// `θ(t) = (t(T−t))⁻⁴`, `m(t)` and `τ = 1/m`.
///
/// On `[0, T/2]`, `m = t⁴(T−t)⁴ + m_floor (1 − 2t/T)³`, which glues to the
/// exact branch at `T/2` with matching first and second derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeWeights {
    pub horizon: f64,
    pub m_floor: f64,
}

impl TimeWeights {
    /// Default floor `m(0) = m(T/2) = T⁸/256`.
    pub fn new(horizon: f64, m_floor: Option<f64>) -> Result<Self> {
        let m_floor = m_floor.unwrap_or(powf(horizon, 8.0) / 256.0);
        if !(m_floor > 0.0) || !(horizon > 0.0) {
            return Err(Error::InvalidParameter {
                name: "m_floor",
                reason: "m(0) must be positive",
            });
        }
        Ok(Self { horizon, m_floor })
    }

    /// Infinite at `t ∈ {0, T}`.
    pub fn theta(&self, t: f64) -> f64 {
        let g = t * (self.horizon - t);
        if g <= 0.0 {
            f64::INFINITY
        } else {
            1.0 / (g * g * g * g)
        }
    }

    pub fn m(&self, t: f64) -> f64 {
        let tt = self.horizon;
        let g = t * (tt - t);
        let base = g * g * g * g;
        if t < 0.5 * tt {
            let r = 1.0 - 2.0 * t / tt;
            base + self.m_floor * r * r * r
        } else {
            base
        }
    }

    pub fn tau(&self, t: f64) -> f64 {
        let m = self.m(t);
        if m <= 0.0 {
            f64::INFINITY
        } else {
            1.0 / m
        }
    }

    pub fn ln_tau(&self, t: f64) -> f64 {
        let m = self.m(t);
        if m <= 0.0 {
            f64::INFINITY
        } else {
            -ln(m)
        }
    }

    /// `min_t τ`, from `max m` on a fine sampling.
    pub fn tau_min(&self) -> f64 {
        let n = 4096;
        let mx = (0..=n)
            .map(|i| self.m(self.horizon * i as f64 / n as f64))
            .fold(0.0, f64::max);
        1.0 / mx
    }
}

/// Choice of the Carleman parameter `s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SChoice {
    Fixed(f64),
    /// `s = κ/((e^{3λP} − η_max) τ_min)`, so that `−s A*` starts at `κ`.
    Auto {
        kappa: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarlemanParams {
    pub s: SChoice,
    /// `None` selects `(1 + lambda_margin)·λ_min`.
    pub lambda: Option<f64>,
    pub lambda_margin: f64,
    pub alpha_p: f64,
    pub beta_p: f64,
    pub m_floor: Option<f64>,
    /// Levels whose `ln ρ₂` exceeds its minimum by more than this are
    /// treated as saturated.
    pub saturation: f64,
}

impl Default for CarlemanParams {
    fn default() -> Self {
        Self {
            s: SChoice::Auto { kappa: 2.0 },
            lambda: None,
            lambda_margin: 0.1,
            alpha_p: 0.45,
            beta_p: 0.55,
            m_floor: None,
            saturation: 36.0,
        }
    }
}

/// Smallest `λ` with `3A* < 2Â`, i.e. `e^{3λP} − 3e^{λ(P+Ψ_max)} + 2e^{λ(P+Ψ_min)} > 0`.
pub fn lambda_min(psi: &Psi) -> f64 {
    let p = psi.sup_abs();
    // divided by e^{3λP}: 1 − 3e^{λ(Ψmax−2P)} + 2e^{λ(Ψmin−2P)}
    let holds = |l: f64| {
        1.0 - 3.0 * exp(l * (psi.max() - 2.0 * p)) + 2.0 * exp(l * (psi.min() - 2.0 * p)) > 0.0
    };
    let mut hi = 1e-3;
    while !holds(hi) {
        hi *= 2.0;
        if hi > 1e8 {
            return f64::INFINITY;
        }
    }
    if hi == 1e-3 {
        return 0.0;
    }
    let mut lo = 0.5 * hi;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if holds(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    hi
}

/// Fitted constants of `ρ₁ ≤ Cρ̂ ≤ Cρ₀ ≤ Cρ₂` and `ρ₂ ≤ Cρ₁²` over active levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoOrdering {
    pub rho1_over_rhohat: f64,
    pub rhohat_over_rho0: f64,
    pub rho0_over_rho2: f64,
    pub rho2_over_rho1_sq: f64,
}

impl RhoOrdering {
    pub fn all_finite(&self) -> bool {
        [
            self.rho1_over_rhohat,
            self.rhohat_over_rho0,
            self.rho0_over_rho2,
            self.rho2_over_rho1_sq,
        ]
        .iter()
        .all(|v| v.is_finite() && *v > 0.0)
    }
}

/// Tabulated weights on a time mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct CarlemanWeights {
    pub psi: Psi,
    pub time: TimeWeights,
    pub s: f64,
    pub lambda: f64,
    pub lambda_min: f64,
    /// `|Ψ|_∞`.
    pub p: f64,
    pub eta_max: f64,
    pub eta_min: f64,
    /// `e^{3λ|Ψ|_∞}`.
    pub e3: f64,
    pub times: Vec<f64>,
    pub ln_tau: Vec<f64>,
    pub ln_rho0: Vec<f64>,
    pub ln_rho1: Vec<f64>,
    pub ln_rho2: Vec<f64>,
    pub ln_rhohat: Vec<f64>,
    /// First saturated level `K`; levels `K..` carry infinite weights.
    pub active: usize,
}

impl CarlemanWeights {
    pub fn build(params: &CarlemanParams, deg: &Degeneracy, times: &[f64]) -> Result<Self> {
        let psi = Psi::new(deg, params.alpha_p, params.beta_p)?;
        let horizon = *times.last().ok_or(Error::InvalidParameter {
            name: "times",
            reason: "empty time mesh",
        })?;
        let time = TimeWeights::new(horizon, params.m_floor)?;
        let lmin = lambda_min(&psi);
        let lambda = params.lambda.unwrap_or((1.0 + params.lambda_margin) * lmin);
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParameter {
                name: "lambda",
                reason: "λ must be positive and finite",
            });
        }
        let p = psi.sup_abs();
        let eta_max = exp(lambda * (p + psi.max()));
        let eta_min = exp(lambda * (p + psi.min()));
        let e3 = exp(3.0 * lambda * p);
        let gap = e3 - eta_max;
        let s = match params.s {
            SChoice::Fixed(s) => s,
            SChoice::Auto { kappa } => kappa / (gap * time.tau_min()),
        };
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::InvalidParameter {
                name: "s",
                reason: "s must be positive and finite",
            });
        }
        let mut w = Self {
            psi,
            time,
            s,
            lambda,
            lambda_min: lmin,
            p,
            eta_max,
            eta_min,
            e3,
            times: times.to_vec(),
            ln_tau: Vec::new(),
            ln_rho0: Vec::new(),
            ln_rho1: Vec::new(),
            ln_rho2: Vec::new(),
            ln_rhohat: Vec::new(),
            active: times.len(),
        };
        let (le_max, le_min) = (ln(eta_max), ln(eta_min));
        for &t in times {
            let lt = time.ln_tau(t);
            let tau = time.tau(t);
            // −sA* = sτ(e3 − η_max)
            let e = s * tau * gap;
            let lz_star = lt + le_max;
            let lz_hat = lt + le_min;
            w.ln_tau.push(lt);
            if !lt.is_finite() {
                w.ln_rho0.push(f64::INFINITY);
                w.ln_rho1.push(f64::INFINITY);
                w.ln_rho2.push(f64::INFINITY);
                w.ln_rhohat.push(f64::INFINITY);
                continue;
            }
            w.ln_rho0.push(e - 2.0 * lz_star);
            w.ln_rho1.push(e - 4.0 * lz_star);
            w.ln_rho2.push(1.5 * e - lz_hat);
            w.ln_rhohat.push(e - 3.0 * lz_star);
        }
        let floor = w.ln_rho2.iter().copied().fold(f64::INFINITY, f64::min);
        w.active = w
            .ln_rho2
            .iter()
            .position(|&l| !(l - floor <= params.saturation))
            .unwrap_or(times.len());
        Ok(w)
    }

    pub fn levels(&self) -> usize {
        self.times.len()
    }

    pub fn is_active(&self, n: usize) -> bool {
        n < self.active
    }

    fn sat(l: f64) -> f64 {
        if l > 709.0 {
            f64::INFINITY
        } else {
            exp(l)
        }
    }

    pub fn rho0(&self, n: usize) -> f64 {
        Self::sat(self.ln_rho0[n])
    }
    pub fn rho1(&self, n: usize) -> f64 {
        Self::sat(self.ln_rho1[n])
    }
    pub fn rho2(&self, n: usize) -> f64 {
        Self::sat(self.ln_rho2[n])
    }
    pub fn rhohat(&self, n: usize) -> f64 {
        Self::sat(self.ln_rhohat[n])
    }

    /// `ρ^{-2}` for a log-weight, zero on saturated levels.
    fn inv_sq(&self, ln_rho: &[f64], n: usize) -> f64 {
        if n >= self.active {
            0.0
        } else {
            exp(-2.0 * ln_rho[n])
        }
    }

    pub fn inv_sq_rho0(&self, n: usize) -> f64 {
        self.inv_sq(&self.ln_rho0, n)
    }

    pub fn inv_sq_rho1(&self, n: usize) -> f64 {
        self.inv_sq(&self.ln_rho1, n)
    }

    /// `ρ²` for a log-weight; infinite on saturated levels.
    fn sq(&self, ln_rho: &[f64], n: usize) -> f64 {
        if n >= self.active {
            f64::INFINITY
        } else {
            exp(2.0 * ln_rho[n])
        }
    }

    pub fn sq_rho0(&self, n: usize) -> f64 {
        self.sq(&self.ln_rho0, n)
    }
    pub fn sq_rho1(&self, n: usize) -> f64 {
        self.sq(&self.ln_rho1, n)
    }
    pub fn sq_rho2(&self, n: usize) -> f64 {
        self.sq(&self.ln_rho2, n)
    }
    pub fn sq_rhohat(&self, n: usize) -> f64 {
        self.sq(&self.ln_rhohat, n)
    }

    /// `η(x) = e^{λ(|Ψ|_∞ + Ψ(x))}`.
    pub fn eta(&self, x: f64) -> f64 {
        exp(self.lambda * (self.p + self.psi.eval(x)))
    }

    /// `A(x, t_n) = τ(η − e^{3λP})`; `−∞` where `τ` is infinite.
    pub fn big_a(&self, x: f64, n: usize) -> f64 {
        let tau = self.time.tau(self.times[n]);
        tau * (self.eta(x) - self.e3)
    }

    pub fn a_star(&self, n: usize) -> f64 {
        self.time.tau(self.times[n]) * (self.eta_max - self.e3)
    }

    pub fn a_hat(&self, n: usize) -> f64 {
        self.time.tau(self.times[n]) * (self.eta_min - self.e3)
    }

    pub fn zeta_star(&self, n: usize) -> f64 {
        self.time.tau(self.times[n]) * self.eta_max
    }

    pub fn zeta_hat(&self, n: usize) -> f64 {
        self.time.tau(self.times[n]) * self.eta_min
    }

    /// `ζ₀ = ζ*/ζ̂`.
    pub fn zeta0(&self) -> f64 {
        self.eta_max / self.eta_min
    }

    /// `ln(e^{2sA} (sλζ)^k)` at `(x, t_n)`.
    pub fn ln_carleman(&self, x: f64, n: usize, k: f64) -> f64 {
        let lt = self.ln_tau[n];
        if !lt.is_finite() {
            return f64::NEG_INFINITY;
        }
        let tau = exp(lt);
        let eta_ln = self.lambda * (self.p + self.psi.eval(x));
        let two_s_a = 2.0 * self.s * tau * (exp(eta_ln) - self.e3);
        two_s_a + k * (ln(self.s * self.lambda) + lt + eta_ln)
    }

    /// Largest relative mismatch of `ρ̂² = ρ₁ρ₀` over levels where both sides
    /// are representable.
    pub fn identity_mismatch(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for n in 0..self.levels() {
            let (a, b) = (2.0 * self.ln_rhohat[n], self.ln_rho1[n] + self.ln_rho0[n]);
            if !(a.abs() < 700.0 && b.abs() < 700.0) {
                continue;
            }
            let (x, y) = (exp(a), exp(b));
            worst = worst.max((x - y).abs() / x.abs().max(y.abs()));
        }
        worst
    }

    /// `max |ln ρ̂² − ln ρ₁ρ₀| / max(1, |ln ρ̂²|)` over finite levels.
    pub fn identity_log_mismatch(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for n in 0..self.levels() {
            let (a, b) = (2.0 * self.ln_rhohat[n], self.ln_rho1[n] + self.ln_rho0[n]);
            if a.is_finite() {
                worst = worst.max((a - b).abs() / a.abs().max(1.0));
            }
        }
        worst
    }

    /// Smallest constants in the ρ orderings, over levels with finite `τ`.
    pub fn ordering(&self) -> RhoOrdering {
        let mut o = RhoOrdering {
            rho1_over_rhohat: 0.0,
            rhohat_over_rho0: 0.0,
            rho0_over_rho2: 0.0,
            rho2_over_rho1_sq: 0.0,
        };
        for n in 0..self.levels() {
            if !self.ln_tau[n].is_finite() {
                continue;
            }
            o.rho1_over_rhohat = o
                .rho1_over_rhohat
                .max(exp(self.ln_rho1[n] - self.ln_rhohat[n]));
            o.rhohat_over_rho0 = o
                .rhohat_over_rho0
                .max(exp(self.ln_rhohat[n] - self.ln_rho0[n]));
            o.rho0_over_rho2 = o.rho0_over_rho2.max(exp(self.ln_rho0[n] - self.ln_rho2[n]));
            o.rho2_over_rho1_sq = o
                .rho2_over_rho1_sq
                .max(exp(self.ln_rho2[n] - 2.0 * self.ln_rho1[n]));
        }
        o
    }

    /// `3A*(t) < 2Â(t) < 0` on every level with finite `τ`.
    pub fn comparison_holds(&self) -> bool {
        (0..self.levels())
            .filter(|&n| self.ln_tau[n].is_finite())
            .all(|n| 3.0 * self.a_star(n) < 2.0 * self.a_hat(n) && self.a_hat(n) < 0.0)
    }

    /// `max_t |ζ*/ζ̂ − ζ₀|/ζ₀` over finite levels.
    pub fn zeta_ratio_drift(&self) -> f64 {
        let z0 = self.zeta0();
        (0..self.levels())
            .filter(|&n| self.ln_tau[n].is_finite())
            .map(|n| (self.zeta_star(n) / self.zeta_hat(n) - z0).abs() / z0)
            .fold(0.0, f64::max)
    }
}

/// Grid-independent random data `Σ_{k=1}^{modes} c_k sin(kπx)` with
/// `c_k ~ U(−1, 1)/k`.
pub fn random_sine_series(x: &[f64], modes: usize, rng: &mut impl RngCore) -> Vec<f64> {
    let coeffs: Vec<f64> = (1..=modes)
        .map(|k| {
            let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
            (2.0 * u - 1.0) / k as f64
        })
        .collect();
    let n = x.len();
    x.iter()
        .enumerate()
        .map(|(j, &xj)| {
            if j == 0 || j + 1 == n {
                0.0
            } else {
                coeffs
                    .iter()
                    .enumerate()
                    .map(|(k, c)| c * sin((k + 1) as f64 * core::f64::consts::PI * xj))
                    .sum()
            }
        })
        .collect()
}

/// Per-sample and summary ratios of an empirical inequality.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioReport {
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
    pub skipped: usize,
    pub s: f64,
    pub lambda: f64,
}

impl RatioReport {
    fn from(ratios: Vec<f64>, skipped: usize, w: &CarlemanWeights) -> Self {
        let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
        Self {
            ratios,
            max_ratio,
            skipped,
            s: w.s,
            lambda: w.lambda,
        }
    }
}

/// `ln ∫_{O×(0,T)} e^{2sA} (sλζ)^8 |φ|²` over adjoint levels `0..M`.
fn ln_observation(disc: &Discretization, w: &CarlemanWeights, phi: &Field) -> f64 {
    let x = disc.grid.nodes();
    let m = disc.grid.mass();
    let chi = disc.chi_leader();
    let dt = disc.dt();
    let terms = (0..disc.levels() - 1).flat_map(move |k| {
        (1..x.len() - 1).filter_map(move |j| {
            let v = phi.row(k)[j];
            let c = chi[j] * m[j] * dt * v * v;
            if c > 0.0 {
                Some(w.ln_carleman(x[j], k, 8.0) + ln(c))
            } else {
                None
            }
        })
    });
    let v: Vec<f64> = terms.collect();
    log_sum_exp(v.iter().copied())
}

/// Ratio `(‖φ(0)‖² + ‖ϱ(T)‖²) / ∫_O e^{2sA}(sλζ)⁸|φ|²` for `terminals`.
pub fn empirical_observability(
    disc: &Discretization,
    sys: &LinearizedSystem,
    omega: &[f64],
    w: &CarlemanWeights,
    terminals: &[Vec<f64>],
    opts: PicardOptions,
) -> Result<RatioReport> {
    let zero = disc.zeros();
    let mut ratios = Vec::new();
    let mut skipped = 0;
    for phi_t in terminals {
        let (phi, rho, _) =
            solve_adjoint_reduced(disc, sys, omega, phi_t, &zero, &zero, opts, None)?;
        let m = disc.mesh.steps();
        let lhs = disc.grid.inner(phi.row(0), phi.row(0)) + disc.grid.inner(rho.row(m), rho.row(m));
        let ln_rhs = ln_observation(disc, w, &phi);
        if lhs == 0.0 || ln_rhs == f64::NEG_INFINITY {
            skipped += 1;
            continue;
        }
        ratios.push(exp(ln(lhs) - ln_rhs));
    }
    Ok(RatioReport::from(ratios, skipped, w))
}

/// Random data of one Carleman sample.
#[derive(Debug, Clone)]
pub struct CarlemanSample {
    pub phi_t: Vec<f64>,
    pub f: Field,
    pub f_i: [Field; 2],
}

/// Ratio `Γ(φ, ψ₁, ψ₂) / RHS` of the Carleman inequality per sample.
pub fn empirical_carleman(
    disc: &Discretization,
    sys: &LinearizedSystem,
    w: &CarlemanWeights,
    samples: &[CarlemanSample],
    opts: PicardOptions,
) -> Result<RatioReport> {
    let mut ratios = Vec::new();
    let mut skipped = 0;
    for smp in samples {
        let sol = solve_adjoint_coupled(
            disc,
            sys,
            &smp.phi_t,
            &smp.f,
            [&smp.f_i[0], &smp.f_i[1]],
            opts,
        )?;
        // φ on adjoint levels 0..M, ψ on state levels 1..=M
        let lg = ln_gamma(disc, w, &sol.phi, 0..disc.levels() - 1);
        let lg1 = ln_gamma(disc, w, &sol.psi[0], 1..disc.levels());
        let lg2 = ln_gamma(disc, w, &sol.psi[1], 1..disc.levels());
        let ln_lhs = log_sum_exp([lg, lg1, lg2].into_iter());
        let ls = ln_source(disc, w, &smp.f, 1..disc.levels());
        let ls1 = ln_source(disc, w, &smp.f_i[0], 0..disc.levels() - 1);
        let ls2 = ln_source(disc, w, &smp.f_i[1], 0..disc.levels() - 1);
        let lo = ln_observation(disc, w, &sol.phi);
        let ln_rhs = log_sum_exp([ls, ls1, ls2, lo].into_iter());
        if ln_lhs == f64::NEG_INFINITY || ln_rhs == f64::NEG_INFINITY {
            skipped += 1;
            continue;
        }
        ratios.push(exp(ln_lhs - ln_rhs));
    }
    Ok(RatioReport::from(ratios, skipped, w))
}

fn ln_gamma(
    disc: &Discretization,
    w: &CarlemanWeights,
    u: &Field,
    levels: core::ops::Range<usize>,
) -> f64 {
    let g = &disc.grid;
    let x = g.nodes();
    let dt = disc.dt();
    let mut terms = Vec::new();
    for n in levels {
        let b = disc.coefficients(n).b;
        let row = u.row(n);
        for j in 1..x.len() - 1 {
            let c = dt * g.mass()[j] * b * b * row[j] * row[j];
            if c > 0.0 {
                terms.push(w.ln_carleman(x[j], n, 2.0) + ln(c));
            }
        }
        for j in 0..x.len() - 1 {
            let d = row[j + 1] - row[j];
            let xf = g.face(j);
            let c = dt * b * b * disc.deg.a(xf) * d * d / g.spacing(j);
            if c > 0.0 {
                terms.push(w.ln_carleman(xf, n, 1.0) + ln(c));
            }
        }
    }
    log_sum_exp(terms.iter().copied())
}

fn ln_source(
    disc: &Discretization,
    w: &CarlemanWeights,
    f: &Field,
    levels: core::ops::Range<usize>,
) -> f64 {
    let g = &disc.grid;
    let x = g.nodes();
    let dt = disc.dt();
    let mut terms = Vec::new();
    for n in levels {
        let row = f.row(n);
        for j in 1..x.len() - 1 {
            let c = dt * g.mass()[j] * row[j] * row[j];
            if c > 0.0 {
                terms.push(w.ln_carleman(x[j], n, 4.0) + ln(c));
            }
        }
    }
    log_sum_exp(terms.iter().copied())
}

/// Observability ratios for a sweep of fixed `s` values at fixed `λ`.
pub fn observability_s_sweep(
    disc: &Discretization,
    sys: &LinearizedSystem,
    omega: &[f64],
    base: &CarlemanParams,
    lambda: f64,
    s_values: &[f64],
    terminals: &[Vec<f64>],
    opts: PicardOptions,
) -> Result<Vec<(f64, f64)>> {
    let times = disc.mesh.times();
    let mut out = vec![];
    for &s in s_values {
        let p = CarlemanParams {
            s: SChoice::Fixed(s),
            lambda: Some(lambda),
            ..*base
        };
        let w = CarlemanWeights::build(&p, &disc.deg, &times)?;
        let r = empirical_observability(disc, sys, omega, &w, terminals, opts)?;
        out.push((s, r.max_ratio));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psi_closed_form_and_bridge() {
        let deg = Degeneracy::new(0.5).unwrap();
        let psi = Psi::new(&deg, 0.45, 0.55).unwrap();
        assert!((psi.eval(0.04) - 0.0053333333333333).abs() < 1e-12);
        assert_eq!(psi.eval(0.0), 0.0);
        for x in [0.45, 0.55] {
            let e = 1e-7;
            assert!((psi.eval(x - e) - psi.eval(x + e)).abs() < 1e-6);
            assert!((psi.derivative(x - e) - psi.derivative(x + e)).abs() < 1e-5);
            let e2 = 1e-11;
            assert!((psi.second_derivative(x - e2) - psi.second_derivative(x + e2)).abs() < 1e-5);
        }
        assert!(psi.derivative(0.8) < 0.0);
    }

    #[test]
    fn time_weight_examples() {
        let tw = TimeWeights::new(1.0, None).unwrap();
        assert_eq!(tw.theta(0.5), 256.0);
        assert!(tw.theta(0.0).is_infinite());
        assert_eq!(tw.m(0.0), tw.m_floor);
        assert_eq!(tw.m(0.75), 0.75f64.powi(4) * 0.25f64.powi(4));
        assert!(tw.tau(1.0).is_infinite());
    }
}
