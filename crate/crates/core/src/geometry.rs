//! Degeneracy, gradient weight, moving interval and control windows.

use alloc::vec::Vec;

use crate::math::{abs, cos, exp, powf, sin, sqrt};
use crate::{Error, Result};

/// Power-law diffusion `a(x) = x^α` with `0 < α < 1`.
///
/// The same power law is used beyond `x = 1`, which is needed for `a(ℓ(t))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Degeneracy {
    alpha: f64,
}

impl Degeneracy {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidParameter {
                name: "alpha",
                reason: "the degeneracy exponent must lie in (0, 1)",
            });
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Structural constant `K` in `x a'(x) ≤ K a(x)`.
    pub fn k_constant(&self) -> f64 {
        self.alpha
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(Error::Domain { x });
        }
        Ok(self.a(x))
    }

    /// `a(x)` without the sign check.
    #[inline]
    pub fn a(&self, x: f64) -> f64 {
        if x == 0.0 {
            0.0
        } else {
            powf(x, self.alpha)
        }
    }

    /// `a'(x)` for `x > 0`.
    pub fn derivative(&self, x: f64) -> Result<f64> {
        if !(x > 0.0) {
            return Err(Error::Domain { x });
        }
        Ok(self.alpha * powf(x, self.alpha - 1.0))
    }
}

/// Gradient weight `β` entering the nonlinearity through `F(y, C β y_x)`.
///
/// With clipping, `β(x) = min(x^b, c √a(x))` where `c ∈ (0, 1]` is the largest
/// constant keeping `(β²)' ≤ 2a'`; without clipping, `β = x^b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientWeight {
    b_exp: f64,
    clip: Option<f64>,
    alpha: f64,
    slope_bound: f64,
}

/// Nodewise check of the three structural conditions on `β`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaReport {
    pub square_below_a: bool,
    pub square_slope_below: bool,
    pub slope_bounded: bool,
    /// Largest `(β²)' − 2a'` over the nodes for the raw `x^b`, before clipping.
    pub raw_violation: f64,
    /// The computed bound `M` on `β'`.
    pub slope_bound: f64,
    pub clip_factor: Option<f64>,
}

impl BetaReport {
    pub fn all_hold(&self) -> bool {
        self.square_below_a && self.square_slope_below && self.slope_bounded
    }
}

impl GradientWeight {
    pub fn new(b_exp: f64, deg: &Degeneracy, clip_enabled: bool) -> Result<Self> {
        if !(b_exp > 1.0) || !b_exp.is_finite() {
            return Err(Error::InvalidParameter {
                name: "b_exp",
                reason: "the gradient-weight exponent must exceed 1",
            });
        }
        let alpha = deg.alpha();
        let clip = if clip_enabled {
            // On the x^b branch, (x^{2b})' ≤ 2a' reads b x^{2b−α} ≤ α.
            let xc = powf(alpha / b_exp, 1.0 / (2.0 * b_exp - alpha));
            let c = if xc >= 1.0 {
                1.0
            } else {
                powf(xc, b_exp - 0.5 * alpha) * (1.0 - 1e-12)
            };
            Some(c)
        } else {
            None
        };
        let mut gw = Self {
            b_exp,
            clip,
            alpha,
            slope_bound: 0.0,
        };
        // β' is increasing on the power branch and decreasing on the clipped
        // one, so the supremum sits at the switch point (or at x = 1).
        let x_switch = gw.switch_point().min(1.0);
        gw.slope_bound = b_exp * powf(x_switch, b_exp - 1.0);
        Ok(gw)
    }

    pub fn b_exp(&self) -> f64 {
        self.b_exp
    }

    pub fn clip_factor(&self) -> Option<f64> {
        self.clip
    }

    /// Bound `M` on `β'` over `[0, 1]`.
    pub fn slope_bound(&self) -> f64 {
        self.slope_bound
    }

    fn switch_point(&self) -> f64 {
        match self.clip {
            Some(c) => powf(c, 1.0 / (self.b_exp - 0.5 * self.alpha)),
            None => f64::INFINITY,
        }
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(Error::Domain { x });
        }
        Ok(self.beta(x))
    }

    #[inline]
    pub fn beta(&self, x: f64) -> f64 {
        if x == 0.0 {
            return 0.0;
        }
        let raw = powf(x, self.b_exp);
        match self.clip {
            Some(c) => raw.min(c * powf(x, 0.5 * self.alpha)),
            None => raw,
        }
    }

    /// `β'(x)` for `x > 0` (one-sided at the switch point).
    pub fn derivative(&self, x: f64) -> f64 {
        if x < self.switch_point() {
            self.b_exp * powf(x, self.b_exp - 1.0)
        } else {
            let c = self.clip.unwrap_or(1.0);
            c * 0.5 * self.alpha * powf(x, 0.5 * self.alpha - 1.0)
        }
    }

    /// Checks the structural conditions on `nodes` uniform points of `(0, 1]`.
    pub fn validate(&self, deg: &Degeneracy, nodes: usize) -> BetaReport {
        let nodes = nodes.max(2);
        let mut report = BetaReport {
            square_below_a: true,
            square_slope_below: true,
            slope_bounded: true,
            raw_violation: f64::NEG_INFINITY,
            slope_bound: self.slope_bound,
            clip_factor: self.clip,
        };
        let tol = 1e-12;
        for j in 1..=nodes {
            let x = j as f64 / nodes as f64;
            let a = deg.a(x);
            let da = self.alpha * powf(x, self.alpha - 1.0);
            let b = self.beta(x);
            let db = self.derivative(x);
            if b * b > a * (1.0 + tol) {
                report.square_below_a = false;
            }
            if 2.0 * b * db > 2.0 * da * (1.0 + tol) {
                report.square_slope_below = false;
            }
            if db > self.slope_bound * (1.0 + tol) {
                report.slope_bounded = false;
            }
            let raw = 2.0 * self.b_exp * powf(x, 2.0 * self.b_exp - 1.0) - 2.0 * da;
            report.raw_violation = report.raw_violation.max(raw);
        }
        report
    }
}

/// Closed set of length laws `t ↦ ℓ(t)`, each with its exact derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LengthLaw {
    Constant {
        l0: f64,
    },
    /// `l0 (1 + k t)`.
    Affine {
        l0: f64,
        k: f64,
    },
    /// `l0 e^{k t}`.
    Exponential {
        l0: f64,
        k: f64,
    },
    /// `l0 (1 + amp sin(2π freq t))` with `|amp| < 1`.
    Sinusoidal {
        l0: f64,
        amp: f64,
        freq: f64,
    },
}

impl LengthLaw {
    pub fn ell(&self, t: f64) -> f64 {
        match *self {
            LengthLaw::Constant { l0 } => l0,
            LengthLaw::Affine { l0, k } => l0 * (1.0 + k * t),
            LengthLaw::Exponential { l0, k } => l0 * exp(k * t),
            LengthLaw::Sinusoidal { l0, amp, freq } => {
                l0 * (1.0 + amp * sin(2.0 * core::f64::consts::PI * freq * t))
            }
        }
    }

    pub fn ell_prime(&self, t: f64) -> f64 {
        match *self {
            LengthLaw::Constant { .. } => 0.0,
            LengthLaw::Affine { l0, k } => l0 * k,
            LengthLaw::Exponential { l0, k } => l0 * k * exp(k * t),
            LengthLaw::Sinusoidal { l0, amp, freq } => {
                let w = 2.0 * core::f64::consts::PI * freq;
                l0 * amp * w * cos(w * t)
            }
        }
    }
}

/// The moving interval `(0, ℓ(t))` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MovingDomain {
    law: LengthLaw,
    horizon: f64,
}

/// Coefficients of the cylinder equation at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    /// `a(ℓ)/ℓ²`.
    pub b: f64,
    /// `ℓ'/ℓ`.
    pub big_b: f64,
    /// `β(ℓ)/ℓ`.
    pub c: f64,
}

impl MovingDomain {
    /// Validates positivity of `ℓ` on 1025 samples of `[0, T]`.
    pub fn new(law: LengthLaw, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidParameter {
                name: "horizon",
                reason: "T must be positive and finite",
            });
        }
        if let LengthLaw::Sinusoidal { amp, .. } = law {
            if !(abs(amp) < 1.0) {
                return Err(Error::InvalidParameter {
                    name: "amp",
                    reason: "sinusoidal amplitude must satisfy |amp| < 1",
                });
            }
        }
        let samples = 1024;
        for i in 0..=samples {
            let t = horizon * i as f64 / samples as f64;
            let ell = law.ell(t);
            if !(ell > 0.0) || !ell.is_finite() || !law.ell_prime(t).is_finite() {
                return Err(Error::InvalidDomain { t, ell });
            }
        }
        Ok(Self { law, horizon })
    }

    pub fn law(&self) -> LengthLaw {
        self.law
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn ell(&self, t: f64) -> f64 {
        self.law.ell(t)
    }

    pub fn ell_prime(&self, t: f64) -> f64 {
        self.law.ell_prime(t)
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= 0.0 && t <= self.horizon * (1.0 + 1e-12)) {
            return Err(Error::Domain { x: t });
        }
        Ok(())
    }

    /// `sup |ℓ'/ℓ|` over the given times.
    pub fn max_log_rate(&self, times: &[f64]) -> f64 {
        times
            .iter()
            .map(|&t| abs(self.ell_prime(t) / self.ell(t)))
            .fold(0.0, f64::max)
    }

    /// `|Jac τ_t| = ℓ(t)` for the rescaling `x' = ℓ(t) x`.
    pub fn jacobian_weight(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(self.ell(t))
    }

    /// Maps points of `[0, ℓ(t)]` to the reference interval.
    pub fn pullback_points(&self, t: f64, x_prime: &[f64]) -> Result<Vec<f64>> {
        self.check_time(t)?;
        let ell = self.ell(t);
        x_prime
            .iter()
            .map(|&xp| {
                if !(xp >= 0.0 && xp <= ell) {
                    Err(Error::OutOfRange { x: xp, ell })
                } else {
                    Ok(xp / ell)
                }
            })
            .collect()
    }

    /// Maps points of `[0, 1]` to the physical interval at time `t`.
    pub fn pushforward_points(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.check_time(t)?;
        let ell = self.ell(t);
        x.iter()
            .map(|&xr| {
                if !(0.0..=1.0).contains(&xr) {
                    Err(Error::OutOfRange { x: xr, ell: 1.0 })
                } else {
                    Ok(xr * ell)
                }
            })
            .collect()
    }

    /// Pulls a sampled field `u(x', t)` back to `y(x, t) = u(ℓ x, t)`:
    /// nodal values are kept, coordinates are rescaled.
    pub fn pullback_field(&self, t: f64, field: &SampledField) -> Result<SampledField> {
        Ok(SampledField {
            coords: self.pullback_points(t, &field.coords)?,
            values: field.values.clone(),
        })
    }

    pub fn pushforward_field(&self, t: f64, field: &SampledField) -> Result<SampledField> {
        Ok(SampledField {
            coords: self.pushforward_points(t, &field.coords)?,
            values: field.values.clone(),
        })
    }
}

/// Nodal samples of a function of one space variable.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledField {
    pub coords: Vec<f64>,
    pub values: Vec<f64>,
}

impl SampledField {
    /// Piecewise-linear interpolation at `x`; coordinates must be increasing.
    pub fn interpolate(&self, x: f64) -> f64 {
        let c = &self.coords;
        let n = c.len();
        if n == 0 {
            return 0.0;
        }
        if x <= c[0] {
            return self.values[0];
        }
        if x >= c[n - 1] {
            return self.values[n - 1];
        }
        let j = c.partition_point(|&ci| ci <= x).max(1);
        let (x0, x1) = (c[j - 1], c[j]);
        let s = (x - x0) / (x1 - x0);
        self.values[j - 1] * (1.0 - s) + self.values[j] * s
    }
}

/// Cylinder coefficients `(b, B, C)` at time `t`.
pub fn transform_coefficients(
    dom: &MovingDomain,
    deg: &Degeneracy,
    gw: &GradientWeight,
    t: f64,
) -> Result<Coefficients> {
    dom.check_time(t)?;
    let ell = dom.ell(t);
    if !(ell > 0.0) {
        return Err(Error::InvalidDomain { t, ell });
    }
    Ok(Coefficients {
        b: deg.a(ell) / (ell * ell),
        big_b: dom.ell_prime(t) / ell,
        c: gw.beta(ell) / ell,
    })
}

/// An open subinterval `(lo, hi)` of `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub lo: f64,
    pub hi: f64,
}

impl Window {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(Error::Geometry("each window must satisfy 0 ≤ lo < hi ≤ 1"));
        }
        Ok(Self { lo, hi })
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.hi <= self.lo
    }

    pub fn overlap(&self, other: &Window) -> f64 {
        (self.hi.min(other.hi) - self.lo.max(other.lo)).max(0.0)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo < x && x < self.hi
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Leader window `O`, follower windows `O₁`, `O₂` and the shared observation
/// window `O_d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlGeometry {
    pub leader: Window,
    pub followers: [Window; 2],
    pub observation: Window,
}

impl ControlGeometry {
    pub fn new(leader: Window, followers: [Window; 2], observation: Window) -> Result<Self> {
        for w in followers {
            if w.overlap(&leader) > 0.0 {
                return Err(Error::Geometry(
                    "follower windows must be disjoint from the leader window (O_i ∩ O = ∅)",
                ));
            }
        }
        if observation.overlap(&leader) <= 0.0 {
            return Err(Error::Geometry(
                "the observation window must meet the leader window (O_d ∩ O ≠ ∅)",
            ));
        }
        Ok(Self {
            leader,
            followers,
            observation,
        })
    }
}

/// `sup_x x/√a(x)` over `(0, 1]`, i.e. `1/√a(1)` for a power law.
pub fn ratio_bound(deg: &Degeneracy) -> f64 {
    1.0 / sqrt(deg.a(1.0))
}
