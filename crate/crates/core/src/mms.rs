//! Manufactured solutions `y = π(t) x^{2−α}(1−x)` for convergence studies.

use alloc::vec::Vec;

use crate::discretization::Discretization;
use crate::field::Field;
use crate::math::{exp, ln, powf, sqrt};
use crate::nonlinearity::SemilinearF;
use crate::solvers::{solve_forward_semilinear, StepOptions};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeProfile {
    /// `π(t) = e^t`.
    Exponential,
    /// `π(t) = 1 + t`; backward Euler has no time truncation error.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Manufactured {
    pub alpha: f64,
    pub profile: TimeProfile,
}

impl Manufactured {
    fn pi(&self, t: f64) -> (f64, f64) {
        match self.profile {
            TimeProfile::Exponential => (exp(t), exp(t)),
            TimeProfile::Linear => (1.0 + t, 1.0),
        }
    }

    pub fn value(&self, x: f64, t: f64) -> f64 {
        self.pi(t).0 * powf(x, 2.0 - self.alpha) * (1.0 - x)
    }

    pub fn dx(&self, x: f64, t: f64) -> f64 {
        let a = self.alpha;
        self.pi(t).0 * ((2.0 - a) * powf(x, 1.0 - a) - (3.0 - a) * powf(x, 2.0 - a))
    }

    /// `(x^α y_x)_x`.
    pub fn flux_divergence(&self, x: f64, t: f64) -> f64 {
        let a = self.alpha;
        self.pi(t).0 * ((2.0 - a) - 2.0 * (3.0 - a) * x)
    }

    pub fn dt(&self, x: f64, t: f64) -> f64 {
        self.pi(t).1 * powf(x, 2.0 - self.alpha) * (1.0 - x)
    }

    /// `y_t − b(a y_x)_x − B x y_x + F(y, Cβ y_x)` on left rows, evaluated at
    /// the new time level of each step.
    pub fn source(&self, disc: &Discretization, f: &SemilinearF) -> Field {
        let mut g = disc.zeros();
        let x = disc.grid.nodes();
        for k in 0..disc.levels() - 1 {
            let t = disc.mesh.time(k + 1);
            let c = disc.coefficients(k + 1);
            let row = g.row_mut(k);
            for j in 1..x.len() - 1 {
                let xj = x[j];
                let w = c.c * disc.gw.beta(xj) * self.dx(xj, t);
                row[j] = self.dt(xj, t)
                    - c.b * self.flux_divergence(xj, t)
                    - c.big_b * xj * self.dx(xj, t)
                    + f.value(self.value(xj, t), w);
            }
        }
        g
    }

    pub fn exact(&self, disc: &Discretization) -> Field {
        let mut e = Field::from_fn(&disc.grid, &disc.mesh, |x, t| self.value(x, t));
        let last = e.cols() - 1;
        for k in 0..e.rows() {
            e.row_mut(k)[0] = 0.0;
            e.row_mut(k)[last] = 0.0;
        }
        e
    }
}

/// Errors of one manufactured-solution run, maximized over time levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmsError {
    /// Discrete L²(0,1).
    pub l2: f64,
    /// Discrete L² over nodes inside `interior`.
    pub interior_l2: f64,
    pub max: f64,
}

pub fn mms_error(
    disc: &Discretization,
    f: &SemilinearF,
    sol: &Manufactured,
    interior: (f64, f64),
    opts: StepOptions,
) -> Result<MmsError> {
    let exact = sol.exact(disc);
    let y = solve_forward_semilinear(disc, f, exact.row(0), &sol.source(disc, f), opts)?;
    let x = disc.grid.nodes();
    let w = disc.grid.mass();
    let mut out = MmsError {
        l2: 0.0,
        interior_l2: 0.0,
        max: 0.0,
    };
    for n in 1..disc.levels() {
        let (mut full, mut inner) = (0.0, 0.0);
        for j in 0..x.len() {
            let e = y.row(n)[j] - exact.row(n)[j];
            full += w[j] * e * e;
            if interior.0 <= x[j] && x[j] <= interior.1 {
                inner += w[j] * e * e;
            }
            out.max = out.max.max(e.abs());
        }
        out.l2 = out.l2.max(sqrt(full));
        out.interior_l2 = out.interior_l2.max(sqrt(inner));
    }
    Ok(out)
}

/// Least-squares slope of `ln e` against `ln h`.
pub fn observed_order(h: &[f64], e: &[f64]) -> f64 {
    let lx: Vec<f64> = h.iter().map(|v| ln(*v)).collect();
    let ly: Vec<f64> = e.iter().map(|v| ln(*v)).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
