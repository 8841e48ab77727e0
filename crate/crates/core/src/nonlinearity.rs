//! The semilinear term `F(u, w)` with its first and second derivatives.

use crate::math::{abs, cos, sin};

/// A `C²` function with bounded derivatives and `F(0, 0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SemilinearF {
    Zero,
    /// `c1 u + c2 w`.
    Linear {
        c1: f64,
        c2: f64,
    },
    /// `k1 sin u + k2 sin w`.
    Sine {
        k1: f64,
        k2: f64,
    },
}

impl Default for SemilinearF {
    fn default() -> Self {
        SemilinearF::Sine { k1: 1.0, k2: 1.0 }
    }
}

/// Derivatives of `F` at one point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet {
    pub f: f64,
    pub d1: f64,
    pub d2: f64,
    pub d11: f64,
    pub d12: f64,
    pub d22: f64,
}

impl SemilinearF {
    /// True when `F` is affine, so the implicit step is a single linear solve.
    pub fn is_affine(&self) -> bool {
        !matches!(self, SemilinearF::Sine { .. })
    }

    #[inline]
    pub fn value(&self, u: f64, w: f64) -> f64 {
        match *self {
            SemilinearF::Zero => 0.0,
            SemilinearF::Linear { c1, c2 } => c1 * u + c2 * w,
            SemilinearF::Sine { k1, k2 } => k1 * sin(u) + k2 * sin(w),
        }
    }

    #[inline]
    pub fn jet(&self, u: f64, w: f64) -> Jet {
        match *self {
            SemilinearF::Zero => Jet::default(),
            SemilinearF::Linear { c1, c2 } => Jet {
                f: c1 * u + c2 * w,
                d1: c1,
                d2: c2,
                ..Jet::default()
            },
            SemilinearF::Sine { k1, k2 } => {
                let (su, cu, sw, cw) = (sin(u), cos(u), sin(w), cos(w));
                Jet {
                    f: k1 * su + k2 * sw,
                    d1: k1 * cu,
                    d2: k2 * cw,
                    d11: -k1 * su,
                    d12: 0.0,
                    d22: -k2 * sw,
                }
            }
        }
    }

    /// Uniform bound on `|F|`-derivatives up to order 2 (over all of ℝ²).
    pub fn derivative_bound(&self) -> f64 {
        match *self {
            SemilinearF::Zero => 0.0,
            SemilinearF::Linear { c1, c2 } => abs(c1).max(abs(c2)),
            SemilinearF::Sine { k1, k2 } => abs(k1).max(abs(k2)),
        }
    }

    /// Largest relative mismatch between the analytic derivatives and central
    /// differences of the lower-order ones over the given sample points.
    pub fn fd_consistency(&self, points: &[(f64, f64)]) -> f64 {
        let e = 1e-5;
        let mut worst: f64 = 0.0;
        let rel = |a: f64, b: f64| abs(a - b) / (1.0 + abs(a));
        for &(u, w) in points {
            let j = self.jet(u, w);
            let d1 = (self.value(u + e, w) - self.value(u - e, w)) / (2.0 * e);
            let d2 = (self.value(u, w + e) - self.value(u, w - e)) / (2.0 * e);
            let d11 = (self.jet(u + e, w).d1 - self.jet(u - e, w).d1) / (2.0 * e);
            let d12 = (self.jet(u, w + e).d1 - self.jet(u, w - e).d1) / (2.0 * e);
            let d21 = (self.jet(u + e, w).d2 - self.jet(u - e, w).d2) / (2.0 * e);
            let d22 = (self.jet(u, w + e).d2 - self.jet(u, w - e).d2) / (2.0 * e);
            for (a, b) in [
                (j.d1, d1),
                (j.d2, d2),
                (j.d11, d11),
                (j.d12, d12),
                (j.d12, d21),
                (j.d22, d22),
            ] {
                worst = worst.max(rel(a, b));
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_at_origin() {
        let f = SemilinearF::default();
        let j = f.jet(0.0, 0.0);
        assert_eq!((j.f, j.d1, j.d2), (0.0, 1.0, 1.0));
        assert!(!f.is_affine());
        assert!(SemilinearF::Zero.is_affine());
    }

    #[test]
    fn derivatives_consistent() {
        let pts: std::vec::Vec<(f64, f64)> = (0..50)
            .map(|i| ((i as f64 * 0.37).sin() * 3.0, (i as f64 * 0.91).cos() * 2.0))
            .collect();
        assert!(SemilinearF::default().fd_consistency(&pts) < 1e-6);
        assert!(SemilinearF::Sine { k1: 1.0, k2: 0.5 }.fd_consistency(&pts) < 1e-6);
    }
}
