//! Problem description independent of any file format, with the desk-scale
//! defaults.

use crate::discretization::{Discretization, DriftRule};
use crate::field::{SpatialGrid, TimeMesh};
use crate::geometry::{
    ControlGeometry, Degeneracy, GradientWeight, LengthLaw, MovingDomain, Window,
};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSpec {
    pub leader: (f64, f64),
    pub followers: [(f64, f64); 2],
    pub observation: (f64, f64),
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            leader: (0.4, 0.6),
            followers: [(0.1, 0.3), (0.7, 0.9)],
            observation: (0.3, 0.7),
        }
    }
}

impl WindowSpec {
    pub fn build(&self) -> Result<ControlGeometry> {
        let w = |p: (f64, f64)| Window::new(p.0, p.1);
        ControlGeometry::new(
            w(self.leader)?,
            [w(self.followers[0])?, w(self.followers[1])?],
            w(self.observation)?,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemSetup {
    pub intervals: usize,
    pub steps: usize,
    pub horizon: f64,
    pub alpha: f64,
    pub law: LengthLaw,
    pub b_exp: f64,
    pub clip: bool,
    pub grading: f64,
    pub drift: DriftRule,
    pub windows: WindowSpec,
}

impl Default for ProblemSetup {
    /// `N = 64`, `M = 128`, `T = 1`, `α = 0.5`, `ℓ(t) = 1 + t/4`.
    fn default() -> Self {
        Self {
            intervals: 64,
            steps: 128,
            horizon: 1.0,
            alpha: 0.5,
            law: LengthLaw::Affine { l0: 1.0, k: 0.25 },
            b_exp: 2.0,
            clip: true,
            grading: 2.0,
            drift: DriftRule::Upwind,
            windows: WindowSpec::default(),
        }
    }
}

impl ProblemSetup {
    /// Same problem with space and time resolution multiplied by `factor`.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            intervals: self.intervals * factor,
            steps: self.steps * factor,
            ..*self
        }
    }

    pub fn build(&self) -> Result<Discretization> {
        let deg = Degeneracy::new(self.alpha)?;
        let gw = GradientWeight::new(self.b_exp, &deg, self.clip)?;
        let domain = MovingDomain::new(self.law, self.horizon)?;
        Discretization::new(
            SpatialGrid::graded(self.intervals, self.grading)?,
            TimeMesh::new(self.steps, self.horizon)?,
            deg,
            gw,
            domain,
            self.windows.build()?,
            self.drift,
        )
    }
}
