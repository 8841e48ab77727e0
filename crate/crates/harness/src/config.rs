//! Scenario configuration: one TOML file fully determines a run.

use serde::{Deserialize, Serialize};

use hierctl_core::carleman::{CarlemanParams, SChoice};
use hierctl_core::control::{LaxMilgramMethod, LaxMilgramOptions, NewtonMode, NewtonOptions};
use hierctl_core::discretization::DriftRule;
use hierctl_core::geometry::LengthLaw;
use hierctl_core::nash::NashOptions;
use hierctl_core::nonlinearity::SemilinearF;
use hierctl_core::setup::{ProblemSetup, WindowSpec};
use hierctl_core::solvers::{PicardOptions, StepOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    #[default]
    Forward,
    Nash,
    Convexity,
    Observability,
    LinearControl,
    NonlinearControl,
    Diagnostics,
    Mms,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Forward => "forward",
            ExperimentKind::Nash => "nash",
            ExperimentKind::Convexity => "convexity",
            ExperimentKind::Observability => "observability",
            ExperimentKind::LinearControl => "linear-control",
            ExperimentKind::NonlinearControl => "nonlinear-control",
            ExperimentKind::Diagnostics => "diagnostics",
            ExperimentKind::Mms => "mms",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LengthSpec {
    Constant { l0: f64 },
    Affine { l0: f64, k: f64 },
    Exponential { l0: f64, k: f64 },
    Sinusoidal { l0: f64, amp: f64, freq: f64 },
}

impl Default for LengthSpec {
    fn default() -> Self {
        LengthSpec::Affine { l0: 1.0, k: 0.25 }
    }
}

impl From<LengthSpec> for LengthLaw {
    fn from(s: LengthSpec) -> Self {
        match s {
            LengthSpec::Constant { l0 } => LengthLaw::Constant { l0 },
            LengthSpec::Affine { l0, k } => LengthLaw::Affine { l0, k },
            LengthSpec::Exponential { l0, k } => LengthLaw::Exponential { l0, k },
            LengthSpec::Sinusoidal { l0, amp, freq } => LengthLaw::Sinusoidal { l0, amp, freq },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryBlock {
    pub alpha: f64,
    pub b_exp: f64,
    pub clip: bool,
    pub horizon: f64,
    pub length: LengthSpec,
}

impl Default for GeometryBlock {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            b_exp: 2.0,
            clip: true,
            horizon: 1.0,
            length: LengthSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DriftSpec {
    #[default]
    Upwind,
    Central,
}

impl From<DriftSpec> for DriftRule {
    fn from(d: DriftSpec) -> Self {
        match d {
            DriftSpec::Upwind => DriftRule::Upwind,
            DriftSpec::Central => DriftRule::Central,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridBlock {
    /// Spatial intervals `N`.
    pub intervals: usize,
    /// Grading exponent `γ` of `x_j = (j/N)^γ`.
    pub grading: f64,
    /// Time steps `M`.
    pub steps: usize,
    pub drift: DriftSpec,
}

impl Default for GridBlock {
    fn default() -> Self {
        Self {
            intervals: 64,
            grading: 2.0,
            steps: 128,
            drift: DriftSpec::Upwind,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TargetProfile {
    /// Fades out before the Carleman weights saturate.
    #[default]
    Weighted,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GameBlock {
    pub leader: [f64; 2],
    pub followers: [[f64; 2]; 2],
    pub observation: [f64; 2],
    pub alpha: [f64; 2],
    pub mu: [f64; 2],
    pub target_amplitude: f64,
    pub target_profile: TargetProfile,
    pub jacobian_weighting: bool,
    /// Amplitude of the fixed leader control used by nash and convexity runs.
    pub leader_amplitude: f64,
}

impl Default for GameBlock {
    fn default() -> Self {
        Self {
            leader: [0.4, 0.6],
            followers: [[0.1, 0.3], [0.7, 0.9]],
            observation: [0.3, 0.7],
            alpha: [1.0, 1.0],
            mu: [1.0, 1.0],
            target_amplitude: 1e-3,
            target_profile: TargetProfile::Weighted,
            jacobian_weighting: true,
            leader_amplitude: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CarlemanBlock {
    /// Fixed `s`; `None` selects it automatically from `kappa`.
    pub s: Option<f64>,
    pub kappa: f64,
    /// Fixed `λ`; `None` uses `(1 + lambda_margin)·λ_min`.
    pub lambda: Option<f64>,
    pub lambda_margin: f64,
    pub alpha_p: f64,
    pub beta_p: f64,
    pub m_floor: Option<f64>,
    pub saturation: f64,
}

impl Default for CarlemanBlock {
    fn default() -> Self {
        let p = CarlemanParams::default();
        Self {
            s: None,
            kappa: 2.0,
            lambda: p.lambda,
            lambda_margin: p.lambda_margin,
            alpha_p: p.alpha_p,
            beta_p: p.beta_p,
            m_floor: p.m_floor,
            saturation: p.saturation,
        }
    }
}

impl CarlemanBlock {
    pub fn params(&self) -> CarlemanParams {
        CarlemanParams {
            s: match self.s {
                Some(s) => SChoice::Fixed(s),
                None => SChoice::Auto { kappa: self.kappa },
            },
            lambda: self.lambda,
            lambda_margin: self.lambda_margin,
            alpha_p: self.alpha_p,
            beta_p: self.beta_p,
            m_floor: self.m_floor,
            saturation: self.saturation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NewtonModeSpec {
    #[default]
    Frozen,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverBlock {
    pub step_tol: f64,
    pub step_max_iter: usize,
    pub picard_tol: f64,
    pub picard_max_sweeps: usize,
    pub nash_tol: f64,
    pub nash_max_sweeps: usize,
    pub newton_mode: NewtonModeSpec,
    pub newton_max_iter: usize,
    pub terminal_tol: f64,
    pub equilibrium_tol: f64,
    pub newton_picard_tol: f64,
    pub newton_picard_max_sweeps: usize,
    pub lm_tol: f64,
    /// `0` selects the banded direct solver, otherwise CG with this cap.
    pub lm_cg_max_iter: usize,
}

impl Default for SolverBlock {
    fn default() -> Self {
        let n = NewtonOptions::default();
        let p = PicardOptions::default();
        let s = StepOptions::default();
        let q = NashOptions::default();
        Self {
            step_tol: s.tol,
            step_max_iter: s.max_iter,
            picard_tol: p.tol,
            picard_max_sweeps: p.max_sweeps,
            nash_tol: q.tol,
            nash_max_sweeps: q.max_sweeps,
            newton_mode: NewtonModeSpec::Frozen,
            newton_max_iter: n.max_iter,
            terminal_tol: n.terminal_tol,
            equilibrium_tol: n.equilibrium_tol,
            newton_picard_tol: n.picard.tol,
            newton_picard_max_sweeps: n.picard.max_sweeps,
            lm_tol: n.solver.tol,
            lm_cg_max_iter: 0,
        }
    }
}

impl SolverBlock {
    pub fn step(&self) -> StepOptions {
        StepOptions {
            tol: self.step_tol,
            max_iter: self.step_max_iter,
        }
    }

    pub fn picard(&self) -> PicardOptions {
        PicardOptions {
            tol: self.picard_tol,
            max_sweeps: self.picard_max_sweeps,
        }
    }

    pub fn nash(&self) -> NashOptions {
        NashOptions {
            tol: self.nash_tol,
            max_sweeps: self.nash_max_sweeps,
            step: self.step(),
        }
    }

    pub fn lax_milgram(&self) -> LaxMilgramOptions {
        LaxMilgramOptions {
            method: if self.lm_cg_max_iter == 0 {
                LaxMilgramMethod::Direct
            } else {
                LaxMilgramMethod::Cg {
                    max_iter: self.lm_cg_max_iter,
                }
            },
            tol: self.lm_tol,
            ..LaxMilgramOptions::default()
        }
    }

    pub fn newton(&self) -> NewtonOptions {
        NewtonOptions {
            mode: match self.newton_mode {
                NewtonModeSpec::Frozen => NewtonMode::Frozen,
                NewtonModeSpec::Full => NewtonMode::Full,
            },
            terminal_tol: self.terminal_tol,
            equilibrium_tol: self.equilibrium_tol,
            max_iter: self.newton_max_iter,
            solver: self.lax_milgram(),
            picard: PicardOptions {
                tol: self.newton_picard_tol,
                max_sweeps: self.newton_picard_max_sweeps,
            },
            step: self.step(),
            ..NewtonOptions::default()
        }
    }
}

/// `y0 = amplitude·sin(mode·πx)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialBlock {
    pub amplitude: f64,
    pub mode: u32,
}

impl Default for InitialBlock {
    fn default() -> Self {
        Self {
            amplitude: 0.1,
            mode: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NonlinearitySpec {
    Zero,
    Linear { c1: f64, c2: f64 },
    Sine { k1: f64, k2: f64 },
}

impl Default for NonlinearitySpec {
    fn default() -> Self {
        NonlinearitySpec::Sine { k1: 1.0, k2: 1.0 }
    }
}

impl From<NonlinearitySpec> for SemilinearF {
    fn from(n: NonlinearitySpec) -> Self {
        match n {
            NonlinearitySpec::Zero => SemilinearF::Zero,
            NonlinearitySpec::Linear { c1, c2 } => SemilinearF::Linear { c1, c2 },
            NonlinearitySpec::Sine { k1, k2 } => SemilinearF::Sine { k1, k2 },
        }
    }
}

/// Knobs of the individual experiment kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyBlock {
    /// Random probe directions for gradient and convexity checks.
    pub probes: usize,
    pub mu_bracket: [f64; 2],
    pub mu_iterations: usize,
    /// Multiples of `y0` tried by nonlinear-control runs; the first is the
    /// primary run.
    pub amplitude_scales: Vec<f64>,
    /// Random terminal data for observability runs.
    pub samples: usize,
    pub modes: usize,
    /// Repeat on a grid refined by `refine_factor` and report the drift of
    /// fitted constants.
    pub refine: bool,
    pub refine_factor: usize,
    pub landscape_points: usize,
    pub landscape_span: f64,
    pub mms_intervals: Vec<usize>,
    pub mms_space_steps: usize,
    pub mms_steps: Vec<usize>,
    pub mms_time_intervals: usize,
    pub mms_interior: [f64; 2],
    /// Source `H` of the linear control problem on the leader window; zero
    /// gives the homogeneous problem.
    pub source_amplitude: f64,
    /// Constant reaches saturated levels, where the weighted budget is infinite.
    pub source_profile: TargetProfile,
    /// Write per-node field CSVs.
    pub write_fields: bool,
}

impl Default for StudyBlock {
    fn default() -> Self {
        Self {
            probes: 4,
            mu_bracket: [1e-4, 1e2],
            mu_iterations: 12,
            amplitude_scales: vec![1.0],
            samples: 20,
            modes: 6,
            refine: false,
            refine_factor: 2,
            landscape_points: 21,
            landscape_span: 1.0,
            mms_intervals: vec![16, 32, 64],
            mms_space_steps: 16,
            mms_steps: vec![16, 32, 64],
            mms_time_intervals: 512,
            mms_interior: [0.1, 0.9],
            source_amplitude: 0.0,
            source_profile: TargetProfile::Weighted,
            write_fields: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub kind: ExperimentKind,
    pub geometry: GeometryBlock,
    pub grid: GridBlock,
    pub game: GameBlock,
    pub carleman: CarlemanBlock,
    pub solver: SolverBlock,
    pub initial: InitialBlock,
    pub nonlinearity: NonlinearitySpec,
    pub study: StudyBlock,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Canonical JSON used for hashing.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn setup(&self) -> ProblemSetup {
        let g = &self.game;
        ProblemSetup {
            intervals: self.grid.intervals,
            steps: self.grid.steps,
            horizon: self.geometry.horizon,
            alpha: self.geometry.alpha,
            law: self.geometry.length.into(),
            b_exp: self.geometry.b_exp,
            clip: self.geometry.clip,
            grading: self.grid.grading,
            drift: self.grid.drift.into(),
            windows: WindowSpec {
                leader: (g.leader[0], g.leader[1]),
                followers: [
                    (g.followers[0][0], g.followers[0][1]),
                    (g.followers[1][0], g.followers[1][1]),
                ],
                observation: (g.observation[0], g.observation[1]),
            },
        }
    }

    pub fn f(&self) -> SemilinearF {
        self.nonlinearity.into()
    }
}
