use std::fmt;

use serde::Serialize;

use hierctl_core::geometry::{Degeneracy, GradientWeight, MovingDomain, Window};

use crate::config::{ExperimentKind, ScenarioConfig};

pub const MIN_INTERVALS: usize = 4;
pub const MAX_INTERVALS: usize = 4096;
pub const MIN_STEPS: usize = 2;
pub const MAX_STEPS: usize = 65_536;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Issue {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.issues.is_empty()
    }

    fn push(&mut self, field: &str, message: impl Into<String>) {
        self.issues.push(Issue {
            field: field.to_string(),
            message: message.into(),
        });
    }

    fn check(&mut self, ok: bool, field: &str, message: &str) {
        if !ok {
            self.push(field, message);
        }
    }
}

fn positive(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

fn window(r: &mut ValidationReport, field: &str, w: [f64; 2]) -> Option<Window> {
    if !(0.0 <= w[0] && w[0] < w[1] && w[1] <= 1.0) {
        r.push(field, "window must satisfy 0 ≤ lo < hi ≤ 1");
        return None;
    }
    Window::new(w[0], w[1]).ok()
}

/// Checks every field and reports all offenders at once.
pub fn validate_config(cfg: &ScenarioConfig) -> ValidationReport {
    let mut r = ValidationReport::default();
    let geo = &cfg.geometry;
    r.check(
        geo.alpha > 0.0 && geo.alpha < 1.0,
        "geometry.alpha",
        "weak degeneracy needs 0 < α < 1",
    );
    r.check(
        geo.b_exp > 1.0 && geo.b_exp.is_finite(),
        "geometry.b_exp",
        "must exceed 1",
    );
    r.check(
        positive(geo.horizon),
        "geometry.horizon",
        "T must be positive",
    );
    if positive(geo.horizon) && MovingDomain::new(geo.length.into(), geo.horizon).is_err() {
        r.push(
            "geometry.length",
            "ℓ(t) must stay positive and finite on [0, T]",
        );
    }
    if let Ok(deg) = Degeneracy::new(geo.alpha) {
        if let Ok(gw) = GradientWeight::new(geo.b_exp, &deg, geo.clip) {
            let rep = gw.validate(&deg, cfg.grid.intervals.max(MIN_INTERVALS));
            if !rep.all_hold() {
                r.push(
                    "geometry.clip",
                    "β violates β² ≤ a or (β²)' ≤ 2a' on the grid; enable clipping",
                );
            }
        }
    }

    let grid = &cfg.grid;
    r.check(
        (MIN_INTERVALS..=MAX_INTERVALS).contains(&grid.intervals),
        "grid.intervals",
        "N must lie in [4, 4096]",
    );
    r.check(
        (MIN_STEPS..=MAX_STEPS).contains(&grid.steps),
        "grid.steps",
        "M must lie in [2, 65536]",
    );
    r.check(
        grid.grading >= 1.0 && grid.grading <= 4.0,
        "grid.grading",
        "γ must lie in [1, 4]",
    );

    let g = &cfg.game;
    let leader = window(&mut r, "game.leader", g.leader);
    let followers = [
        window(&mut r, "game.followers[0]", g.followers[0]),
        window(&mut r, "game.followers[1]", g.followers[1]),
    ];
    let obs = window(&mut r, "game.observation", g.observation);
    if let Some(o) = leader {
        for (i, f) in followers.iter().enumerate() {
            if let Some(f) = f {
                if f.overlap(&o) > 0.0 {
                    r.push(
                        &format!("game.followers[{i}]"),
                        "follower windows must be disjoint from the leader window (O_i ∩ O = ∅)",
                    );
                }
            }
        }
        if let Some(d) = obs {
            if d.overlap(&o) <= 0.0 {
                r.push(
                    "game.observation",
                    "the observation window must meet the leader window (O_d ∩ O ≠ ∅)",
                );
            }
        }
    }
    for i in 0..2 {
        r.check(
            g.alpha[i] >= 0.0 && g.alpha[i].is_finite(),
            &format!("game.alpha[{i}]"),
            "tracking weight must be finite and nonnegative",
        );
        r.check(
            positive(g.mu[i]),
            &format!("game.mu[{i}]"),
            "penalty must be positive",
        );
    }
    r.check(
        g.target_amplitude.is_finite(),
        "game.target_amplitude",
        "must be finite",
    );
    r.check(
        g.leader_amplitude.is_finite(),
        "game.leader_amplitude",
        "must be finite",
    );

    let c = &cfg.carleman;
    if let Some(s) = c.s {
        r.check(positive(s), "carleman.s", "s must be positive");
    } else {
        r.check(positive(c.kappa), "carleman.kappa", "must be positive");
    }
    if let Some(l) = c.lambda {
        r.check(positive(l), "carleman.lambda", "λ must be positive");
    }
    r.check(
        c.lambda_margin >= 0.0 && c.lambda_margin.is_finite(),
        "carleman.lambda_margin",
        "must be nonnegative",
    );
    r.check(
        0.0 < c.alpha_p && c.alpha_p < c.beta_p && c.beta_p < 1.0,
        "carleman.alpha_p",
        "need 0 < α' < β' < 1",
    );
    if let Some(m) = c.m_floor {
        r.check(positive(m), "carleman.m_floor", "must be positive");
    }
    r.check(
        positive(c.saturation),
        "carleman.saturation",
        "must be positive",
    );

    let s = &cfg.solver;
    for (name, v) in [
        ("solver.step_tol", s.step_tol),
        ("solver.picard_tol", s.picard_tol),
        ("solver.nash_tol", s.nash_tol),
        ("solver.terminal_tol", s.terminal_tol),
        ("solver.equilibrium_tol", s.equilibrium_tol),
        ("solver.newton_picard_tol", s.newton_picard_tol),
        ("solver.lm_tol", s.lm_tol),
    ] {
        r.check(positive(v), name, "tolerance must be positive");
    }
    for (name, v) in [
        ("solver.step_max_iter", s.step_max_iter),
        ("solver.picard_max_sweeps", s.picard_max_sweeps),
        ("solver.nash_max_sweeps", s.nash_max_sweeps),
        ("solver.newton_max_iter", s.newton_max_iter),
        (
            "solver.newton_picard_max_sweeps",
            s.newton_picard_max_sweeps,
        ),
    ] {
        r.check(v > 0, name, "cap must be at least 1");
    }

    r.check(
        cfg.initial.amplitude.is_finite(),
        "initial.amplitude",
        "must be finite",
    );
    r.check(cfg.initial.mode >= 1, "initial.mode", "must be at least 1");

    let st = &cfg.study;
    match cfg.kind {
        ExperimentKind::Nash | ExperimentKind::Convexity => {
            r.check(st.probes >= 1, "study.probes", "need at least one probe");
            r.check(
                st.landscape_points >= 3,
                "study.landscape_points",
                "need at least 3 points",
            );
            r.check(
                positive(st.landscape_span),
                "study.landscape_span",
                "must be positive",
            );
            if cfg.kind == ExperimentKind::Convexity {
                r.check(
                    positive(st.mu_bracket[0])
                        && st.mu_bracket[0] < st.mu_bracket[1]
                        && st.mu_bracket[1].is_finite(),
                    "study.mu_bracket",
                    "need 0 < lo < hi",
                );
            }
        }
        ExperimentKind::NonlinearControl => {
            r.check(
                !st.amplitude_scales.is_empty() && st.amplitude_scales.iter().all(|v| positive(*v)),
                "study.amplitude_scales",
                "need at least one positive scale",
            );
        }
        ExperimentKind::Observability => {
            r.check(st.samples >= 1, "study.samples", "need at least one sample");
            r.check(st.modes >= 1, "study.modes", "need at least one mode");
        }
        ExperimentKind::Mms => {
            for (name, v) in [
                ("study.mms_intervals", &st.mms_intervals),
                ("study.mms_steps", &st.mms_steps),
            ] {
                r.check(
                    v.len() >= 2 && v.windows(2).all(|w| w[0] < w[1]) && v[0] >= MIN_STEPS,
                    name,
                    "need at least two strictly increasing resolutions",
                );
            }
            r.check(
                st.mms_space_steps >= MIN_STEPS,
                "study.mms_space_steps",
                "must be at least 2",
            );
            r.check(
                (MIN_INTERVALS..=MAX_INTERVALS).contains(&st.mms_time_intervals),
                "study.mms_time_intervals",
                "N must lie in [4, 4096]",
            );
            r.check(
                0.0 <= st.mms_interior[0]
                    && st.mms_interior[0] < st.mms_interior[1]
                    && st.mms_interior[1] <= 1.0,
                "study.mms_interior",
                "need 0 ≤ lo < hi ≤ 1",
            );
        }
        _ => {}
    }
    r.check(
        st.source_amplitude.is_finite(),
        "study.source_amplitude",
        "must be finite",
    );
    if st.refine {
        r.check(
            st.refine_factor >= 2,
            "study.refine_factor",
            "refinement factor must be at least 2",
        );
        r.check(
            grid.intervals.saturating_mul(st.refine_factor) <= MAX_INTERVALS,
            "study.refine_factor",
            "refined N exceeds 4096",
        );
    }

    // anything the checks above missed surfaces when building the grid
    if r.is_ok() {
        if let Err(e) = cfg.setup().build() {
            r.push("config", e.to_string());
        }
    }
    r
}
