use crate::config::{DriftSpec, ExperimentKind, InitialBlock, ScenarioConfig, StudyBlock};

pub const PRESETS: &[(&str, &str)] = &[
    (
        "theorem1-small-data",
        "nonlinear control of y0 = 1e-2 sin πx, with 3x and 300x amplitude probes",
    ),
    (
        "small-sine",
        "nonlinear control of y0 = 1e-2 sin πx, single run",
    ),
    (
        "prop2-mu-sweep",
        "bisection for the follower convexity threshold μ*",
    ),
    (
        "observability-baseline",
        "observability ratio over 20 random terminal data, with refinement",
    ),
    (
        "mms-convergence",
        "manufactured-solution space and time orders",
    ),
    (
        "linear-null-control",
        "weighted linear null control of y0 = 0.1 sin πx, with refinement",
    ),
    (
        "nash-landscape",
        "follower quasi-equilibrium and J_i along probe lines",
    ),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

pub fn preset(name: &str) -> Option<ScenarioConfig> {
    let base = ScenarioConfig {
        name: name.to_string(),
        ..ScenarioConfig::default()
    };
    let small = InitialBlock {
        amplitude: 1e-2,
        mode: 1,
    };
    let cfg = match name {
        "theorem1-small-data" => ScenarioConfig {
            kind: ExperimentKind::NonlinearControl,
            initial: small,
            study: StudyBlock {
                amplitude_scales: vec![1.0, 3.0, 300.0],
                ..StudyBlock::default()
            },
            ..base
        },
        "small-sine" => ScenarioConfig {
            kind: ExperimentKind::NonlinearControl,
            initial: small,
            ..base
        },
        "prop2-mu-sweep" => ScenarioConfig {
            kind: ExperimentKind::Convexity,
            study: StudyBlock {
                probes: 8,
                ..StudyBlock::default()
            },
            ..base
        },
        "observability-baseline" => ScenarioConfig {
            kind: ExperimentKind::Observability,
            study: StudyBlock {
                samples: 20,
                refine: true,
                ..StudyBlock::default()
            },
            ..base
        },
        "mms-convergence" => {
            let mut c = ScenarioConfig {
                kind: ExperimentKind::Mms,
                ..base
            };
            c.grid.drift = DriftSpec::Central;
            c
        }
        "linear-null-control" => ScenarioConfig {
            kind: ExperimentKind::LinearControl,
            study: StudyBlock {
                refine: true,
                ..StudyBlock::default()
            },
            ..base
        },
        "nash-landscape" => ScenarioConfig {
            kind: ExperimentKind::Nash,
            ..base
        },
        _ => return None,
    };
    Some(cfg)
}
