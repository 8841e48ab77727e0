use hierctl::config::{ExperimentKind, NonlinearitySpec, ScenarioConfig};
use hierctl::error::EXIT_CONFIG;
use hierctl::{load_preset, preset_names, validate_config, HarnessError};

#[test]
fn defaults_are_the_desk_problem() {
    let cfg = ScenarioConfig::from_toml("").unwrap();
    assert_eq!(cfg, ScenarioConfig::default());
    assert_eq!(cfg.grid.intervals, 64);
    assert_eq!(cfg.grid.steps, 128);
    assert_eq!(cfg.geometry.horizon, 1.0);
    assert_eq!(cfg.geometry.alpha, 0.5);
    let setup = cfg.setup();
    assert_eq!(setup.law.ell(1.0), 1.25);
    assert!(validate_config(&cfg).is_ok());
}

#[test]
fn every_preset_validates_and_survives_toml() {
    for name in preset_names() {
        let cfg = load_preset(name).unwrap();
        let report = validate_config(&cfg);
        assert!(report.is_ok(), "{name}: {:?}", report.issues);
        let back = ScenarioConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg, "{name}");
    }
}

#[test]
fn unknown_preset_lists_the_alternatives() {
    let err = load_preset("theorem-one").unwrap_err();
    assert_eq!(err.exit_code(), EXIT_CONFIG);
    let msg = err.to_string();
    for name in preset_names() {
        assert!(msg.contains(name), "{msg}");
    }
}

#[test]
fn follower_meeting_leader_is_rejected_by_the_disjointness_rule() {
    let mut cfg = ScenarioConfig::default();
    cfg.game.followers[1] = [0.55, 0.8];
    let report = validate_config(&cfg);
    assert_eq!(report.issues.len(), 1, "{:?}", report.issues);
    let issue = &report.issues[0];
    assert_eq!(issue.field, "game.followers[1]");
    assert!(issue.message.contains("disjoint"));
    assert!(issue.message.contains("O_i ∩ O = ∅"));
}

#[test]
fn touching_windows_are_allowed() {
    let mut cfg = ScenarioConfig::default();
    cfg.game.followers[0] = [0.1, 0.4];
    assert!(validate_config(&cfg).is_ok());
}

#[test]
fn validation_lists_every_offending_field() {
    let text = r#"
        kind = "mms"
        [geometry]
        alpha = 1.5
        horizon = -1.0
        [grid]
        intervals = 2
        steps = 1
        [game]
        mu = [0.0, 1.0]
        observation = [0.0, 0.2]
        [solver]
        nash_tol = 0.0
        newton_max_iter = 0
        [study]
        mms_steps = [32, 16]
    "#;
    let cfg = ScenarioConfig::from_toml(text).unwrap();
    let fields: Vec<String> = validate_config(&cfg)
        .issues
        .into_iter()
        .map(|i| i.field)
        .collect();
    for want in [
        "geometry.alpha",
        "geometry.horizon",
        "grid.intervals",
        "grid.steps",
        "game.mu[0]",
        "game.observation",
        "solver.nash_tol",
        "solver.newton_max_iter",
        "study.mms_steps",
    ] {
        assert!(
            fields.iter().any(|f| f == want),
            "missing {want} in {fields:?}"
        );
    }
}

#[test]
fn unknown_keys_are_parse_errors() {
    assert!(ScenarioConfig::from_toml("[grid]\nintervalz = 3\n").is_err());
}

#[test]
fn config_errors_map_to_exit_two() {
    let mut cfg = ScenarioConfig::default();
    cfg.grid.intervals = 1;
    let err = hierctl::run_scenario(&cfg, Default::default()).unwrap_err();
    assert!(matches!(err, HarnessError::Config(_)));
    assert_eq!(err.exit_code(), EXIT_CONFIG);
}

#[test]
fn tagged_sections_parse() {
    let cfg = ScenarioConfig::from_toml(
        r#"
        kind = "forward"
        [nonlinearity]
        kind = "linear"
        c1 = 0.5
        c2 = -0.25
        [geometry.length]
        family = "constant"
        l0 = 2.0
        "#,
    )
    .unwrap();
    assert_eq!(cfg.kind, ExperimentKind::Forward);
    assert_eq!(
        cfg.nonlinearity,
        NonlinearitySpec::Linear { c1: 0.5, c2: -0.25 }
    );
    assert_eq!(cfg.setup().law.ell(0.7), 2.0);
}

#[test]
fn config_hash_depends_on_content_only() {
    let a = ScenarioConfig::default();
    let mut b = ScenarioConfig::from_toml(&a.to_toml()).unwrap();
    assert_eq!(
        hierctl::record::config_hash(&a),
        hierctl::record::config_hash(&b)
    );
    b.grid.steps += 1;
    assert_ne!(
        hierctl::record::config_hash(&a),
        hierctl::record::config_hash(&b)
    );
}
