use std::fs;

use hierctl::config::{ExperimentKind, ScenarioConfig};
use hierctl::record::{sha256_hex, RunStatus, RECORD_SCHEMA_VERSION};
use hierctl::{run_scenario, RunOptions};

fn small(kind: ExperimentKind) -> ScenarioConfig {
    let mut cfg = ScenarioConfig {
        name: format!("small-{}", kind.as_str()),
        kind,
        ..ScenarioConfig::default()
    };
    cfg.grid.intervals = 16;
    cfg.grid.steps = 32;
    cfg.study.probes = 2;
    cfg.study.mu_iterations = 3;
    cfg.study.samples = 4;
    cfg.study.landscape_points = 5;
    cfg.study.mms_intervals = vec![8, 16];
    cfg.study.mms_steps = vec![8, 16];
    cfg.study.mms_time_intervals = 64;
    cfg
}

fn det(seed: u64) -> RunOptions {
    RunOptions {
        seed,
        threads: 1,
        deterministic: true,
    }
}

/// Header of every CSV each experiment writes, in output order.
const GOLDEN: &[(ExperimentKind, &[(&str, &str)])] = &[
    (
        ExperimentKind::Forward,
        &[("norms.csv", "t,l2"), ("trajectory.csv", "t,x,y,h")],
    ),
    (
        ExperimentKind::Nash,
        &[
            ("nash_convergence.csv", "sweep,distance"),
            (
                "gradient_check.csv",
                "follower,probe,adjoint,central_difference,error",
            ),
            ("j_landscape.csv", "follower,eps,j"),
            ("equilibrium.csv", "t,x,y,p1,p2,v1,v2"),
        ],
    ),
    (
        ExperimentKind::Convexity,
        &[("mu_trials.csv", "trial,mu,certified,margin")],
    ),
    (
        ExperimentKind::Observability,
        &[("observability.csv", "sample,ratio")],
    ),
    (
        ExperimentKind::LinearControl,
        &[
            (
                "budget.csv",
                "factor,intervals,steps,budget_total,kappa0,constant",
            ),
            ("control_fields.csv", "t,x,y,p1,p2,h"),
        ],
    ),
    (
        ExperimentKind::NonlinearControl,
        &[
            (
                "newton_history.csv",
                "scale,iteration,residual,tail,budget,terminal,equilibrium_1,equilibrium_2",
            ),
            ("closed_loop.csv", "t,x,y,h,v1,v2"),
        ],
    ),
    (
        ExperimentKind::Diagnostics,
        &[(
            "weights.csv",
            "t,ln_tau,ln_rho0,ln_rho1,ln_rho2,ln_rhohat,active",
        )],
    ),
    (
        ExperimentKind::Mms,
        &[("mms.csv", "study,intervals,steps,h,dt,interior_l2,l2,max")],
    ),
];

const RECORD_KEYS: &[&str] = &[
    "schema",
    "schema_version",
    "tool_version",
    "name",
    "kind",
    "config_hash",
    "seed",
    "deterministic",
    "status",
    "metrics",
    "notes",
    "files",
    "config",
    "record_hash",
];

#[test]
fn output_layout_matches_the_golden_headers() {
    for (kind, tables) in GOLDEN {
        let dir = tempfile::tempdir().unwrap();
        let run = run_scenario(&small(*kind), det(1)).unwrap();
        let record = run.write(dir.path()).unwrap();
        let mut names = vec!["config.toml".to_string()];
        for (file, header) in tables.iter() {
            let text = fs::read_to_string(dir.path().join(file)).unwrap();
            assert_eq!(text.lines().next().unwrap(), *header, "{kind:?} {file}");
            names.push(file.to_string());
        }
        let listed: Vec<String> = record.files.iter().map(|f| f.name.clone()).collect();
        assert_eq!(listed, names, "{kind:?}");
        // the manifest digests are those of the files on disk
        for f in &record.files {
            let bytes = fs::read(dir.path().join(&f.name)).unwrap();
            assert_eq!(sha256_hex(&bytes), f.sha256, "{}", f.name);
        }

        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("record.json")).unwrap())
                .unwrap();
        let keys: Vec<&str> = json
            .as_object()
            .unwrap()
            .keys()
            .map(|k| k.as_str())
            .collect();
        let mut want = RECORD_KEYS.to_vec();
        want.sort_unstable();
        let mut got = keys.clone();
        got.sort_unstable();
        assert_eq!(got, want, "{kind:?}");
        assert_eq!(json["schema_version"], RECORD_SCHEMA_VERSION);
        assert_eq!(json["kind"], kind.as_str());
        let file0 = &json["files"][0];
        let mut fkeys: Vec<&str> = file0
            .as_object()
            .unwrap()
            .keys()
            .map(|k| k.as_str())
            .collect();
        fkeys.sort_unstable();
        assert_eq!(fkeys, ["name", "rows", "schema", "sha256"]);
    }
}

#[test]
fn same_config_and_seed_give_the_same_record_hash() {
    let cfg = small(ExperimentKind::Observability);
    let a = run_scenario(&cfg, det(7)).unwrap().record();
    let b = run_scenario(
        &cfg,
        RunOptions {
            threads: 3,
            ..det(7)
        },
    )
    .unwrap()
    .record();
    assert_eq!(a.record_hash, b.record_hash);
    assert_eq!(a, b);
    let c = run_scenario(&cfg, det(8)).unwrap().record();
    assert_ne!(a.record_hash, c.record_hash);
}

#[test]
fn timings_do_not_enter_the_hash() {
    let cfg = small(ExperimentKind::Forward);
    let timed = run_scenario(&cfg, RunOptions::default()).unwrap().record();
    assert!(!timed.timings.is_empty());
    assert_eq!(timed.record_hash, timed.compute_hash());
    let quiet = run_scenario(&cfg, det(0)).unwrap().record();
    assert!(quiet.timings.is_empty());
    // only the deterministic flag differs
    let mut q = quiet.clone();
    q.deterministic = false;
    assert_eq!(q.compute_hash(), timed.record_hash);
}

#[test]
fn forward_with_zero_data_has_zero_norms() {
    let mut cfg = small(ExperimentKind::Forward);
    cfg.initial.amplitude = 0.0;
    cfg.game.leader_amplitude = 0.0;
    let run = run_scenario(&cfg, det(0)).unwrap();
    for key in [
        "initial_norm",
        "terminal_norm",
        "max_abs",
        "l2_norm",
        "source_norm",
        "energy_constant",
    ] {
        assert_eq!(run.outcome.get(key), Some(0.0), "{key}");
    }
    let norms = run.outcome.table("norms").unwrap();
    assert!(norms.column("l2").unwrap().iter().all(|v| *v == 0.0));
}

#[test]
fn landscape_grid_is_monotone_and_centered_on_the_equilibrium() {
    let cfg = small(ExperimentKind::Nash);
    let run = run_scenario(&cfg, det(3)).unwrap();
    let t = run.outcome.table("j_landscape").unwrap();
    for follower in [1.0, 2.0] {
        let rows: Vec<&Vec<f64>> = t.rows.iter().filter(|r| r[0] == follower).collect();
        assert_eq!(rows.len(), cfg.study.landscape_points);
        assert!(rows.windows(2).all(|w| w[0][1] < w[1][1]));
        assert_eq!(rows[0][1], -cfg.study.landscape_span);
        assert_eq!(rows.last().unwrap()[1], cfg.study.landscape_span);
        // the follower minimizes J_i, so the middle of the line is the lowest point
        let mid = rows.len() / 2;
        assert_eq!(rows[mid][1], 0.0);
        assert!(rows.iter().all(|r| r[2] >= rows[mid][2]));
    }
}

#[test]
fn small_sine_summary_reports_terminal_norm_and_newton_count() {
    let mut cfg = hierctl::load_preset("small-sine").unwrap();
    cfg.grid.intervals = 32;
    cfg.grid.steps = 64;
    let run = run_scenario(&cfg, det(0)).unwrap();
    assert_eq!(run.outcome.status, RunStatus::Ok);
    let text = hierctl::summary(&run.record());
    assert!(text.contains("‖y(T)‖"), "{text}");
    assert!(text.contains("Newton iterations"), "{text}");
    assert!(run.outcome.get("newton_iterations").unwrap() >= 1.0);
}

#[test]
fn unconverged_newton_is_a_solver_failure() {
    let mut cfg = hierctl::load_preset("small-sine").unwrap();
    cfg.grid.intervals = 16;
    cfg.grid.steps = 32;
    cfg.initial.amplitude = 3.0;
    cfg.solver.newton_max_iter = 1;
    let run = run_scenario(&cfg, det(0)).unwrap();
    assert_eq!(run.outcome.status, RunStatus::SolverFailure);
    assert_eq!(run.outcome.status.exit_code(), 3);
    assert!(!run.outcome.notes.is_empty());
}

#[test]
fn refinement_reports_relative_changes() {
    let mut cfg = small(ExperimentKind::LinearControl);
    cfg.study.refine = true;
    let run = run_scenario(&cfg, det(0)).unwrap();
    let base = run.outcome.get("budget_constant").unwrap();
    let fine = run.outcome.get("budget_constant_refined").unwrap();
    let change = run.outcome.get("budget_constant_change").unwrap();
    assert!(((fine - base).abs() / base - change).abs() < 1e-12);
    assert_eq!(run.outcome.table("budget").unwrap().rows.len(), 2);
}

#[test]
fn par_map_keeps_order() {
    let items: Vec<u64> = (0..50).collect();
    let out = hierctl::run::par_map(4, &items, |x| x * x);
    assert_eq!(out, items.iter().map(|x| x * x).collect::<Vec<_>>());
}
