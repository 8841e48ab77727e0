//! Acceptance criteria at desk scale (N = 64, M = 128, T = 1, α = 0.5,
//! ℓ(t) = 1 + t/4). Each test prints one `criterion N ...: PASS|FAIL` line.

use std::f64::consts::PI;
use std::sync::Mutex;
use std::time::Instant;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hierctl::config::{ExperimentKind, NonlinearitySpec, ScenarioConfig};
use hierctl::{load_preset, run_scenario, Outcome, RunOptions, RunStatus};
use hierctl_core::carleman::{random_sine_series, CarlemanWeights};
use hierctl_core::control::{target_time_profile, LaxMilgram, LinearControlProblem};
use hierctl_core::discretization::Discretization;
use hierctl_core::field::{Field, Quadrature};
use hierctl_core::nash::{
    bump_targets, control_inner, functional_gradient, hessian_apply, nash_fixed_point,
    random_probes, second_derivative_bilinear, GameSpec, NashOptions, SecondOrderState,
};
use hierctl_core::nonlinearity::SemilinearF;
use hierctl_core::solvers::{solve_forward_semilinear, LinearOps, LinearizedSystem, StepOptions};

/// Criteria run one at a time so their timings do not contend.
static SERIAL: Mutex<()> = Mutex::new(());

const BUDGET_SECONDS: f64 = 60.0;
const NONLINEAR_BUDGET_SECONDS: f64 = 300.0;

struct Check {
    parts: Vec<(String, bool)>,
}

impl Check {
    fn new() -> Self {
        Self { parts: Vec::new() }
    }

    fn item(&mut self, label: impl Into<String>, ok: bool) {
        self.parts.push((label.into(), ok));
    }

    fn finish(self, n: u32, title: &str, start: Instant, limit: f64) {
        let secs = start.elapsed().as_secs_f64();
        let mut parts = self.parts;
        parts.push((format!("time {secs:.1} s < {limit} s"), secs < limit));
        let pass = parts.iter().all(|(_, ok)| *ok);
        let details: Vec<String> = parts
            .iter()
            .map(|(l, ok)| format!("{}{l}", if *ok { "" } else { "FAILED " }))
            .collect();
        println!(
            "criterion {n} [{title}]: {} ({})",
            if pass { "PASS" } else { "FAIL" },
            details.join("; ")
        );
        assert!(pass, "criterion {n} failed");
    }
}

fn det() -> RunOptions {
    RunOptions {
        seed: 2024,
        threads: 2,
        deterministic: true,
    }
}

fn run(cfg: &ScenarioConfig) -> Outcome {
    run_scenario(cfg, det()).expect("run succeeds").outcome
}

fn m(o: &Outcome, key: &str) -> f64 {
    o.get(key).unwrap_or_else(|| panic!("metric {key}"))
}

fn desk_disc() -> Discretization {
    ScenarioConfig::default().setup().build().unwrap()
}

fn sine(disc: &Discretization, amp: f64) -> Vec<f64> {
    disc.grid
        .nodes()
        .iter()
        .map(|x| amp * (PI * x).sin())
        .collect()
}

fn random_field(disc: &Discretization, rng: &mut ChaCha8Rng) -> Field {
    // a shared smooth profile plus a fresh low-mode perturbation per row
    let mut f = disc.zeros();
    let cols = f.cols();
    let series = random_sine_series(disc.grid.nodes(), 12, rng);
    for k in 0..f.rows() {
        let phase = random_sine_series(disc.grid.nodes(), 3, rng);
        let row = f.row_mut(k);
        for j in 1..cols - 1 {
            row[j] = series[j] + phase[j];
        }
    }
    f
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

#[test]
fn criterion_1_weights() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let disc = desk_disc();
    let cfg = ScenarioConfig::default();
    let w = CarlemanWeights::build(&cfg.carleman.params(), &disc.deg, &disc.mesh.times()).unwrap();
    let mut c = Check::new();
    let mismatch = w.identity_mismatch();
    let log_mismatch = w.identity_log_mismatch();
    c.item(
        format!("ρ̂²=ρ₁ρ₀ mismatch {mismatch:.2e} ≤ 1e-12"),
        mismatch <= 1e-12,
    );
    c.item(
        format!("log-space mismatch {log_mismatch:.2e} ≤ 1e-12"),
        log_mismatch <= 1e-12,
    );
    let o = w.ordering();
    c.item(
        format!(
            "ordering constants finite ({:.2e}, {:.2e}, {:.2e}, {:.2e})",
            o.rho1_over_rhohat, o.rhohat_over_rho0, o.rho0_over_rho2, o.rho2_over_rho1_sq
        ),
        o.all_finite(),
    );
    // both sides are negative; compare them directly on levels with finite τ
    let levels: Vec<usize> = (0..w.levels())
        .filter(|&n| w.ln_tau[n].is_finite())
        .collect();
    let holds = levels.iter().all(|&n| 3.0 * w.a_star(n) < 2.0 * w.a_hat(n));
    let gap = levels
        .iter()
        .map(|&n| (2.0 * w.a_hat(n) - 3.0 * w.a_star(n)) / (2.0 * w.a_hat(n)).abs())
        .fold(f64::INFINITY, f64::min);
    c.item(
        format!(
            "3A* < 2Â on {} levels, min relative gap {gap:.3e}",
            levels.len()
        ),
        holds && !levels.is_empty(),
    );
    c.finish(1, "Carleman weights", start, BUDGET_SECONDS);
}

#[test]
fn criterion_2_summation_by_parts() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let disc = desk_disc();
    let f = SemilinearF::default();
    let y0 = sine(&disc, 0.3);
    let y =
        solve_forward_semilinear(&disc, &f, &y0, &disc.zeros(), StepOptions::default()).unwrap();
    let ops = LinearOps::along(&disc, &f, &y);
    let q = Quadrature::new(&disc.grid, &disc.mesh);
    let zrow = vec![0.0; disc.grid.intervals() + 1];
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let g = random_field(&disc, &mut rng);
        let r = random_field(&disc, &mut rng);
        let w = ops.forward(&zrow, Some(&g)).unwrap();
        let p = ops.backward(&zrow, Some(&r)).unwrap();
        let scale = q.norm_full(&w) * q.norm_full(&r) + q.norm_full(&g) * q.norm_full(&p);
        worst = worst.max((q.state(&w, &r) - q.adjoint(&g, &p)).abs() / scale);
    }
    let mut c = Check::new();
    c.item(
        format!("5 random pairs, worst relative defect {worst:.2e} ≤ 1e-8"),
        worst <= 1e-8,
    );
    c.finish(2, "summation by parts", start, BUDGET_SECONDS);
}

/// Largest deviation of `(eps, j)` from the parabola through its first,
/// middle and last points, relative to `max |j|`.
fn parabola_defect(pts: &[(f64, f64)]) -> f64 {
    let (a, b, c) = (pts[0], pts[pts.len() / 2], pts[pts.len() - 1]);
    let lag = |x: f64| {
        a.1 * (x - b.0) * (x - c.0) / ((a.0 - b.0) * (a.0 - c.0))
            + b.1 * (x - a.0) * (x - c.0) / ((b.0 - a.0) * (b.0 - c.0))
            + c.1 * (x - a.0) * (x - b.0) / ((c.0 - a.0) * (c.0 - b.0))
    };
    let scale = pts.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
    pts.iter()
        .map(|p| (p.1 - lag(p.0)).abs())
        .fold(0.0, f64::max)
        / scale
}

#[test]
fn criterion_3_nash_equilibrium() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let cfg = load_preset("nash-landscape").unwrap();
    let o = run(&cfg);
    let mut c = Check::new();
    let r = m(&o, "equilibrium_residual_1").max(m(&o, "equilibrium_residual_2"));
    c.item(
        format!("quasi-equilibrium residual {r:.2e} ≤ 1e-6"),
        r <= 1e-6,
    );
    let fd = m(&o, "gradient_fd_error");
    c.item(
        format!("adjoint gradient vs central FD {fd:.2e} ≤ 1e-5"),
        fd <= 1e-5,
    );

    let mut lin = cfg.clone();
    lin.nonlinearity = NonlinearitySpec::Zero;
    let o = run(&lin);
    let t = o.table("j_landscape").unwrap();
    let mut worst = 0.0f64;
    for follower in [1.0, 2.0] {
        let pts: Vec<(f64, f64)> = t
            .rows
            .iter()
            .filter(|r| r[0] == follower)
            .map(|r| (r[1], r[2]))
            .collect();
        worst = worst.max(parabola_defect(&pts));
    }
    c.item(
        format!("F≡0 landscape parabola defect {worst:.2e} ≤ 1e-10"),
        worst <= 1e-10,
    );
    c.finish(3, "Nash quasi-equilibrium", start, BUDGET_SECONDS);
}

#[test]
fn criterion_4_convexity() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut c = Check::new();
    let sweep = load_preset("prop2-mu-sweep").unwrap();
    let o = run(&sweep);
    let mu_star = m(&o, "mu_star");
    c.item(format!("μ* = {mu_star:.3e} found"), mu_star.is_finite());
    let mut nash = sweep.clone();
    nash.kind = ExperimentKind::Nash;
    nash.study.landscape_points = 3;
    nash.study.write_fields = false;
    for factor in [1.5, 4.0, 20.0] {
        let mut cfg = nash.clone();
        cfg.game.mu = [factor * mu_star; 2];
        let o = run(&cfg);
        let ok = m(&o, "convexity_certified_1") == 1.0 && m(&o, "convexity_certified_2") == 1.0;
        c.item(
            format!(
                "μ = {factor}μ* certified (margins {:.2e}, {:.2e})",
                m(&o, "convexity_margin_1"),
                m(&o, "convexity_margin_2")
            ),
            ok,
        );
    }
    for mu in [0.1, 1.0, 5.0] {
        let mut cfg = nash.clone();
        cfg.nonlinearity = NonlinearitySpec::Zero;
        cfg.game.mu = [mu; 2];
        let o = run(&cfg);
        let margin = m(&o, "convexity_margin_1").min(m(&o, "convexity_margin_2"));
        c.item(
            format!("F≡0, μ = {mu}: margin {margin:.6} ≥ μ"),
            margin >= mu * (1.0 - 1e-12),
        );
    }

    // second derivative form against differences of adjoint gradients
    let disc = desk_disc();
    let f = SemilinearF::default();
    let targets = bump_targets(&disc, 1e-3, &vec![1.0; disc.levels()]);
    let game = GameSpec::new([1.0, 1.0], [1.0, 1.0], targets, true).unwrap();
    let y0 = sine(&disc, 0.1);
    let lw = disc.windows.leader;
    let h = Field::from_fn(&disc.grid, &disc.mesh, |x, t| {
        if lw.contains(x) {
            0.5 * (PI * (x - lw.lo) / lw.len()).sin() * (1.0 + t)
        } else {
            0.0
        }
    });
    let sol = nash_fixed_point(&disc, &game, &f, &h, &y0, NashOptions::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for i in 0..2 {
        let state = SecondOrderState {
            y: &sol.y,
            p: &sol.p[i],
        };
        let dirs = random_probes(&disc, i, 2, &mut rng);
        let (a, b) = (&dirs[0], &dirs[1]);
        let eps = 1e-3;
        let grad = |t: f64| {
            let mut v = sol.v.clone();
            v[i].axpy(t, b);
            functional_gradient(
                &disc,
                &game,
                &f,
                i,
                &y0,
                &h,
                [&v[0], &v[1]],
                StepOptions::default(),
            )
            .unwrap()
        };
        let fd = control_inner(&disc, i, &grad(eps).sub(&grad(-eps)), a) / (2.0 * eps);
        let form = second_derivative_bilinear(&disc, &game, &f, i, &state, a, b).unwrap();
        worst = worst.max(rel(fd, form));
        let ha = hessian_apply(&disc, &game, &f, i, &state, a).unwrap();
        let hb = hessian_apply(&disc, &game, &f, i, &state, b).unwrap();
        worst = worst.max(rel(
            control_inner(&disc, i, &ha, b),
            control_inner(&disc, i, &hb, a),
        ));
    }
    c.item(format!("Hessian vs FD {worst:.2e} ≤ 1e-3"), worst <= 1e-3);
    c.finish(4, "follower convexity", start, BUDGET_SECONDS);
}

#[test]
fn criterion_5_linear_null_control() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let cfg = load_preset("linear-null-control").unwrap();
    let o = run(&cfg);
    let mut c = Check::new();
    let rt = m(&o, "relative_terminal");
    c.item(format!("‖y(T)‖/‖y0‖ = {rt:.2e} ≤ 1e-3"), rt <= 1e-3);
    let (budget, k0, cst) = (
        m(&o, "budget_total"),
        m(&o, "kappa0"),
        m(&o, "budget_constant"),
    );
    let (fine, change) = (
        m(&o, "budget_constant_refined"),
        m(&o, "budget_constant_change"),
    );
    c.item(
        format!("budget {budget:.3e} = C κ₀ with κ₀ {k0:.3e}, C {cst:.3e}"),
        budget.is_finite() && budget <= cst * k0 * (1.0 + 1e-12),
    );
    c.item(
        format!("C refined {fine:.3e}, change {:.1}% ≤ 30%", 100.0 * change),
        change <= 0.3,
    );

    // the control map y0 ↦ h is linear
    let disc = desk_disc();
    let f = cfg.f();
    let w = CarlemanWeights::build(&cfg.carleman.params(), &disc.deg, &disc.mesh.times()).unwrap();
    let targets = bump_targets(&disc, 1e-3, &target_time_profile(&w));
    let game = GameSpec::new([1.0, 1.0], [1.0, 1.0], targets, true).unwrap();
    let sys = LinearizedSystem::frozen(&disc, &f, game.alpha, game.mu, &game.omega(&disc));
    let lm = LaxMilgram::assemble(&disc, &sys, &w, cfg.solver.lax_milgram()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let a = random_sine_series(disc.grid.nodes(), 6, &mut rng);
    let b = random_sine_series(disc.grid.nodes(), 6, &mut rng);
    let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - 0.5 * y).collect();
    let solve = |y0: Vec<f64>| {
        lm.solve(&disc, &w, &LinearControlProblem::homogeneous(&disc, y0))
            .unwrap()
    };
    let (ta, tb, tab) = (solve(a), solve(b), solve(ab));
    let combo = ta.h.scaled(2.0).sub(&tb.h.scaled(0.5));
    let sup = tab.h.sub(&combo).max_abs() / tab.h.max_abs();
    c.item(
        format!("superposition defect {sup:.2e} ≤ 1e-8"),
        sup <= 1e-8,
    );
    c.finish(5, "linear null control", start, BUDGET_SECONDS);
}

#[test]
fn criterion_6_additional_estimates() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let o = run(&load_preset("linear-null-control").unwrap());
    let mut c = Check::new();
    for (label, key) in [
        ("lower", "estimate_lower_constant"),
        ("upper", "estimate_upper_constant"),
    ] {
        let (v, fine) = (m(&o, key), m(&o, &format!("{key}_refined")));
        c.item(
            format!("{label} bundle constant {v:.3e} finite"),
            v.is_finite() && v > 0.0,
        );
        let change = m(&o, &format!("{key}_change"));
        c.item(
            format!(
                "{label} constant refined {fine:.3e}, change {:.1}% ≤ 30%",
                100.0 * change
            ),
            change <= 0.3,
        );
    }
    c.finish(6, "additional estimates", start, BUDGET_SECONDS);
}

#[test]
fn criterion_7_small_data_nonlinear_control() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let cfg = load_preset("theorem1-small-data").unwrap();
    let run = run_scenario(&cfg, det()).expect("run succeeds");
    let o = &run.outcome;
    let mut c = Check::new();
    let (it, term) = (m(o, "newton_iterations"), m(o, "terminal_norm"));
    let eq = m(o, "equilibrium_residual_1").max(m(o, "equilibrium_residual_2"));
    c.item(
        format!("converged in {it} ≤ 10 Newton steps, ‖y(T)‖ {term:.2e} ≤ 1e-6, residual {eq:.2e} ≤ 1e-6"),
        run.outcome.status == RunStatus::Ok && it <= 10.0 && term <= 1e-6 && eq <= 1e-6,
    );
    let radii: Vec<String> = (0..cfg.study.amplitude_scales.len())
        .map(|i| format!("{:.3e}", m(o, &format!("scale{i}_radius"))))
        .collect();
    c.item(
        format!("radii recorded [{}]", radii.join(", ")),
        radii.len() == 3,
    );
    c.item(
        format!("3× converges ({} steps)", m(o, "scale1_iterations")),
        m(o, "scale1_converged") == 1.0,
    );
    let big = m(o, "scale2_converged") == 0.0;
    c.item(
        format!(
            "300× detectably fails (converged: {}, steps {}, ‖y(T)‖ {:.2e})",
            !big,
            o.get("scale2_iterations").unwrap_or(f64::NAN),
            o.get("scale2_terminal").unwrap_or(f64::NAN)
        ),
        big,
    );

    let mut zero = cfg.clone();
    zero.nonlinearity = NonlinearitySpec::Zero;
    zero.study.amplitude_scales = vec![1.0];
    let z = run_scenario(&zero, det()).expect("run succeeds").outcome;
    c.item(
        format!("F≡0 in {} step", m(&z, "newton_iterations")),
        m(&z, "newton_iterations") == 1.0 && m(&z, "converged") == 1.0,
    );
    c.finish(
        7,
        "small-data nonlinear control",
        start,
        NONLINEAR_BUDGET_SECONDS,
    );
}

#[test]
fn criterion_8_observability() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let o = run(&load_preset("observability-baseline").unwrap());
    let mut c = Check::new();
    let n = m(&o, "samples");
    c.item(
        format!(
            "{n} samples, all ratios finite, max {:.3e}",
            m(&o, "max_ratio")
        ),
        n == 20.0 && m(&o, "all_finite") == 1.0 && m(&o, "max_ratio").is_finite(),
    );
    let ch = m(&o, "ratio_change");
    c.item(
        format!(
            "refined max {:.3e}, change {:.1}% ≤ 20%",
            m(&o, "max_ratio_refined"),
            100.0 * ch
        ),
        ch <= 0.2,
    );
    c.finish(8, "observability ratio", start, BUDGET_SECONDS);
}

#[test]
fn criterion_9_mms() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let o = run(&load_preset("mms-convergence").unwrap());
    let mut c = Check::new();
    let t = o.table("mms").unwrap();
    let studies = t.column("study").unwrap();
    let grids = [0.0, 1.0].map(|s| studies.iter().filter(|v| **v == s).count());
    c.item(
        format!("grids per study {grids:?} ≥ 3"),
        grids.iter().all(|g| *g >= 3),
    );
    let (ts, ss) = (m(&o, "time_order"), m(&o, "space_order"));
    c.item(
        format!("time slope {ts:.3} in 1.0 ± 0.15"),
        (ts - 1.0).abs() <= 0.15,
    );
    c.item(
        format!("interior space slope {ss:.3} in 2.0 ± 0.3"),
        (ss - 2.0).abs() <= 0.3,
    );
    c.finish(9, "manufactured solution orders", start, BUDGET_SECONDS);
}
