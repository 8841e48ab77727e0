use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hierctl_core::carleman::{
    empirical_observability, random_sine_series, CarlemanWeights, RatioReport,
};
use hierctl_core::control::{
    additional_estimates, h1a_norm, solve_linear_null_control, solve_nonlinear_null_control,
    target_time_profile, verify_linear_control, ControlledTriple, LinearControlProblem,
    NonlinearOutcome,
};
use hierctl_core::discretization::Discretization;
use hierctl_core::field::{Field, Quadrature};
use hierctl_core::mms::{mms_error, observed_order, Manufactured, TimeProfile};
use hierctl_core::nash::{
    bump_targets, control_inner, control_norm, convexity_margin, convexity_threshold,
    evaluate_functional, functional_gradient, nash_fixed_point, random_probes, GameSpec,
};
use hierctl_core::nonlinearity::SemilinearF;
use hierctl_core::setup::ProblemSetup;
use hierctl_core::solvers::{energy_diagnostics, solve_forward_controlled, LinearizedSystem};

use crate::config::{ExperimentKind, ScenarioConfig, TargetProfile};
use crate::error::{Context, HarnessError};
use crate::output::{Run, RunOptions};
use crate::record::{Outcome, RunStatus, Table};
use crate::validate::validate_config;

/// Order-preserving map over `items` on up to `threads` scoped threads.
pub fn par_map<T: Sync, R: Send>(
    threads: usize,
    items: &[T],
    f: impl Fn(&T) -> R + Sync,
) -> Vec<R> {
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..threads.min(items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| {
            m.into_inner()
                .expect("slot lock")
                .expect("every slot filled")
        })
        .collect()
}

#[derive(Default)]
struct Timer {
    spans: BTreeMap<String, f64>,
}

impl Timer {
    fn time<T>(&mut self, key: &str, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        *self.spans.entry(key.to_string()).or_default() += t0.elapsed().as_secs_f64();
        out
    }
}

/// Validates `cfg` and runs its experiment. Nothing is written to disk.
pub fn run_scenario(cfg: &ScenarioConfig, options: RunOptions) -> Result<Run, HarnessError> {
    let report = validate_config(cfg);
    if !report.is_ok() {
        return Err(HarnessError::Config(report.issues));
    }
    let mut timer = Timer::default();
    let ctx = Ctx { cfg, options };
    let outcome = timer.time("total", || match cfg.kind {
        ExperimentKind::Forward => ctx.forward(),
        ExperimentKind::Nash => ctx.nash(),
        ExperimentKind::Convexity => ctx.convexity(),
        ExperimentKind::Observability => ctx.observability(),
        ExperimentKind::LinearControl => ctx.linear_control(),
        ExperimentKind::NonlinearControl => ctx.nonlinear_control(),
        ExperimentKind::Diagnostics => ctx.diagnostics(),
        ExperimentKind::Mms => ctx.mms(),
    })?;
    Ok(Run {
        config: cfg.clone(),
        options,
        outcome,
        timings: timer.spans,
    })
}

struct Ctx<'a> {
    cfg: &'a ScenarioConfig,
    options: RunOptions,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
        .collect()
}

fn rel_change(a: f64, b: f64) -> f64 {
    (b - a).abs() / a.abs().max(f64::MIN_POSITIVE)
}

/// One row per (level, node) with the given fields as columns.
fn field_table(name: &str, disc: &Discretization, columns: &[&str], fields: &[&Field]) -> Table {
    let mut head = vec!["t", "x"];
    head.extend_from_slice(columns);
    let mut t = Table::new(name, &head);
    let times = disc.mesh.times();
    for (k, &tk) in times.iter().enumerate() {
        for (j, &x) in disc.grid.nodes().iter().enumerate() {
            let mut row = vec![tk, x];
            row.extend(fields.iter().map(|f| f.row(k)[j]));
            t.push(row);
        }
    }
    t
}

fn leader_bump(disc: &Discretization, amp: f64) -> Field {
    let w = disc.windows.leader;
    Field::from_fn(&disc.grid, &disc.mesh, |x, t| {
        if w.contains(x) {
            amp * (PI * (x - w.lo) / w.len()).sin() * (1.0 + t)
        } else {
            0.0
        }
    })
}

fn terminal(disc: &Discretization, y: &Field) -> f64 {
    disc.grid.norm(y.row(y.rows() - 1))
}

impl Ctx<'_> {
    fn setup(&self, factor: usize) -> ProblemSetup {
        let s = self.cfg.setup();
        if factor > 1 {
            s.refined(factor)
        } else {
            s
        }
    }

    fn disc(&self, factor: usize) -> Result<Discretization, HarnessError> {
        self.setup(factor).build().ctx("grid")
    }

    fn f(&self) -> SemilinearF {
        self.cfg.f()
    }

    fn initial(&self, disc: &Discretization, scale: f64) -> Vec<f64> {
        let a = scale * self.cfg.initial.amplitude;
        let m = self.cfg.initial.mode as f64;
        disc.grid
            .nodes()
            .iter()
            .map(|x| a * (m * PI * x).sin())
            .collect()
    }

    fn weights(&self, disc: &Discretization) -> Result<CarlemanWeights, HarnessError> {
        CarlemanWeights::build(&self.cfg.carleman.params(), &disc.deg, &disc.mesh.times())
            .ctx("Carleman weights")
    }

    fn game(
        &self,
        disc: &Discretization,
        w: Option<&CarlemanWeights>,
    ) -> Result<GameSpec, HarnessError> {
        let g = &self.cfg.game;
        let profile = match (g.target_profile, w) {
            (TargetProfile::Weighted, Some(w)) => target_time_profile(w),
            (TargetProfile::Weighted, None) => {
                let w = self.weights(disc)?;
                target_time_profile(&w)
            }
            (TargetProfile::Constant, _) => vec![1.0; disc.levels()],
        };
        let targets = bump_targets(disc, g.target_amplitude, &profile);
        GameSpec::new(g.alpha, g.mu, targets, g.jacobian_weighting).ctx("game")
    }

    /// Smooth leader control `A sin(π(x − lo)/|O|)(1 + t)` on the leader window.
    fn leader(&self, disc: &Discretization) -> Field {
        leader_bump(disc, self.cfg.game.leader_amplitude)
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.options.seed);
        r.set_stream(stream);
        r
    }

    fn forward(&self) -> Result<Outcome, HarnessError> {
        let disc = self.disc(1)?;
        let y0 = self.initial(&disc, 1.0);
        let h = self.leader(&disc);
        let zero = disc.zeros();
        let y = solve_forward_controlled(
            &disc,
            &self.f(),
            &y0,
            &h,
            &zero,
            &zero,
            self.cfg.solver.step(),
        )
        .ctx("forward solve")?;
        let q = Quadrature::new(&disc.grid, &disc.mesh);
        let mut out = Outcome::new();
        out.metric("initial_norm", disc.grid.norm(&y0));
        out.metric("terminal_norm", terminal(&disc, &y));
        out.metric("max_abs", y.max_abs());
        out.metric("l2_norm", q.norm_full(&y));
        out.metric("source_norm", q.norm_full(&h));
        out.metric(
            "energy_constant",
            energy_diagnostics(&disc, &[&y], &[&h], &y0).fitted_constant(),
        );
        let mut norms = Table::new("norms", &["t", "l2"]);
        for (k, t) in disc.mesh.times().iter().enumerate() {
            norms.push(vec![*t, disc.grid.norm(y.row(k))]);
        }
        out.tables.push(norms);
        if self.cfg.study.write_fields {
            out.tables
                .push(field_table("trajectory", &disc, &["y", "h"], &[&y, &h]));
        }
        Ok(out)
    }

    fn nash(&self) -> Result<Outcome, HarnessError> {
        let disc = self.disc(1)?;
        let f = self.f();
        let game = self.game(&disc, None)?;
        let y0 = self.initial(&disc, 1.0);
        let h = self.leader(&disc);
        let step = self.cfg.solver.step();
        let sol = nash_fixed_point(&disc, &game, &f, &h, &y0, self.cfg.solver.nash())
            .ctx("Nash fixed point")?;
        let st = &self.cfg.study;
        let mut out = Outcome::new();
        out.metric("nash_sweeps", sol.history.len() as f64);
        out.metric("terminal_norm", terminal(&disc, &sol.y));
        let j_at = |i: usize, v: [&Field; 2]| -> Result<f64, HarnessError> {
            let y =
                solve_forward_controlled(&disc, &f, &y0, &h, v[0], v[1], step).ctx("functional")?;
            Ok(evaluate_functional(&disc, &game, i, &y, v[i]))
        };
        let mut conv = Table::new("nash_convergence", &["sweep", "distance"]);
        for (k, d) in sol.history.iter().enumerate() {
            conv.push(vec![k as f64 + 1.0, *d]);
        }
        out.tables.push(conv);

        let mut probes = Vec::new();
        for i in 0..2 {
            probes.push(random_probes(
                &disc,
                i,
                st.probes,
                &mut self.rng(i as u64 + 1),
            ));
        }
        // gradient checks at a point moved off the equilibrium, where the gradient is not zero
        let base: [Field; 2] = [
            sol.v[0].add(&probes[0][0].scaled(0.05)),
            sol.v[1].add(&probes[1][0].scaled(0.05)),
        ];
        let mut fd_table = Table::new(
            "gradient_check",
            &[
                "follower",
                "probe",
                "adjoint",
                "central_difference",
                "error",
            ],
        );
        let mut fd_worst = 0.0f64;
        for i in 0..2 {
            out.metric(&format!("equilibrium_residual_{}", i + 1), sol.residuals[i]);
            out.metric(
                &format!("control_norm_{}", i + 1),
                control_norm(&disc, i, &sol.v[i]),
            );
            out.metric(
                &format!("functional_{}", i + 1),
                evaluate_functional(&disc, &game, i, &sol.y, &sol.v[i]),
            );
            let g = functional_gradient(&disc, &game, &f, i, &y0, &h, [&base[0], &base[1]], step)
                .ctx("gradient")?;
            let jobs: Vec<usize> = (0..probes[i].len()).collect();
            let eps = 1e-4;
            let fds = par_map(self.options.threads, &jobs, |&k| {
                let mut plus = base.clone();
                let mut minus = base.clone();
                plus[i].axpy(eps, &probes[i][k]);
                minus[i].axpy(-eps, &probes[i][k]);
                Ok::<_, HarnessError>(
                    (j_at(i, [&plus[0], &plus[1]])? - j_at(i, [&minus[0], &minus[1]])?)
                        / (2.0 * eps),
                )
            });
            for (k, fd) in fds.into_iter().enumerate() {
                let fd = fd?;
                let an = control_inner(&disc, i, &g, &probes[i][k]);
                let err = (fd - an).abs() / fd.abs().max(an.abs()).max(f64::MIN_POSITIVE);
                fd_worst = fd_worst.max(err);
                fd_table.push(vec![i as f64 + 1.0, k as f64, an, fd, err]);
            }
            let cm =
                convexity_margin(&disc, &game, &f, i, &sol, &probes[i]).ctx("convexity margin")?;
            out.metric(&format!("convexity_margin_{}", i + 1), cm.margin);
            out.flag(&format!("convexity_certified_{}", i + 1), cm.certified);
        }
        out.metric("gradient_fd_error", fd_worst);
        out.tables.push(fd_table);

        // J_i along v_i + ε d with d a unit probe and the other control at equilibrium
        let eps_grid = linspace(-st.landscape_span, st.landscape_span, st.landscape_points);
        let mut land = Table::new("j_landscape", &["follower", "eps", "j"]);
        for i in 0..2 {
            let d = &probes[i][0];
            let d = d.scaled(1.0 / control_norm(&disc, i, d).max(f64::MIN_POSITIVE));
            let js = par_map(self.options.threads, &eps_grid, |&e| {
                let mut v = sol.v.clone();
                v[i].axpy(e, &d);
                j_at(i, [&v[0], &v[1]])
            });
            for (e, j) in eps_grid.iter().zip(js) {
                land.push(vec![i as f64 + 1.0, *e, j?]);
            }
        }
        out.tables.push(land);
        if st.write_fields {
            out.tables.push(field_table(
                "equilibrium",
                &disc,
                &["y", "p1", "p2", "v1", "v2"],
                &[&sol.y, &sol.p[0], &sol.p[1], &sol.v[0], &sol.v[1]],
            ));
        }
        Ok(out)
    }

    fn convexity(&self) -> Result<Outcome, HarnessError> {
        let disc = self.disc(1)?;
        let f = self.f();
        let game = self.game(&disc, None)?;
        let y0 = self.initial(&disc, 1.0);
        let h = self.leader(&disc);
        let st = &self.cfg.study;
        let probes = random_probes(&disc, 0, st.probes, &mut self.rng(1));
        let th = convexity_threshold(
            &disc,
            &game,
            &f,
            &h,
            &y0,
            &probes,
            (st.mu_bracket[0], st.mu_bracket[1]),
            st.mu_iterations,
            self.cfg.solver.nash(),
        )
        .ctx("convexity threshold")?;
        let mut out = Outcome::new();
        out.metric("mu_star", th.mu_star.unwrap_or(f64::NAN));
        out.flag("threshold_found", th.mu_star.is_some());
        out.flag(
            "threshold_at_lower_end",
            th.mu_star == Some(st.mu_bracket[0]),
        );
        out.metric("trials", th.trials.len() as f64);
        if th.mu_star.is_none() {
            out.notes
                .push("even the upper end of the μ bracket is not certified".into());
        }
        let mut t = Table::new("mu_trials", &["trial", "mu", "certified", "margin"]);
        for (k, tr) in th.trials.iter().enumerate() {
            t.push(vec![
                k as f64,
                tr.mu,
                if tr.certified { 1.0 } else { 0.0 },
                tr.margin,
            ]);
        }
        out.tables.push(t);
        Ok(out)
    }

    fn observability_case(&self, factor: usize) -> Result<RatioReport, HarnessError> {
        let disc = self.disc(factor)?;
        let w = self.weights(&disc)?;
        let game = self.game(&disc, Some(&w))?;
        let omega = game.omega(&disc);
        let sys = LinearizedSystem::frozen(&disc, &self.f(), game.alpha, game.mu, &omega);
        // the same stream on every grid, so refined runs see the same data
        let mut rng = self.rng(7);
        let terminals: Vec<Vec<f64>> = (0..self.cfg.study.samples)
            .map(|_| random_sine_series(disc.grid.nodes(), self.cfg.study.modes, &mut rng))
            .collect();
        empirical_observability(
            &disc,
            &sys,
            &omega,
            &w,
            &terminals,
            self.cfg.solver.picard(),
        )
        .ctx("observability")
    }

    fn observability(&self) -> Result<Outcome, HarnessError> {
        let st = &self.cfg.study;
        let factors: Vec<usize> = if st.refine {
            vec![1, st.refine_factor]
        } else {
            vec![1]
        };
        let reports = par_map(self.options.threads, &factors, |&r| {
            self.observability_case(r)
        });
        let reports = reports.into_iter().collect::<Result<Vec<_>, _>>()?;
        let base = &reports[0];
        let mut out = Outcome::new();
        out.metric("max_ratio", base.max_ratio);
        out.metric("samples", base.ratios.len() as f64);
        out.metric("skipped", base.skipped as f64);
        out.metric("s", base.s);
        out.metric("lambda", base.lambda);
        out.flag("all_finite", base.ratios.iter().all(|r| r.is_finite()));
        let mut cols = vec!["sample", "ratio"];
        if let Some(fine) = reports.get(1) {
            out.metric("max_ratio_refined", fine.max_ratio);
            out.metric("ratio_change", rel_change(base.max_ratio, fine.max_ratio));
            cols.push("ratio_refined");
        }
        let mut t = Table::new("observability", &cols);
        for (k, r) in base.ratios.iter().enumerate() {
            let mut row = vec![k as f64, *r];
            if let Some(fine) = reports.get(1) {
                row.push(fine.ratios.get(k).copied().unwrap_or(f64::NAN));
            }
            t.push(row);
        }
        out.tables.push(t);
        Ok(out)
    }

    fn linear_case(&self, factor: usize) -> Result<LinearCase, HarnessError> {
        let disc = self.disc(factor)?;
        let f = self.f();
        let w = self.weights(&disc)?;
        let game = self.game(&disc, Some(&w))?;
        let omega = game.omega(&disc);
        let sys = LinearizedSystem::frozen(&disc, &f, game.alpha, game.mu, &omega);
        let mut problem = LinearControlProblem::homogeneous(&disc, self.initial(&disc, 1.0));
        let st = &self.cfg.study;
        if st.source_amplitude != 0.0 {
            let profile = match st.source_profile {
                TargetProfile::Weighted => target_time_profile(&w),
                TargetProfile::Constant => vec![1.0; disc.levels()],
            };
            let bump = leader_bump(&disc, st.source_amplitude);
            for k in 0..disc.levels() - 1 {
                for (x, b) in problem.big_h.row_mut(k).iter_mut().zip(bump.row(k)) {
                    *x = profile[k] * b;
                }
            }
        }
        let triple =
            solve_linear_null_control(&disc, &sys, &w, &problem, self.cfg.solver.lax_milgram())
                .ctx("linear control")?;
        if !triple.budget.total.is_finite() {
            return Err(HarnessError::Budget {
                context: "linear control".into(),
                detail: format!("weighted budget is {}", triple.budget.total),
            });
        }
        let check = verify_linear_control(&disc, &sys, &problem, &triple, self.cfg.solver.picard())
            .ctx("linear control check")?;
        let est = additional_estimates(&disc, &w, &problem, &triple).ctx("additional estimates")?;
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: f64| {
            m.insert(k.to_string(), v);
        };
        put("terminal_norm", triple.terminal_norm(&disc));
        put("initial_norm", disc.grid.norm(&problem.y0));
        put("relative_terminal", check.relative_terminal);
        put("check_terminal", check.terminal);
        put("state_mismatch", check.state_mismatch);
        put(
            "equation_residual",
            triple.equation_residual(&disc, &sys, &problem),
        );
        put("budget_y", triple.budget.y);
        put("budget_p1", triple.budget.p[0]);
        put("budget_p2", triple.budget.p[1]);
        put("budget_h", triple.budget.h);
        put("budget_total", triple.budget.total);
        put("kappa0", triple.kappa0);
        put("budget_constant", triple.constant());
        put("energy", triple.energy);
        put("active_levels", triple.active as f64);
        put("unknowns", triple.report.unknowns as f64);
        put("half_bandwidth", triple.report.half_bandwidth as f64);
        put("cholesky_shift", triple.report.shift);
        put("cg_iterations", triple.report.iterations as f64);
        put("estimate_lower", est.lower);
        put("estimate_upper", est.upper);
        put("kappa1", est.kappa1);
        put("estimate_lower_constant", est.lower_constant());
        put("estimate_upper_constant", est.upper_constant());
        put(
            "energy_constant",
            energy_diagnostics(
                &disc,
                &[&triple.y, &triple.p[0], &triple.p[1]],
                &[&triple.h],
                &problem.y0,
            )
            .fitted_constant(),
        );
        put("s", w.s);
        put("lambda", w.lambda);
        Ok(LinearCase {
            disc,
            triple,
            metrics: m,
        })
    }

    fn linear_control(&self) -> Result<Outcome, HarnessError> {
        let st = &self.cfg.study;
        let factors: Vec<usize> = if st.refine {
            vec![1, st.refine_factor]
        } else {
            vec![1]
        };
        let cases = par_map(self.options.threads, &factors, |&r| self.linear_case(r));
        let cases = cases.into_iter().collect::<Result<Vec<_>, _>>()?;
        let base = &cases[0];
        let mut out = Outcome::new();
        for (k, v) in &base.metrics {
            out.metric(k, *v);
        }
        if let Some(fine) = cases.get(1) {
            for key in [
                "budget_constant",
                "estimate_lower_constant",
                "estimate_upper_constant",
                "terminal_norm",
            ] {
                out.metric(&format!("{key}_refined"), fine.metrics[key]);
                out.metric(
                    &format!("{key}_change"),
                    rel_change(base.metrics[key], fine.metrics[key]),
                );
            }
        }
        let mut t = Table::new(
            "budget",
            &[
                "factor",
                "intervals",
                "steps",
                "budget_total",
                "kappa0",
                "constant",
            ],
        );
        for (r, c) in factors.iter().zip(&cases) {
            t.push(vec![
                *r as f64,
                c.disc.grid.intervals() as f64,
                c.disc.mesh.steps() as f64,
                c.metrics["budget_total"],
                c.metrics["kappa0"],
                c.metrics["budget_constant"],
            ]);
        }
        out.tables.push(t);
        if st.write_fields {
            let tr = &base.triple;
            out.tables.push(field_table(
                "control_fields",
                &base.disc,
                &["y", "p1", "p2", "h"],
                &[&tr.y, &tr.p[0], &tr.p[1], &tr.h],
            ));
        }
        Ok(out)
    }

    fn nonlinear_control(&self) -> Result<Outcome, HarnessError> {
        let disc = self.disc(1)?;
        let f = self.f();
        let w = self.weights(&disc)?;
        let game = self.game(&disc, Some(&w))?;
        let newton = self.cfg.solver.newton();
        let scales = &self.cfg.study.amplitude_scales;
        let runs: Vec<Result<NonlinearOutcome, HarnessError>> =
            par_map(self.options.threads, scales, |&sc| {
                let y0 = self.initial(&disc, sc);
                solve_nonlinear_null_control(&disc, &game, &f, &w, &y0, newton)
                    .ctx("Newton iteration")
            });
        let mut out = Outcome::new();
        let mut hist = Table::new(
            "newton_history",
            &[
                "scale",
                "iteration",
                "residual",
                "tail",
                "budget",
                "terminal",
                "equilibrium_1",
                "equilibrium_2",
            ],
        );
        let mut primary = None;
        for (idx, (sc, run)) in scales.iter().zip(runs).enumerate() {
            let p = format!("scale{idx}_");
            out.metric(&format!("{p}factor"), *sc);
            out.metric(
                &format!("{p}radius"),
                h1a_norm(&disc, &self.initial(&disc, *sc)),
            );
            let run = match run {
                Ok(r) => r,
                Err(e) if idx == 0 => return Err(e),
                Err(e) => {
                    out.flag(&format!("{p}converged"), false);
                    out.notes.push(format!("scale {sc}: {e}"));
                    continue;
                }
            };
            out.flag(&format!("{p}converged"), run.converged());
            out.metric(&format!("{p}iterations"), run.iterations as f64);
            let (term, eq) = run
                .closed_loop
                .as_ref()
                .map_or((f64::INFINITY, f64::INFINITY), |c| {
                    (c.terminal, c.equilibrium[0].max(c.equilibrium[1]))
                });
            out.metric(&format!("{p}terminal"), term);
            out.metric(&format!("{p}equilibrium"), eq);
            if !run.converged() {
                out.notes.push(format!(
                    "scale {sc}: Newton {:?} after {} steps",
                    run.status, run.iterations
                ));
            }
            for s in &run.history {
                hist.push(vec![
                    *sc,
                    s.iteration as f64,
                    s.residual,
                    s.tail,
                    s.budget,
                    s.terminal,
                    s.equilibrium[0],
                    s.equilibrium[1],
                ]);
            }
            if idx == 0 {
                primary = Some(run);
            }
        }
        let run = primary.expect("primary scale ran");
        out.metric("newton_iterations", run.iterations as f64);
        out.flag("converged", run.converged());
        out.metric("radius", run.radius);
        out.metric(
            "newton_residual",
            run.history.last().map_or(f64::NAN, |s| s.residual),
        );
        match &run.closed_loop {
            Some(cl) => {
                out.metric("terminal_norm", cl.terminal);
                out.metric("equilibrium_residual_1", cl.equilibrium[0]);
                out.metric("equilibrium_residual_2", cl.equilibrium[1]);
            }
            None => out.metric("terminal_norm", f64::INFINITY),
        }
        out.metric(
            "initial_norm",
            disc.grid.norm(&self.initial(&disc, scales[0])),
        );
        out.metric("active_levels", w.active as f64);
        if !run.converged() {
            out.status = RunStatus::SolverFailure;
        }
        out.tables.push(hist);
        if self.cfg.study.write_fields {
            if let Some(cl) = &run.closed_loop {
                out.tables.push(field_table(
                    "closed_loop",
                    &disc,
                    &["y", "h", "v1", "v2"],
                    &[&cl.y, &run.h, &cl.v[0], &cl.v[1]],
                ));
            }
        }
        Ok(out)
    }

    fn diagnostics(&self) -> Result<Outcome, HarnessError> {
        let disc = self.disc(1)?;
        let w = self.weights(&disc)?;
        let mut out = Outcome::new();
        out.metric("s", w.s);
        out.metric("lambda", w.lambda);
        out.metric("lambda_min", w.lambda_min);
        out.metric("zeta0", w.zeta0());
        out.metric("identity_mismatch", w.identity_mismatch());
        out.metric("identity_log_mismatch", w.identity_log_mismatch());
        out.metric("active_levels", w.active as f64);
        out.metric("levels", w.levels() as f64);
        out.flag("comparison_holds", w.comparison_holds());
        let o = w.ordering();
        out.metric("ordering_rho1_over_rhohat", o.rho1_over_rhohat);
        out.metric("ordering_rhohat_over_rho0", o.rhohat_over_rho0);
        out.metric("ordering_rho0_over_rho2", o.rho0_over_rho2);
        out.metric("ordering_rho2_over_rho1_sq", o.rho2_over_rho1_sq);
        out.metric("psi_max", w.psi.max());
        out.metric("psi_min", w.psi.min());
        let beta = disc.gw.validate(&disc.deg, disc.grid.intervals());
        out.flag("beta_conditions_hold", beta.all_hold());
        out.metric("beta_raw_violation", beta.raw_violation);
        out.metric("beta_slope_bound", beta.slope_bound);
        out.metric("beta_clip_factor", beta.clip_factor.unwrap_or(f64::NAN));

        let mut t = Table::new(
            "weights",
            &[
                "t",
                "ln_tau",
                "ln_rho0",
                "ln_rho1",
                "ln_rho2",
                "ln_rhohat",
                "active",
            ],
        );
        for n in 0..w.levels() {
            t.push(vec![
                w.times[n],
                w.ln_tau[n],
                w.ln_rho0[n],
                w.ln_rho1[n],
                w.ln_rho2[n],
                w.ln_rhohat[n],
                if w.is_active(n) { 1.0 } else { 0.0 },
            ]);
        }
        out.tables.push(t);

        let st = &self.cfg.study;
        let factors: Vec<usize> = if st.refine {
            vec![1, st.refine_factor]
        } else {
            vec![1]
        };
        let cases = par_map(self.options.threads, &factors, |&r| self.linear_case(r));
        let cases = cases.into_iter().collect::<Result<Vec<_>, _>>()?;
        out.metric("energy_constant", cases[0].metrics["energy_constant"]);
        out.metric("budget_constant", cases[0].metrics["budget_constant"]);
        if let Some(fine) = cases.get(1) {
            out.metric("energy_constant_refined", fine.metrics["energy_constant"]);
            out.metric(
                "energy_constant_change",
                rel_change(
                    cases[0].metrics["energy_constant"],
                    fine.metrics["energy_constant"],
                ),
            );
        }
        Ok(out)
    }

    fn mms(&self) -> Result<Outcome, HarnessError> {
        let st = &self.cfg.study;
        let f = self.f();
        let interior = (st.mms_interior[0], st.mms_interior[1]);
        // (study, N, M): study 0 refines space at fixed M, study 1 refines time at fine N
        let mut jobs: Vec<(usize, usize, usize)> = st
            .mms_intervals
            .iter()
            .map(|&n| (0, n, st.mms_space_steps))
            .collect();
        jobs.extend(st.mms_steps.iter().map(|&m| (1, st.mms_time_intervals, m)));
        let errs = par_map(self.options.threads, &jobs, |&(study, n, m)| {
            let setup = ProblemSetup {
                intervals: n,
                steps: m,
                ..self.cfg.setup()
            };
            let disc = setup.build().ctx("grid")?;
            let sol = Manufactured {
                alpha: setup.alpha,
                profile: if study == 0 {
                    TimeProfile::Linear
                } else {
                    TimeProfile::Exponential
                },
            };
            mms_error(&disc, &f, &sol, interior, self.cfg.solver.step())
                .ctx("manufactured solution")
        });
        let mut t = Table::new(
            "mms",
            &[
                "study",
                "intervals",
                "steps",
                "h",
                "dt",
                "interior_l2",
                "l2",
                "max",
            ],
        );
        let (mut hs, mut es, mut dts, mut ets) = (vec![], vec![], vec![], vec![]);
        let horizon = self.cfg.geometry.horizon;
        for (&(study, n, m), e) in jobs.iter().zip(errs) {
            let e = e?;
            let (h, dt) = (1.0 / n as f64, horizon / m as f64);
            if study == 0 {
                hs.push(h);
                es.push(e.interior_l2);
            } else {
                dts.push(dt);
                ets.push(e.interior_l2);
            }
            t.push(vec![
                study as f64,
                n as f64,
                m as f64,
                h,
                dt,
                e.interior_l2,
                e.l2,
                e.max,
            ]);
        }
        let mut out = Outcome::new();
        out.metric("space_order", observed_order(&hs, &es));
        out.metric("time_order", observed_order(&dts, &ets));
        out.metric("finest_space_error", *es.last().unwrap_or(&f64::NAN));
        out.metric("finest_time_error", *ets.last().unwrap_or(&f64::NAN));
        out.tables.push(t);
        Ok(out)
    }
}

struct LinearCase {
    disc: Discretization,
    triple: ControlledTriple,
    metrics: BTreeMap<String, f64>,
}
