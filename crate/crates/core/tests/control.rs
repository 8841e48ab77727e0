mod common;

use hierctl_core::carleman::{CarlemanParams, CarlemanWeights};
use hierctl_core::control::*;
use hierctl_core::discretization::Discretization;
use hierctl_core::nash::GameSpec;
use hierctl_core::nonlinearity::SemilinearF;
use hierctl_core::solvers::{LinearizedSystem, PicardOptions};
use hierctl_core::Error;

fn weights(disc: &Discretization) -> CarlemanWeights {
    CarlemanWeights::build(&CarlemanParams::default(), &disc.deg, &disc.mesh.times()).unwrap()
}

fn system(disc: &Discretization, f: &SemilinearF) -> (GameSpec, LinearizedSystem) {
    let game = common::game(disc, 1.0, true);
    let omega = game.omega(disc);
    let sys = LinearizedSystem::frozen(disc, f, game.alpha, game.mu, &omega);
    (game, sys)
}

/// Targets fade out before the weights saturate.
fn weighted_game(disc: &Discretization, w: &CarlemanWeights) -> GameSpec {
    let mut game = common::game(disc, 1.0, true);
    game.targets = hierctl_core::nash::bump_targets(disc, 1e-3, &target_time_profile(w));
    game
}

#[test]
fn linear_control_drives_state_to_rest() {
    let disc = common::desk();
    let f = SemilinearF::default();
    let (_, sys) = system(&disc, &f);
    let w = weights(&disc);
    let problem = LinearControlProblem::homogeneous(&disc, common::sine(&disc, 0.1));
    let lm = LaxMilgram::assemble(&disc, &sys, &w, LaxMilgramOptions::default()).unwrap();
    let triple = lm.solve(&disc, &w, &problem).unwrap();
    let y0n = disc.grid.norm(&problem.y0);
    assert!(triple.terminal_norm(&disc) <= 1e-3 * y0n);
    let check =
        verify_linear_control(&disc, &sys, &problem, &triple, PicardOptions::default()).unwrap();
    assert!(check.relative_terminal <= 1e-3, "{check:?}");
    assert!(triple.equation_residual(&disc, &sys, &problem) <= 1e-8);
    assert!(common::rel(triple.energy, triple.budget.total) <= 1e-8);
    assert!(common::rel(triple.kappa0, y0n * y0n) <= 1e-12);
    assert!(triple.constant().is_finite() && triple.constant() > 0.0);
    // h lives in the leader window on active levels
    let chi = disc.chi_leader();
    for k in 0..disc.levels() - 1 {
        for (j, v) in triple.h.row(k).iter().enumerate() {
            if chi[j] == 0.0 || k >= triple.active {
                assert_eq!(*v, 0.0);
            }
        }
    }
}

#[test]
fn control_map_is_linear() {
    let disc = common::desk();
    let f = SemilinearF::default();
    let (_, sys) = system(&disc, &f);
    let w = weights(&disc);
    let lm = LaxMilgram::assemble(&disc, &sys, &w, LaxMilgramOptions::default()).unwrap();
    let mut rng = common::rng(17);
    let a = hierctl_core::carleman::random_sine_series(disc.grid.nodes(), 6, &mut rng);
    let b = hierctl_core::carleman::random_sine_series(disc.grid.nodes(), 6, &mut rng);
    let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - 0.5 * y).collect();
    let solve = |y0: Vec<f64>| {
        lm.solve(&disc, &w, &LinearControlProblem::homogeneous(&disc, y0))
            .unwrap()
    };
    let (ta, tb, tab) = (solve(a), solve(b), solve(ab));
    let combo = ta.h.scaled(2.0).sub(&tb.h.scaled(0.5));
    assert!(tab.h.sub(&combo).max_abs() <= 1e-8 * tab.h.max_abs());
    let combo = ta.y.scaled(2.0).sub(&tb.y.scaled(0.5));
    assert!(tab.y.sub(&combo).max_abs() <= 1e-8 * tab.y.max_abs());
}

#[test]
fn sources_on_saturated_levels_have_infinite_budget() {
    let disc = common::small(32, 64);
    let f = SemilinearF::default();
    let (_, sys) = system(&disc, &f);
    let w = weights(&disc);
    let mut problem = LinearControlProblem::homogeneous(&disc, common::sine(&disc, 0.1));
    let k = w.active;
    problem.big_h.row_mut(k)[5] = 1.0;
    assert!(
        matches!(problem.kappa0(&disc, &w), Err(Error::InfiniteBudget { level }) if level == k)
    );
    let err = solve_linear_null_control(&disc, &sys, &w, &problem, LaxMilgramOptions::default())
        .unwrap_err();
    assert!(matches!(err, Error::InfiniteBudget { .. }));
}

#[test]
fn sources_on_active_levels_are_controlled() {
    let disc = common::small(32, 64);
    let f = SemilinearF::default();
    let (_, sys) = system(&disc, &f);
    let w = weights(&disc);
    let mut problem = LinearControlProblem::homogeneous(&disc, common::sine(&disc, 0.1));
    let mut rng = common::rng(2);
    let src = common::random_field(&disc, &mut rng);
    for k in 0..w.active / 2 {
        problem
            .big_h
            .row_mut(k)
            .copy_from_slice(&src.row(k).iter().map(|v| 1e-2 * v).collect::<Vec<_>>());
    }
    let triple =
        solve_linear_null_control(&disc, &sys, &w, &problem, LaxMilgramOptions::default()).unwrap();
    assert!(triple.equation_residual(&disc, &sys, &problem) <= 1e-8);
    let check =
        verify_linear_control(&disc, &sys, &problem, &triple, PicardOptions::default()).unwrap();
    assert!(check.relative_terminal <= 1e-3);
}

#[test]
fn zero_nonlinearity_converges_in_one_newton_step() {
    let disc = common::desk();
    let w = weights(&disc);
    let game = weighted_game(&disc, &w);
    let y0 = common::sine(&disc, 1e-2);
    let out = solve_nonlinear_null_control(
        &disc,
        &game,
        &SemilinearF::Zero,
        &w,
        &y0,
        NewtonOptions::default(),
    )
    .unwrap();
    assert!(out.converged());
    assert_eq!(out.iterations, 1);
    let cl = out.closed_loop.unwrap();
    assert!(cl.terminal <= 1e-6);
    assert!(cl.equilibrium.iter().all(|e| *e <= 1e-6));
}

#[test]
fn small_data_converges_for_sine_nonlinearity() {
    let disc = common::desk();
    let w = weights(&disc);
    let game = weighted_game(&disc, &w);
    let y0 = common::sine(&disc, 1e-2);
    let out = solve_nonlinear_null_control(
        &disc,
        &game,
        &SemilinearF::default(),
        &w,
        &y0,
        NewtonOptions::default(),
    )
    .unwrap();
    assert!(out.converged());
    assert!(out.iterations <= 10);
    assert!(out.radius > 0.0);
    assert!(out.clone().into_result().is_ok());
}

#[test]
fn h1a_norm_of_sine() {
    // ‖sin πx‖² + ∫ x^α π² cos² πx, the latter by a fine midpoint rule
    let disc = common::small(256, 4);
    let u = common::sine(&disc, 1.0);
    let alpha = disc.deg.alpha();
    let n = 200_000;
    let grad: f64 = (0..n)
        .map(|i| {
            let x = (i as f64 + 0.5) / n as f64;
            let c = std::f64::consts::PI * (std::f64::consts::PI * x).cos();
            x.powf(alpha) * c * c
        })
        .sum::<f64>()
        / n as f64;
    let exact = (0.5 + grad).sqrt();
    assert!(common::rel(h1a_norm(&disc, &u), exact) < 1e-3);
}
