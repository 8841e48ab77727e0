mod common;

use hierctl_core::discretization::Discretization;
use hierctl_core::field::Field;
use hierctl_core::nash::*;
use hierctl_core::nonlinearity::SemilinearF;
use hierctl_core::solvers::{solve_forward_controlled, StepOptions};

fn functional(
    disc: &Discretization,
    game: &GameSpec,
    f: &SemilinearF,
    i: usize,
    y0: &[f64],
    h: &Field,
    v: [&Field; 2],
) -> f64 {
    let y = solve_forward_controlled(disc, f, y0, h, v[0], v[1], StepOptions::default()).unwrap();
    evaluate_functional(disc, game, i, &y, v[i])
}

fn shifted(v: &[Field; 2], i: usize, d: &Field, t: f64) -> [Field; 2] {
    let mut out = v.clone();
    out[i].axpy(t, d);
    out
}

struct Case {
    disc: Discretization,
    game: GameSpec,
    f: SemilinearF,
    y0: Vec<f64>,
    h: Field,
}

fn case(f: SemilinearF) -> Case {
    let disc = common::desk();
    let game = common::game(&disc, 1.0, true);
    let y0 = common::sine(&disc, 0.1);
    let h = common::leader_control(&disc, 0.5);
    Case {
        disc,
        game,
        f,
        y0,
        h,
    }
}

#[test]
fn quasi_equilibrium_residual_is_small() {
    let c = case(SemilinearF::default());
    let sol =
        nash_fixed_point(&c.disc, &c.game, &c.f, &c.h, &c.y0, NashOptions::default()).unwrap();
    for r in sol.residuals {
        assert!(r <= 1e-6, "{r}");
    }
    // the gradient at the equilibrium vanishes on O_i
    for i in 0..2 {
        let g = functional_gradient(
            &c.disc,
            &c.game,
            &c.f,
            i,
            &c.y0,
            &c.h,
            [&sol.v[0], &sol.v[1]],
            StepOptions::default(),
        )
        .unwrap();
        assert!(control_norm(&c.disc, i, &g) <= 1e-6 * (1.0 + control_norm(&c.disc, i, &sol.v[i])));
    }
}

#[test]
fn adjoint_gradient_matches_central_differences() {
    let c = case(SemilinearF::default());
    let sol =
        nash_fixed_point(&c.disc, &c.game, &c.f, &c.h, &c.y0, NashOptions::default()).unwrap();
    // perturb away from the equilibrium so the gradient is not zero
    let mut rng = common::rng(21);
    let base = [
        sol.v[0].add(&random_probes(&c.disc, 0, 1, &mut rng)[0].scaled(0.05)),
        sol.v[1].add(&random_probes(&c.disc, 1, 1, &mut rng)[0].scaled(0.05)),
    ];
    for i in 0..2 {
        let g = functional_gradient(
            &c.disc,
            &c.game,
            &c.f,
            i,
            &c.y0,
            &c.h,
            [&base[0], &base[1]],
            StepOptions::default(),
        )
        .unwrap();
        for d in random_probes(&c.disc, i, 3, &mut rng) {
            let eps = 1e-4;
            let p = shifted(&base, i, &d, eps);
            let m = shifted(&base, i, &d, -eps);
            let jp = functional(&c.disc, &c.game, &c.f, i, &c.y0, &c.h, [&p[0], &p[1]]);
            let jm = functional(&c.disc, &c.game, &c.f, i, &c.y0, &c.h, [&m[0], &m[1]]);
            let fd = (jp - jm) / (2.0 * eps);
            let an = control_inner(&c.disc, i, &g, &d);
            assert!(
                common::rel(fd, an) <= 1e-5,
                "follower {i}: fd {fd} adjoint {an}"
            );
        }
    }
}

#[test]
fn linear_functional_is_an_exact_parabola() {
    let c = case(SemilinearF::Zero);
    let mut rng = common::rng(9);
    let v = [
        random_probes(&c.disc, 0, 1, &mut rng).remove(0),
        random_probes(&c.disc, 1, 1, &mut rng).remove(0),
    ];
    for i in 0..2 {
        let d = random_probes(&c.disc, i, 1, &mut rng).remove(0);
        let j = |t: f64| {
            let w = shifted(&v, i, &d, t);
            functional(&c.disc, &c.game, &c.f, i, &c.y0, &c.h, [&w[0], &w[1]])
        };
        // Lagrange interpolant through t = −1, 0, 1
        let (jm, j0, jp) = (j(-1.0), j(0.0), j(1.0));
        let a = 0.5 * (jp + jm) - j0;
        let b = 0.5 * (jp - jm);
        for t in [-3.0, -0.5, 0.25, 2.0, 4.0] {
            let q = a * t * t + b * t + j0;
            assert!(common::rel(j(t), q) <= 1e-10, "t={t}");
        }
        assert!(a > 0.0);
    }
}

#[test]
fn hessian_form_matches_gradient_differences() {
    let c = case(SemilinearF::default());
    let sol =
        nash_fixed_point(&c.disc, &c.game, &c.f, &c.h, &c.y0, NashOptions::default()).unwrap();
    let mut rng = common::rng(4);
    for i in 0..2 {
        let state = SecondOrderState {
            y: &sol.y,
            p: &sol.p[i],
        };
        let dirs = random_probes(&c.disc, i, 2, &mut rng);
        let (a, b) = (&dirs[0], &dirs[1]);
        let eps = 1e-3;
        let grad = |t: f64| {
            let w = shifted(&sol.v, i, b, t);
            functional_gradient(
                &c.disc,
                &c.game,
                &c.f,
                i,
                &c.y0,
                &c.h,
                [&w[0], &w[1]],
                StepOptions::default(),
            )
            .unwrap()
        };
        let fd = control_inner(&c.disc, i, &grad(eps).sub(&grad(-eps)), a) / (2.0 * eps);
        let form = second_derivative_bilinear(&c.disc, &c.game, &c.f, i, &state, a, b).unwrap();
        assert!(
            common::rel(fd, form) <= 1e-3,
            "follower {i}: fd {fd} form {form}"
        );
        let ha = hessian_apply(&c.disc, &c.game, &c.f, i, &state, a).unwrap();
        let hb = hessian_apply(&c.disc, &c.game, &c.f, i, &state, b).unwrap();
        let (ab, ba) = (
            control_inner(&c.disc, i, &ha, b),
            control_inner(&c.disc, i, &hb, a),
        );
        assert!(common::rel(ab, ba) <= 1e-3);
    }
}

#[test]
fn linear_margin_is_at_least_mu() {
    let c = case(SemilinearF::Zero);
    for mu in [0.1, 1.0, 5.0] {
        let mut game = c.game.clone();
        game.mu = [mu, mu];
        let sol =
            nash_fixed_point(&c.disc, &game, &c.f, &c.h, &c.y0, NashOptions::default()).unwrap();
        let mut rng = common::rng(13);
        for i in 0..2 {
            let probes = random_probes(&c.disc, i, 6, &mut rng);
            let rep = convexity_margin(&c.disc, &game, &c.f, i, &sol, &probes).unwrap();
            assert!(rep.certified);
            assert!(rep.margin >= mu * (1.0 - 1e-12), "mu {mu}: {}", rep.margin);
        }
    }
}

#[test]
fn certificate_holds_above_fitted_threshold() {
    let disc = common::small(32, 64);
    let f = SemilinearF::Sine { k1: 4.0, k2: 4.0 };
    let mut game = common::game(&disc, 1.0, true);
    game.alpha = [50.0, 50.0];
    let y0 = common::sine(&disc, 2.0);
    let h = common::leader_control(&disc, 0.5);
    let mut rng = common::rng(5);
    let probes = random_probes(&disc, 0, 8, &mut rng);
    let opts = NashOptions::default();
    let th =
        convexity_threshold(&disc, &game, &f, &h, &y0, &probes, (1e-4, 1e2), 12, opts).unwrap();
    let mu_star = th.mu_star.expect("upper bracket certified");
    assert!(mu_star > 1e-4, "threshold should be interior");
    assert!(th.trials.iter().any(|t| !t.certified));
    for factor in [1.5, 4.0, 20.0] {
        let mut g = game.clone();
        g.mu = [factor * mu_star, factor * mu_star];
        let sol = nash_fixed_point(&disc, &g, &f, &h, &y0, opts).unwrap();
        for i in 0..2 {
            let probes = random_probes(&disc, i, 8, &mut rng);
            assert!(
                convexity_margin(&disc, &g, &f, i, &sol, &probes)
                    .unwrap()
                    .certified
            );
        }
    }
}

#[test]
fn game_spec_rejects_bad_weights() {
    let disc = common::small(16, 16);
    let t = || [disc.zeros(), disc.zeros()];
    assert!(GameSpec::new([1.0, 1.0], [0.0, 1.0], t(), false).is_err());
    assert!(GameSpec::new([-1.0, 1.0], [1.0, 1.0], t(), false).is_err());
    assert!(GameSpec::new([1.0, f64::NAN], [1.0, 1.0], t(), false).is_err());
    assert!(GameSpec::new([0.0, 1.0], [1.0, 1.0], t(), true).is_ok());
}
