use hierctl_core::carleman::{CarlemanParams, CarlemanWeights, SChoice};
use hierctl_core::discretization::{assemble_stiffness, DriftRule};
use hierctl_core::field::{Field, SpatialGrid};
use hierctl_core::geometry::{ControlGeometry, Degeneracy, GradientWeight, LengthLaw, Window};
use hierctl_core::nonlinearity::SemilinearF;
use hierctl_core::setup::ProblemSetup;
use hierctl_core::solvers::LinearOps;
use proptest::prelude::*;

fn cfg() -> ProptestConfig {
    ProptestConfig {
        cases: 48,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(cfg())]

    #[test]
    fn stiffness_is_symmetric_and_nonpositive(
        n in 4usize..40,
        grading in 1.0f64..3.0,
        alpha in 0.05f64..0.95,
        u in prop::collection::vec(-1.0f64..1.0, 40),
    ) {
        let grid = SpatialGrid::graded(n, grading).unwrap();
        let s = assemble_stiffness(&grid, |x| x.powf(alpha), 1.0).symmetric;
        let m = s.len();
        for i in 1..m {
            prop_assert!((s.lower[i] - s.upper[i - 1]).abs() <= 1e-12 * s.diag[i].abs().max(1.0));
        }
        let v = &u[..m];
        let sv = s.apply(v);
        let q: f64 = v.iter().zip(&sv).map(|(a, b)| a * b).sum();
        prop_assert!(q <= 1e-12);
    }

    #[test]
    fn adjoint_operators_satisfy_the_mass_pairing(
        alpha in 0.05f64..0.95,
        seed in any::<u64>(),
    ) {
        let disc = ProblemSetup { intervals: 24, steps: 8, alpha, ..ProblemSetup::default() }.build().unwrap();
        let ops = LinearOps::frozen(&disc, &SemilinearF::default());
        let m = disc.interior();
        let mut state = seed;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let x: Vec<f64> = (0..m).map(|_| next()).collect();
        let y: Vec<f64> = (0..m).map(|_| next()).collect();
        let w = disc.mass();
        let ip = |a: &[f64], b: &[f64]| a.iter().zip(b).zip(w).map(|((a, b), w)| a * b * w).sum::<f64>();
        for n in [1usize, 4, 8] {
            let jx = ops.forward[n].apply(&x);
            let jsy = ops.adjoint[n].apply(&y);
            let (l, r) = (ip(&jx, &y), ip(&x, &jsy));
            prop_assert!((l - r).abs() <= 1e-10 * (l.abs() + r.abs()).max(1.0));
        }
    }

    #[test]
    fn beta_conditions_hold_when_clipped(alpha in 0.05f64..0.95, b_exp in 1.01f64..4.0) {
        let deg = Degeneracy::new(alpha).unwrap();
        let gw = GradientWeight::new(b_exp, &deg, true).unwrap();
        let rep = gw.validate(&deg, 2000);
        prop_assert!(rep.all_hold(), "{rep:?}");
        prop_assert!(rep.slope_bound.is_finite());
    }

    #[test]
    fn followers_meeting_the_leader_are_rejected(lo in 0.0f64..0.5, len in 0.05f64..0.4, shift in -0.3f64..0.3) {
        let leader = Window::new(lo, lo + len).unwrap();
        let f_lo = (lo + shift).max(0.0);
        let f_hi = (f_lo + 0.1).min(1.0);
        let follower = Window::new(f_lo, f_hi).unwrap();
        let far = Window::new(0.95, 0.99).unwrap();
        let res = ControlGeometry::new(leader, [follower, far], leader);
        let meets = f_lo < leader.hi && leader.lo < f_hi;
        prop_assert_eq!(res.is_err(), meets || far.overlap(&leader) > 0.0);
    }

    #[test]
    fn forward_map_is_linear_for_affine_f(c1 in -2.0f64..2.0, c2 in -2.0f64..2.0, a in -3.0f64..3.0, seed in any::<u64>()) {
        let disc = ProblemSetup { intervals: 16, steps: 12, ..ProblemSetup::default() }.build().unwrap();
        let ops = LinearOps::frozen(&disc, &SemilinearF::Linear { c1, c2 });
        let state = std::cell::Cell::new(seed);
        let field = || {
            Field::from_fn(&disc.grid, &disc.mesh, |x, t| {
                state.set(state.get().wrapping_mul(6364136223846793005).wrapping_add(1));
                ((state.get() >> 33) as f64 / (1u64 << 31) as f64 - 0.5) * (1.0 + x + t)
            })
        };
        let (g1, g2) = (field(), field());
        let init = g1.row(3).to_vec();
        let w1 = ops.forward(&init, Some(&g1)).unwrap();
        let w2 = ops.forward(&vec![0.0; init.len()], Some(&g2)).unwrap();
        let mut combo = g1.scaled(a);
        combo.axpy(1.0, &g2);
        let init_a: Vec<f64> = init.iter().map(|v| a * v).collect();
        let w = ops.forward(&init_a, Some(&combo)).unwrap();
        let mut expect = w1.scaled(a);
        expect.axpy(1.0, &w2);
        prop_assert!(w.sub(&expect).max_abs() <= 1e-10 * (1.0 + expect.max_abs()));
    }

    #[test]
    fn rho_identity_for_random_parameters(
        alpha in 0.1f64..0.9,
        margin in 0.01f64..1.0,
        s in prop::option::of(1e-4f64..1e-1),
        steps in 16usize..200,
    ) {
        let deg = Degeneracy::new(alpha).unwrap();
        let times: Vec<f64> = (0..=steps).map(|n| n as f64 / steps as f64).collect();
        let params = CarlemanParams {
            s: s.map_or(SChoice::Auto { kappa: 2.0 }, SChoice::Fixed),
            lambda_margin: margin,
            ..CarlemanParams::default()
        };
        let w = CarlemanWeights::build(&params, &deg, &times).unwrap();
        prop_assert!(w.identity_mismatch() <= 1e-12);
        prop_assert!(w.identity_log_mismatch() <= 1e-14);
        prop_assert!(w.ordering().all_finite());
        prop_assert!(w.comparison_holds());
    }

    #[test]
    fn pullback_inverts_pushforward(k in -0.5f64..1.0, t in 0.0f64..1.0, x in 0.0f64..1.0) {
        let dom = hierctl_core::geometry::MovingDomain::new(LengthLaw::Affine { l0: 1.0, k }, 1.0).unwrap();
        let y = dom.pushforward_points(t, &[x]).unwrap();
        let back = dom.pullback_points(t, &y).unwrap();
        prop_assert!((back[0] - x).abs() <= 1e-14);
    }

    #[test]
    fn upwind_drift_is_an_m_matrix_row(c in -5.0f64..5.0) {
        let grid = SpatialGrid::graded(12, 2.0).unwrap();
        let d = hierctl_core::discretization::assemble_drift(&grid, |_| c, DriftRule::Upwind).interior();
        for i in 0..d.len() {
            prop_assert!(d.diag[i] >= 0.0);
            prop_assert!(d.lower[i] <= 0.0 && d.upper[i] <= 0.0);
        }
    }
}
