#![allow(dead_code)]

use hierctl_core::discretization::Discretization;
use hierctl_core::field::Field;
use hierctl_core::nash::{bump_targets, GameSpec};
use hierctl_core::setup::ProblemSetup;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

pub fn desk() -> Discretization {
    ProblemSetup::default().build().unwrap()
}

pub fn small(n: usize, m: usize) -> Discretization {
    ProblemSetup {
        intervals: n,
        steps: m,
        ..ProblemSetup::default()
    }
    .build()
    .unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

pub fn sine(disc: &Discretization, amp: f64) -> Vec<f64> {
    disc.grid
        .nodes()
        .iter()
        .map(|x| amp * (PI * x).sin())
        .collect()
}

/// Random interior values on every row.
pub fn random_field(disc: &Discretization, rng: &mut ChaCha8Rng) -> Field {
    let mut f = disc.zeros();
    let cols = f.cols();
    for k in 0..f.rows() {
        let row = f.row_mut(k);
        for v in &mut row[1..cols - 1] {
            *v = uniform(rng);
        }
    }
    f
}

pub fn game(disc: &Discretization, mu: f64, jacobian: bool) -> GameSpec {
    let profile = vec![1.0; disc.levels()];
    let targets = bump_targets(disc, 1e-3, &profile);
    GameSpec::new([1.0, 1.0], [mu, mu], targets, jacobian).unwrap()
}

/// A smooth leader control supported in the leader window.
pub fn leader_control(disc: &Discretization, amp: f64) -> Field {
    let w = disc.windows.leader;
    Field::from_fn(&disc.grid, &disc.mesh, |x, t| {
        if w.contains(x) {
            amp * (PI * (x - w.lo) / w.len()).sin() * (1.0 + t)
        } else {
            0.0
        }
    })
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}
