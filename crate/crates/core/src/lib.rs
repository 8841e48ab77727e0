//! Numerical core for hierarchical leader/follower control of a weakly
//! degenerate semilinear parabolic equation on a moving interval.
//!
//! The moving domain `(0, ℓ(t))` is mapped to the unit cylinder, where the
//! state equation reads
//!
//! ```text
//! y_t − b(t)(a(x) y_x)_x − B(t) x y_x + F(y, C(t) β(x) y_x) = h 1_O + v¹ 1_{O₁} + v² 1_{O₂}
//! ```
//!
//! Everything here is `no_std` (with `alloc`): file formats, configuration
//! and the command line live in the companion `hierctl` crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

mod math;

pub mod band;
pub mod carleman;
pub mod control;
pub mod discretization;
pub mod error;
pub mod field;
pub mod geometry;
pub mod mms;
pub mod nash;
pub mod nonlinearity;
pub mod setup;
pub mod solvers;

pub use error::{Error, Result};
