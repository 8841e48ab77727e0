use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("coordinate {x} is outside the admissible range")]
    Domain { x: f64 },
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter {
        name: &'static str,
        reason: &'static str,
    },
    #[error("invalid domain length ℓ(t) = {ell} at t = {t}")]
    InvalidDomain { t: f64, ell: f64 },
    #[error("sample point {x} lies outside (0, ℓ(t)) = (0, {ell})")]
    OutOfRange { x: f64, ell: f64 },
    #[error("windows violate the geometry rules: {0}")]
    Geometry(&'static str),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("singular tridiagonal system at row {row}")]
    Singular { row: usize },
    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("implicit step at time level {level} failed to converge (residual {residual:e})")]
    StepFailure { level: usize, residual: f64 },
    #[error("fixed-point sweep did not converge after {sweeps} sweeps (last distance {last:e})")]
    SweepDivergence { sweeps: usize, last: f64 },
    #[error("conjugate gradient stagnated: relative residual {residual:e} after {iterations} iterations")]
    Stagnation { iterations: usize, residual: f64 },
    #[error(
        "source is nonzero on a saturated time level {level}; the weighted budget is infinite"
    )]
    InfiniteBudget { level: usize },
    #[error("Newton iteration diverged at step {iteration} (residual {residual:e}); try a smaller initial state")]
    NewtonDivergence { iteration: usize, residual: f64 },
    #[error("Newton iteration stalled after {iterations} steps (residual {residual:e}); try a smaller initial state")]
    NewtonStagnation { iterations: usize, residual: f64 },
}
