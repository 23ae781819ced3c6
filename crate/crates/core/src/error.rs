use thiserror::Error;

/// Errors raised by the solver stack.
///
/// Floating-point payloads are carried as `f64` regardless of the scalar type
/// the failing computation ran in.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("spectrum outside the p-cone: worst p-sum {worst_sum:e}{}", point_suffix(*.point))]
    ConeViolation {
        worst_sum: f64,
        point: Option<usize>,
    },

    #[error("metric is not positive definite at grid point {point}")]
    Geometry { point: usize },

    #[error("linear solver failed: {0}")]
    LinearSolver(String),

    #[error("Newton damping underflow at iteration {iteration} (residual {residual:e})")]
    StepFailure { iteration: usize, residual: f64 },

    #[error("Newton did not converge in {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("continuation stalled at s = {last_s} (step {step:e} below minimum): {reason}")]
    ContinuationFailure {
        last_s: f64,
        step: f64,
        reason: String,
    },

    #[error("malformed field data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn point_suffix(point: Option<usize>) -> String {
    match point {
        Some(p) => format!(" at grid point {p}"),
        None => String::new(),
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
