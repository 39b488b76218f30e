use thiserror::Error;

/// Errors surfaced by the numerical layers.
#[derive(Debug, Error)]
pub enum SkError {
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("fixed point solver did not converge after {iterations} iterations (last residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("bisection bracket failure: {0}")]
    BracketFailure(String),

    #[error("Gram-Schmidt degenerate at step {step}: new magnetization lies in the span of previous directions (residual {residual:e})")]
    GramSchmidtDegenerate { step: usize, residual: f64 },

    #[error("gamma schedule degenerate at step {step}: q - Gamma^2 = {remainder:e} is negative beyond round-off")]
    ScheduleDegenerate { step: usize, remainder: f64 },

    #[error("power iteration did not reach residual {tol:e} after {iterations} iterations (achieved {achieved:e}); top eigenvalue may be degenerate")]
    SlowConvergence {
        iterations: usize,
        tol: f64,
        achieved: f64,
    },

    #[error("matrix is not symmetric: max |a_ij - a_ji| = {0:e}")]
    NotSymmetric(f64),

    #[error("no secular root: left side stays below 1 on the admissible interval")]
    NoSecularRoot,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, SkError>;
