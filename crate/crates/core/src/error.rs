use thiserror::Error;

/// Errors raised by the solver stack.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Invalid grid, preset, or experiment configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Two objects that must share a grid or a shape do not.
    #[error("structural error: {0}")]
    Structure(String),

    /// Conjugate gradient did not reach the requested tolerance.
    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    Solver { iterations: usize, residual: f64 },

    /// Singular Neumann problem with a right-hand side of nonzero mean.
    #[error("singular Neumann system is not solvable: right-hand side has mean {mean:.3e}")]
    Solvability { mean: f64 },

    /// The time stepper produced a state that violates positivity or finiteness.
    #[error("scheme error at t = {t}: {message}")]
    Scheme { t: f64, message: String },

    /// An internal consistency check failed; indicates a bug.
    #[error("invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, Error>;
