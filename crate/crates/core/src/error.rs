use thiserror::Error;

use crate::conic::SolveStatus;

pub type Result<T, E = CobrasError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CobrasError {
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The geometry does not support the requested (gridless) path.
    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("solver finished with status {status:?} (primal {primal_residual:.2e}, dual {dual_residual:.2e}, gap {gap:.2e})")]
    Solver {
        status: SolveStatus,
        primal_residual: f64,
        dual_residual: f64,
        gap: f64,
    },

    /// The first entry of the dominant left singular vector vanishes, so the
    /// shift vector cannot be normalised.
    #[error("degenerate shift normalisation: |u_1| = {0:.3e}")]
    DegenerateShift(f64),

    #[error("linear algebra failure: {0}")]
    Numerical(String),

    #[error("scenario aborted: {failures} of {trials} trials failed")]
    Aborted { failures: usize, trials: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
