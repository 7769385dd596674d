//! Error type shared by every module.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, QdgdError>;

#[derive(Debug, Error)]
pub enum QdgdError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no connected graph found after {attempts} draws (link probability too small for N)")]
    ConnectivityFailure { attempts: u32 },

    #[error("assumption violated: {0}")]
    AssumptionViolation(String),

    /// Mixing matrix is exact averaging (beta = 0).
    #[error("degenerate graph: mixing matrix is exact averaging (beta = 0)")]
    DegenerateGraph,

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("singular problem: smallest aggregate Hessian eigenvalue {min_eig:e} <= 1e-10")]
    SingularProblem { min_eig: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("iterates diverged at iteration {iter}")]
    DivergenceDetected { iter: usize },

    #[error("scheduler called out of order: expected iteration {expected}, got {got}")]
    OutOfOrderCall { expected: usize, got: usize },

    #[error("nothing to plot")]
    EmptyInput,

    #[error("trial {trial} failed: {source}")]
    Trial {
        trial: usize,
        #[source]
        source: Box<QdgdError>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl QdgdError {
    /// Whether the failure is numerical (as opposed to bad input or I/O).
    pub fn is_numerical(&self) -> bool {
        match self {
            QdgdError::NumericalFailure(_)
            | QdgdError::SingularProblem { .. }
            | QdgdError::DivergenceDetected { .. } => true,
            QdgdError::Trial { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    /// Process exit code used by the CLI: 2 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.is_numerical() {
            2
        } else {
            1
        }
    }
}
