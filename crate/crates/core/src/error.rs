use thiserror::Error;

/// Errors produced by the beamformer library.
///
/// The variants split into two families that the CLI maps onto distinct
/// exit codes: configuration problems (bad parameters, mismatched
/// dimensions, unknown names) and numerical failures (singular systems,
/// solver non-convergence).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("matrix is singular or near-singular at pivot {pivot} ({detail}); consider diagonal loading")]
    Singular { pivot: usize, detail: String },

    #[error("constraint directions are nearly collinear: {pairs:?}")]
    CollinearConstraints { pairs: Vec<(usize, usize)> },

    #[error("QP solver did not converge after {iterations} iterations (primal {primal_residual:.3e}, dual {dual_residual:.3e}, gap {gap:.3e})")]
    NonConvergence {
        iterations: usize,
        primal_residual: f64,
        dual_residual: f64,
        gap: f64,
        best: Option<Box<crate::qs_svm::QuadraticSurface>>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("no trained model for this configuration: {0}; run `train` first")]
    Untrained(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by the inputs rather than by the numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_)
                | Error::DimensionMismatch { .. }
                | Error::Untrained(_)
                | Error::Json(_)
                | Error::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidConfig(msg.into()))
}
