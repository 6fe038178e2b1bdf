use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not Hermitian (residue {residue:.3e} exceeds {tolerance:.3e})")]
    NotHermitian { residue: f64, tolerance: f64 },

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:.3e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("solver diverged at iteration {iteration}: objective is not finite")]
    Diverged { iteration: usize },

    #[error("ill-posed problem: {0}")]
    IllPosed(String),

    #[error("target SNR unreachable: {0}")]
    UnreachableSnr(String),

    #[error("exact enumeration too large: {outcomes} joint outcomes exceed limit {limit}")]
    EnumerationTooLarge { outcomes: f64, limit: usize },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("eigendecomposition failed")]
    EigenFailure,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors caused by bad user input rather than runtime failure.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::DimensionMismatch { .. }
                | Error::Json(_)
                | Error::EnumerationTooLarge { .. }
        )
    }
}
