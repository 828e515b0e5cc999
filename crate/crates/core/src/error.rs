use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A bed failed to settle within its step budget. Carries the residual
    /// mean kinetic energy per particle (J) at the time the budget ran out.
    #[error("build timeout: bed failed to settle, residual KE {residual_ke:.3e} J/particle")]
    BuildTimeout { residual_ke: f64 },

    #[error("solver diverged (non-finite update) at constraint block {row}")]
    SolverDiverged { row: usize },

    #[error("experiment fault: {0}")]
    ExperimentFault(String),

    #[error("invalid comparison: {0}")]
    InvalidComparison(String),

    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// Process exit code for the CLI: validation problems exit 2,
    /// experiment faults exit 3, everything else 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_) | Error::Config { .. } | Error::InvalidComparison(_) => 2,
            Error::ExperimentFault(_) | Error::BuildTimeout { .. } | Error::SolverDiverged { .. } => 3,
            _ => 1,
        }
    }
}
