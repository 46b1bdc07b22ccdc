use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {field}: {message}")]
    InvalidInput { field: String, message: String },

    #[error("kernel not positive semidefinite: min eigenvalue {eigenvalue:.3e} below tolerance {tolerance:.3e}")]
    NotPsd { eigenvalue: f64, tolerance: f64 },

    #[error("conjugate gradient failed on block {block}: residual {residual:.3e} after {iterations} iterations")]
    CgDidNotConverge {
        block: usize,
        residual: f64,
        iterations: usize,
    },

    #[error("non-finite state at trajectory {path}, step {step}")]
    NonFinite { path: usize, step: usize },

    #[error("boundary clamping on {events} of {total} steps exceeds the 0.1% budget")]
    BoundaryExits { events: u64, total: u64 },

    #[error("fixed-point iteration diverging: distances {distances:?} grew more than 2x three times in a row")]
    Diverged { distances: Vec<f64> },

    #[error("malformed {what}: {message}")]
    Malformed { what: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidInput {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Process exit code for the CLI: 1 validation, 2 compute/io.
    /// (Comparison mismatches exit 3 but are not errors; see the runner.)
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput { .. } | Error::Malformed { .. } => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
