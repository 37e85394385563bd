use thiserror::Error;

/// Errors raised by the simulation, geometry and estimation routines.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input (shapes, configs, flags).
    #[error("input error: {0}")]
    Input(String),

    /// Input lies outside the domain of a map (cut locus, non-SPD, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Rank-deficient or otherwise degenerate data.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    /// A solver produced a non-finite state.
    #[error("simulation diverged at step {step}")]
    Diverged { step: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) | Error::Unsupported(_) | Error::Io(_) | Error::Json(_) => 2,
            Error::Domain(_) | Error::Degenerate(_) | Error::Diverged { .. } => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
