use thiserror::Error;

use gmmot_core::Error as CoreError;

/// Failures surfaced to the user. Each variant owns one process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable or malformed input, bad flag values.
    #[error("{0}")]
    Input(String),

    /// Inputs whose shapes do not fit together.
    #[error("{0}")]
    Shape(String),

    #[error("{0}")]
    Numerical(String),

    /// A request that would exceed a hard size limit.
    #[error("{0}")]
    Guard(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Shape(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Guard(_) => 5,
        }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        CliError::Shape(msg.into())
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::InvalidInput(_) | CoreError::NotPsd { .. } => CliError::Input(msg),
            CoreError::DimensionMismatch { .. } => CliError::Shape(msg),
            CoreError::Numerical(_) => CliError::Numerical(msg),
            CoreError::ResourceLimit(_) => CliError::Guard(msg),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
