use thiserror::Error;

/// Crate-wide error type.
///
/// Variants map onto the CLI exit codes: config errors exit 2, data-format
/// errors exit 3, numerical failures exit 4.
#[derive(Error, Debug)]
pub enum AdlError {
    #[error("config error: {0}")]
    Config(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl AdlError {
    pub fn format(offset: u64, message: impl Into<String>) -> Self {
        AdlError::Format {
            offset,
            message: message.into(),
        }
    }

    /// Process exit code for scripted sweeps.
    pub fn exit_code(&self) -> i32 {
        match self {
            AdlError::Config(_) | AdlError::InvalidArgument(_) => 2,
            AdlError::Format { .. } | AdlError::Io(_) => 3,
            AdlError::Numerical(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, AdlError>;
