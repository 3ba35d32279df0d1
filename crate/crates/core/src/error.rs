use thiserror::Error;

/// Errors produced by the detection library.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid user-facing configuration: unknown names, inconsistent shapes,
    /// missing parameter files.
    #[error("configuration error: {0}")]
    Config(String),

    /// An argument violates an operation's precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// The instance is too large for an exact algorithm.
    #[error("capability exceeded: {0}")]
    Capability(String),

    /// A linear-algebra step failed (for example a singular covariance).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Training produced a non-finite loss.
    #[error("training error at frame {frame}: {message}")]
    Training { frame: usize, message: String },

    /// A parameter file could not be parsed or does not match the expected shape.
    #[error("parameter file error in field `{field}`: {message}")]
    Load { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn load(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Load {
            field: field.into(),
            message: message.into(),
        }
    }
}
