use thiserror::Error;

/// Errors raised by the simulation, learning and persistence layers.
#[derive(Debug, Error)]
pub enum Error {
    /// The dynamics were evaluated outside their domain (polar singularity,
    /// vanishing speed).
    #[error("dynamics domain error: {0}")]
    Domain(String),

    /// A computation produced NaN or infinity.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Configuration could not be parsed or failed validation. `field` names
    /// the offending key path.
    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn non_finite(context: impl Into<String>) -> Self {
        Error::NonFinite {
            context: context.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
