use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the library. Variants map onto the failure classes the
/// CLI reports: input/format/generation problems are data errors, while
/// numeric and training failures indicate a diverging computation.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation precondition (shape mismatch,
    /// out-of-range argument, inconsistent ids).
    #[error("invalid input: {0}")]
    Input(String),

    /// A file could not be parsed, failed validation, or carries an
    /// unsupported version tag.
    #[error("format error: {0}")]
    Format(String),

    /// A computation produced a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at iteration {iteration}: {message}")]
    Training { iteration: usize, message: String },

    /// Scenario generation could not satisfy its constraints.
    #[error("generation failed: {0}")]
    Generation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn generation(msg: impl Into<String>) -> Self {
        Error::Generation(msg.into())
    }
}
