use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Input failed a structural precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// Feature dimensions disagree.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Degenerate input that has a unique trivial answer.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Training produced a non-finite loss or gradient.
    #[error("training diverged at step {step}: {detail}")]
    Training { step: usize, detail: String },

    /// A pipeline or experiment descriptor is unusable.
    #[error("configuration error: {0}")]
    Config(String),

    /// Accounting requested for a mechanism that adds no noise.
    #[error("mechanism is non-private: {0}")]
    NonPrivate(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialize(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
