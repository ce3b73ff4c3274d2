//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A tensor or batch did not have the shape an operation requires.
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    /// Two models (or a model and a task vector) do not share an architecture.
    #[error("architecture mismatch: {0}")]
    DescriptorMismatch(String),

    /// Input is structurally valid but numerically degenerate (zero-norm
    /// vector, constant ground-truth scores, ...).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A support set carries no usable training signal (all scores tied).
    #[error("unpersonalizable input: {0}")]
    Unpersonalizable(String),

    /// An operation was called in the wrong order (e.g. a backward pass
    /// whose trace does not match, or an exhausted optimizer schedule).
    #[error("invalid state: {0}")]
    State(String),

    /// Configuration file or parameter error.
    #[error("config error: {0}")]
    Config(String),

    /// A required artifact (checkpoint, archive, run directory) is missing
    /// or inconsistent.
    #[error("dependency error: {0}")]
    Dependency(String),

    /// Non-finite values where finite ones are required (NaN loss, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Malformed persisted data.
    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(
        context: impl Into<String>,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// Process exit code for the CLI: 2 config, 3 dependency/IO, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::ShapeMismatch { .. } | Error::DescriptorMismatch(_) => 2,
            Error::Io(_) | Error::Dependency(_) | Error::Format(_) => 3,
            Error::Numerical(_)
            | Error::DegenerateInput(_)
            | Error::Unpersonalizable(_)
            | Error::State(_) => 4,
        }
    }
}
