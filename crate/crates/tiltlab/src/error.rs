//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by tiltlab operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A file does not follow its declared binary/text layout.
    #[error("format error: {0}")]
    Format(String),

    /// Two inputs that must agree (e.g. image and label counts) do not.
    #[error("inconsistent inputs: {0}")]
    Consistency(String),

    /// A caller-supplied value violates a precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A computation produced non-finite values.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Training loss became non-finite.
    #[error("training diverged at epoch {epoch}, step {step}: {message}")]
    Training {
        epoch: usize,
        step: usize,
        message: String,
    },

    /// Temperature calibration could not reach the target confidence.
    #[error("calibration failed: {0}")]
    Calibration(String),

    /// The input gradient vanished before the attack succeeded.
    #[error("masked gradient: {0}")]
    MaskedGradient(String),

    /// Data too degenerate for the requested operation (zero variance,
    /// zero projection, zero scale).
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

impl Error {
    /// Exit code for the CLI: 2 for usage/argument problems, 3 for
    /// runtime/numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_) | Error::Format(_) | Error::Consistency(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
