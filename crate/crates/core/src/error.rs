use thiserror::Error;

/// Errors raised by the library.
///
/// `Domain`, `Input` and `Dataset` describe bad arguments or data and map to
/// exit code 2 in the command-line tool; the numerical variants map to 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("line {line}: {message}")]
    Dataset { line: usize, message: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("information matrix is singular or ill-conditioned (condition estimate {condition:.3e})")]
    SingularInformation { condition: f64 },
}

impl Error {
    /// True for failures caused by the caller's data or arguments rather than
    /// by the numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(self, Error::Domain(_) | Error::Input(_) | Error::Dataset { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}
