use crate::diagnostics::IterationRecord;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A structural precondition of an operation does not hold (weight order,
    /// prefix supports, positivity of perturbations).
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A runtime certificate failed inside a solve. The trace up to and
    /// including the failing iteration is attached.
    #[error("certificate failed at iteration {iteration}: {reason}")]
    CertifiedFailure {
        iteration: usize,
        reason: String,
        trace: Vec<IterationRecord>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn dims(what: &str, expected: (usize, usize), got: (usize, usize)) -> Self {
        Error::InvalidArgument(format!(
            "{what}: expected {}x{} matrix, got {}x{}",
            expected.0, expected.1, got.0, got.1
        ))
    }
}
