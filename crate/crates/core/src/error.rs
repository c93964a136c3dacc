use thiserror::Error;

/// Errors raised by estimation, evaluation and simulation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("numeric range exceeded: {0}")]
    NumericRange(String),

    #[error("empty domain: {0}")]
    EmptyDomain(&'static str),

    #[error("all source labels are identical; the unpenalized logistic MLE does not exist")]
    DegenerateLabels,

    #[error("design matrix is rank deficient; add a ridge penalty or drop collinear columns")]
    SingularSystem,

    #[error("{what} did not converge after {iterations} iterations (gradient max-norm {gradient_norm:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        gradient_norm: f64,
    },

    #[error("one class is absent: mean target posterior is {0}")]
    DegenerateClass(f64),

    #[error("cell {0} has zero probability; the tilt is undefined")]
    ZeroCell(usize),

    #[error("{failures} of {total} bootstrap replicates failed (limit is one tenth)")]
    TooManyFailures { failures: usize, total: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
