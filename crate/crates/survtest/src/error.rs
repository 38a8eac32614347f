use thiserror::Error;

/// Errors surfaced by data ingestion, the tests, and the numeric kernels.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{0}")]
    InvalidInput(String),

    #[error("no observable categories: test undefined")]
    NoObservableCategories,

    #[error("beta-quantile not attained: cumulative event fraction peaks at {max_fraction}")]
    BetaQuantileNotAttained { max_fraction: f64 },

    #[error("degenerate covariance; test not computable (rcond = {rcond:.3e})")]
    DegenerateCovariance { rcond: f64 },

    #[error("covariance operator estimate not non-negative (min eigenvalue {min_eigenvalue:.3e})")]
    GateFailed { min_eigenvalue: f64 },

    #[error("singular matrix (rcond = {rcond:.3e})")]
    Singular { rcond: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("eigensolver did not converge")]
    NoConvergence,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Whether this error is a test-level degeneracy (as opposed to bad input).
    /// The CLI maps degeneracies to exit code 3 and input problems to exit 2.
    pub fn is_degenerate(&self) -> bool {
        matches!(
            self,
            Error::DegenerateCovariance { .. } | Error::GateFailed { .. } | Error::Singular { .. }
        )
    }
}
