use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid config at `{path}`: {reason}")]
    InvalidConfig { path: String, reason: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{what} = {value} outside [{lo}, {hi}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("non-informative posterior: posterior variance {posterior} >= prior variance {prior}")]
    NonInformativePosterior { posterior: f64, prior: f64 },

    #[error("{what} not supported for {users} users (limit {limit})")]
    TooManyUsers {
        what: &'static str,
        users: usize,
        limit: usize,
    },

    #[error("quadrature did not reach tolerance {tol:e} (estimated error {error:e} after {intervals} intervals)")]
    Quadrature { tol: f64, error: f64, intervals: usize },

    #[error("bisection did not converge after {0} iterations")]
    Bisection(usize),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
