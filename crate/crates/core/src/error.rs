use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A derivative was requested from a loss that does not have one.
    #[error("{loss} loss has no {order} derivative ({smoothness:?})")]
    Capability {
        loss: String,
        order: &'static str,
        smoothness: crate::loss::Smoothness,
    },

    /// An integrand produced NaN or an infinite value at a quadrature node or sample.
    #[error("non-finite integrand at g={g}, s={s}, y={y}")]
    NonFinite { g: f64, s: f64, y: f64 },

    /// The fixed-point iteration ran out of iterations.
    #[error("fixed-point iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    Diverged {
        iterations: usize,
        residual: f64,
        /// `(mu, alpha, lambda)` after each iteration.
        trajectory: Vec<[f64; 3]>,
    },

    /// The solution escapes to infinity (or collapses to zero).
    #[error("unbounded solution: {0}")]
    Unbounded(String),

    /// A root or minimum could not be bracketed.
    #[error("bracketing failure: {0}")]
    Bracket(String),

    /// Internal numerical failure that should not happen for valid inputs.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// The saddle-point optimizer used as an independent oracle failed.
    #[error("saddle oracle failure: {0}")]
    Oracle(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
