use thiserror::Error;

/// Errors surfaced by the solver and its supporting operations.
#[derive(Debug, Error)]
pub enum TvicError {
    #[error("shape mismatch: {0} is {1}x{2}, {3} is {4}x{5}")]
    ShapeMismatch(&'static str, usize, usize, &'static str, usize, usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("linear solver breakdown: {0}")]
    LinearSolver(String),

    #[error("non-finite iterate: {0}")]
    NonFinite(String),
}

impl TvicError {
    pub(crate) fn shape(
        a: &'static str,
        (ar, ac): (usize, usize),
        b: &'static str,
        (br, bc): (usize, usize),
    ) -> Self {
        TvicError::ShapeMismatch(a, ar, ac, b, br, bc)
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        TvicError::InvalidParameter(msg.into())
    }
}
