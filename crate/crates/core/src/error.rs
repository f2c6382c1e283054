use thiserror::Error;

use crate::lasso::LassoSolution;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate feature: {0}")]
    DegenerateFeature(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("variant not applicable: {0}")]
    Variant(String),

    #[error("rank deficient data: {0} (reduce the data with `rank_reduce` first)")]
    Rank(String),

    #[error("size budget exceeded: {0}")]
    Size(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("solver stopped after {iterations} iterations without meeting the convergence criteria")]
    NonConverged {
        iterations: usize,
        best: Box<LassoSolution>,
    },

    #[error("provenance mismatch: {0}")]
    Provenance(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
