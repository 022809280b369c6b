use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes that cannot be combined (ragged rows, mismatched ambient
    /// dimension, projector applied to the wrong space).
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Matrix columns that are (numerically) linearly dependent.
    #[error("rank-deficient matrix: {0}")]
    Rank(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    /// Exact solvers are only offered below a hard size cap.
    #[error("instance too large for exact solver: {0}")]
    SizeLimit(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Non-finite objective or projector during stochastic training.
    #[error("training diverged at iteration {iteration}")]
    Divergence { iteration: usize },

    /// Data on which the requested quantity is undefined (all-identical
    /// points, zero variance, ...).
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
