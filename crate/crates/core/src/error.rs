use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SblError {
    #[error("invalid dimensions: {0}")]
    Dimension(String),

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),

    #[error("invalid options: {0}")]
    InvalidOptions(String),

    /// The block dictionary would exceed the configured element cap.
    #[error(
        "block dictionary of {rows}x{cols} exceeds the cap of {cap} elements; use T-MSBL instead"
    )]
    BlockDictionaryTooLarge {
        rows: usize,
        cols: usize,
        cap: usize,
    },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),

    #[error("{0} did not converge")]
    NotConverged(&'static str),

    #[error("all hyperparameters have been pruned")]
    AllPruned,

    /// Plain B estimate is singular; retry with the regularized rule.
    #[error("B estimate is singular under the plain rule")]
    SingularB,

    #[error("restricted system is inconsistent (residual {residual:e})")]
    Inconsistent { residual: f64 },

    #[error("invalid generator parameters: {0}")]
    Generator(String),

    #[error("malformed problem file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, SblError>;
