use thiserror::Error;

/// Errors produced by kernel construction, MRL assembly and inference.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A hyperparameter or configuration value is outside its valid range.
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// The kernel family does not implement the requested operation.
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    /// A region's boundary covariance could not be inverted.
    #[error("singular boundary covariance ({0}); add jitter or change the region kernel")]
    Conditioning(String),
    /// Cholesky failed even at the largest jitter level.
    #[error("matrix factorization failed (n = {dim}, last jitter = {jitter:e})")]
    Numerical { dim: usize, jitter: f64 },
    /// Every Monte-Carlo sample produced a non-finite likelihood.
    #[error("inference failed: {0}")]
    Inference(String),
    /// Both apportionment variances are zero.
    #[error("degenerate model: {0}")]
    Degenerate(String),
    /// Malformed time series.
    #[error("invalid time series: {0}")]
    Data(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn param_err(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}
