use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A training run produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },

    #[error("symmetric eigendecomposition failed: {0}")]
    Eigen(String),

    /// Quadrature produced a non-finite value; the message carries the state.
    #[error("non-finite energetic potential: {0}")]
    NonFinite(String),

    #[error("generalization error argument {0} lies outside [-1, 1]")]
    OutOfDomain(f64),

    #[error("container {path}: {reason}")]
    Container { path: PathBuf, reason: String },

    #[error("IDX magic mismatch in {path}: expected {expected:#010x}, found {found:#010x}")]
    IdxMagic { path: PathBuf, expected: u32, found: u32 },

    #[error("IDX file {path} is truncated: needed {needed} bytes, found {found}")]
    IdxTruncated { path: PathBuf, needed: u64, found: u64 },

    #[error("IDX count mismatch: {images} images but {labels} labels")]
    IdxCountMismatch { images: usize, labels: usize },

    #[error("label rule left no rows ({dropped} dropped)")]
    EmptyAfterFilter { dropped: usize },

    /// A shared intermediate (source network, covariance estimate) failed earlier.
    #[error("upstream step failed: {0}")]
    Upstream(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("image encoding: {0}")]
    Image(#[from] image::ImageError),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
