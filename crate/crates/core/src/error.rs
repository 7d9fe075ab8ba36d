use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("node index {index} out of range for a graph with {n} nodes")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("no connected graph after {0} attempts; edge probability is too small for this node count")]
    MaxRetriesExceeded(usize),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("von Mises-Fisher potential is undefined for a zero feature vector")]
    ZeroVector,

    #[error("unsupported polynomial degree {0} (supported: 1, 2)")]
    UnsupportedDegree(usize),

    #[error("tensor feature dimension {0} exceeds the limit of {1}")]
    TensorTooLarge(usize, usize),

    #[error("the {0} form has no action-affine structure and cannot be used for planning")]
    NotControllable(&'static str),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}
