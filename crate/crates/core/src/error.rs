use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate cluster: {0}")]
    DegenerateCluster(&'static str),

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("neighborhood query needs at least two points")]
    EmptyNeighborhood,

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("non-finite loss ({0})")]
    NonFiniteLoss(String),

    #[error("parameter shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("point cloud carries no entity labels")]
    MissingLabels,

    #[error("invalid scene script: {0}")]
    InvalidScript(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("malformed container: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
