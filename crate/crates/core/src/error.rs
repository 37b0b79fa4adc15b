use thiserror::Error;

/// Errors raised by quiver, vortex and geometry operations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unknown vertex `{0}`")]
    UnknownVertex(String),
    #[error("unknown arrow `{0}`")]
    UnknownArrow(String),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty space at vertex `{0}` along path")]
    EmptySpace(String),
    #[error("path is not composable at position {0}")]
    NotComposable(usize),
    #[error("relation terms disagree on endpoints: {0}")]
    MixedEndpoints(String),
    #[error("invalid relation: {0}")]
    InvalidRelation(String),
    #[error("zero total rank")]
    ZeroRank,
    #[error("metric at vertex `{0}` is not Hermitian positive definite")]
    NotPositiveDefinite(String),
    #[error("missing metric for vertex `{0}`")]
    MissingMetric(String),
    #[error("degree mismatch: {0}")]
    DegreeMismatch(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("obstructed: {0}")]
    Obstructed(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
