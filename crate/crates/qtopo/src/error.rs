use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("matrix is rank deficient (smallest singular value {0:e})")]
    RankDeficient(f64),
    #[error("unitaries do not commute (commutator norm {0:e})")]
    NotCommuting(f64),
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("invalid povm: {0}")]
    InvalidPovm(String),
    #[error("out of regime: {0}")]
    OutOfRegime(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("vertices {0} and {1} are not connected by a walk of length {2}")]
    UnreachablePair(usize, usize, usize),
    #[error("generation failed: {0}")]
    GenerationFailure(String),
    #[error("grid too coarse: chern residual {0:.3}")]
    GridTooCoarse(f64),
    #[error("too large: {0}")]
    TooLarge(String),
    #[error("dilation failed: {0}")]
    DilationFailure(String),
    #[error("constant function skipped")]
    SkippedConstant,
    #[error("linear algebra backend: {0}")]
    Backend(String),
}

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Backend(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
