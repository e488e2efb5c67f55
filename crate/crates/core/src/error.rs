use thiserror::Error;

/// Errors raised by estimators, flows and IO.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty sample set: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate bandwidth: all pairwise distances are zero")]
    DegenerateBandwidth,

    #[error("degenerate neighbourhood at query {query}: kernel mass {mass:e} below floor")]
    DegenerateNeighborhood { query: usize, mass: f64 },

    #[error("rank-deficient local system at query {query}")]
    RankDeficient { query: usize },

    #[error("optimizer diverged at query {query}: non-finite objective")]
    OptimizerDiverged { query: usize },

    #[error("non-finite velocity field entry at row {row}, column {col}")]
    NonFiniteField { row: usize, col: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// True for errors caused by malformed input shapes or arguments rather
    /// than numerical failure. The CLI maps these to exit code 2.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch(_) | Error::InvalidArgument(_) | Error::Parse(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
