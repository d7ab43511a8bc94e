use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid dimensions: {0}")]
    InvalidDims(String),

    #[error("invalid mixture parameters: {0}")]
    InvalidParams(String),

    #[error("invalid index: {0}")]
    InvalidIndex(String),

    #[error("all component densities underflow for observation {row}")]
    Degenerate { row: usize },

    #[error("component {component} received no responsibility")]
    EmptyComponent { component: usize },

    #[error("covariance of component {component} is singular beyond the jitter cap")]
    SingularCovariance { component: usize },

    #[error("conditioning block of component {component} is singular")]
    Conditioning { component: usize },

    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("data generation failed: {0}")]
    Generation(String),

    #[error("{}: row {row}, column {column}: {message}", path.display())]
    Csv {
        path: PathBuf,
        row: usize,
        column: usize,
        message: String,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("vector length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input vector")]
    EmptyInput,

    #[error("secure sum {sum} does not fit modulus {modulus}")]
    SumOverflow { sum: f64, modulus: f64 },

    #[error("protocol desync: undelivered message {tag}")]
    ProtocolDesync { tag: String },

    #[error("party {party} dropped out during {round}")]
    PartyDropout { party: u32, round: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        match self {
            e @ Error::Iteration { .. } => e,
            e => Error::Iteration {
                iteration,
                source: Box::new(e),
            },
        }
    }

    /// Innermost error with iteration context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Iteration { source, .. } => source.root(),
            e => e,
        }
    }

    /// True for failures caused by the numbers rather than the inputs' shape.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            Error::Degenerate { .. }
                | Error::EmptyComponent { .. }
                | Error::SingularCovariance { .. }
                | Error::Conditioning { .. }
                | Error::SumOverflow { .. }
        )
    }
}
