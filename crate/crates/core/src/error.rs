use thiserror::Error;

/// Everything that can go wrong inside the solver toolkit.
///
/// The variants are grouped so that front ends can map them onto a small
/// number of exit categories (see [`Error::category`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("precondition violated at block row {row}: {msg}")]
    Precondition { row: usize, msg: String },

    #[error("singular pivot: {0}")]
    Singular(String),

    #[error("size limit exceeded: {what} is {size}, limit {limit}")]
    SizeLimit {
        what: &'static str,
        size: usize,
        limit: usize,
    },

    #[error("randomized routine failed after {iterations} rounds: {msg}")]
    IterationCap { iterations: usize, msg: String },

    #[error("certification failed: {0}")]
    Certification(String),

    #[error("iteration diverged after {iterations} steps (last relative residual {last:e})")]
    Divergence {
        iterations: usize,
        last: f64,
        history: Vec<f64>,
    },

    #[error("at level {level}: {source}")]
    Level {
        level: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("malformed container: {0}")]
    Container(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Parse,
    Precondition,
    Numerical,
    SizeCap,
}

impl Error {
    pub fn category(&self) -> Category {
        match self {
            Error::Parse { .. } | Error::Container(_) | Error::Io(_) => Category::Parse,
            Error::InvalidInput(_)
            | Error::InvalidParameter(_)
            | Error::Dimension { .. }
            | Error::Degenerate(_)
            | Error::Precondition { .. } => Category::Precondition,
            Error::SizeLimit { .. } => Category::SizeCap,
            Error::Level { source, .. } => source.category(),
            Error::Singular(_) | Error::IterationCap { .. } | Error::Certification(_) | Error::Divergence { .. } => {
                Category::Numerical
            }
        }
    }

    pub(crate) fn at_level(self, level: usize) -> Error {
        Error::Level {
            level,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
