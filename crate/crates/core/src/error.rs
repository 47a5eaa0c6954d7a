use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid einsum: {0}")]
    Einsum(String),

    #[error("inconsistent extents: {0}")]
    Inconsistent(String),

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("node `{0}` is not reachable from the output")]
    Unreachable(String),

    #[error("unsupported operation: cannot differentiate through {0} node")]
    Unsupported(String),

    #[error("missing feed for variable `{0}`")]
    MissingFeed(String),

    #[error("singular matrix (condition estimate {0:e})")]
    Singular(f64),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{0}")]
    Invalid(String),

    /// A request that cannot apply to the given graph, such as a Hessian of
    /// a non-scalar output.
    #[error("{0}")]
    Precondition(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn einsum(msg: impl Into<String>) -> Self {
        Error::Einsum(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
