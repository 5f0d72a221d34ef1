use std::fmt;

/// Shape of a dense matrix, printed as `rows×cols`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape(pub usize, pub usize);

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}×{}", self.0, self.1)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    Shape {
        op: &'static str,
        left: Shape,
        right: Shape,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: u64,
        column: usize,
        message: String,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("checkpoint error at offset {offset}: {message}")]
    Checkpoint { offset: u64, message: String },

    #[error("numerical divergence: {0}")]
    Divergence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: Shape, right: Shape) -> Self {
        Error::Shape { op, left, right }
    }

    /// Short machine-readable category used for `ERROR:<category>:` prefixes.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::Domain(_) => "domain",
            Error::Config(_) => "config",
            Error::Data(_) | Error::Degenerate(_) => "data",
            Error::Parse { .. } | Error::Csv(_) => "parse",
            Error::Unsupported(_) => "unsupported",
            Error::Checkpoint { .. } => "checkpoint",
            Error::Divergence(_) => "divergence",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
