use thiserror::Error;

pub type Result<T> = std::result::Result<T, DfcError>;

#[derive(Debug, Error)]
pub enum DfcError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("duplicate observation at ({row}, {col})")]
    Duplicate { row: usize, col: usize },

    #[error("index ({row}, {col}) out of bounds for {m}x{n} matrix")]
    OutOfBounds { row: usize, col: usize, m: usize, n: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("undefined for the zero matrix: {0}")]
    Undefined(&'static str),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("subproblem {block} failed: {source}")]
    Block {
        block: usize,
        #[source]
        source: Box<DfcError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl DfcError {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        DfcError::Argument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        DfcError::Shape(msg.into())
    }
}
