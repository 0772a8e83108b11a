use std::path::PathBuf;

/// Errors produced anywhere in the engine.
///
/// Variants split into two families: input/configuration problems
/// (see [`Error::is_input_error`]) and runtime or numeric failures.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: left is {left:?}, right is {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("row {row} has L2 norm {norm:e}, below the normalization floor")]
    DegenerateRow { row: usize, norm: f64 },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("non-finite loss at epoch {epoch}: {detail}")]
    NonFiniteLoss { epoch: usize, detail: String },

    #[error("{}: file not found", path.display())]
    MissingFile { path: PathBuf },

    #[error("{}:{line}: expected {expected} columns, found {found}", path.display())]
    RaggedRow {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("{}:{line}: cannot parse {cell:?} as a number", path.display())]
    NonNumeric {
        path: PathBuf,
        line: usize,
        cell: String,
    },

    #[error("{}:{line}: node index {index} out of range for {nodes} nodes", path.display())]
    IndexOutOfRange {
        path: PathBuf,
        line: usize,
        index: usize,
        nodes: usize,
    },

    #[error("{}: {detail}", path.display())]
    Dataset { path: PathBuf, detail: String },

    #[error("config line {line}: {detail}")]
    ConfigParse { line: usize, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for problems with user-supplied inputs (files, configuration,
    /// parameters) as opposed to failures during computation.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::MissingFile { .. }
                | Error::RaggedRow { .. }
                | Error::NonNumeric { .. }
                | Error::IndexOutOfRange { .. }
                | Error::Dataset { .. }
                | Error::ConfigParse { .. }
                | Error::Config(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile { path }
        } else {
            Error::Io { path, source }
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
