use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("variable `{0}` has no observed values")]
    NoObservedStates(String),

    #[error("family of variable {child} has no fully observed rows")]
    NoObservedFamily { child: usize },

    #[error("parent sets overlap on variable {0}")]
    OverlappingParents(usize),

    #[error("k-tree error: {0}")]
    KTree(String),

    #[error(
        "graph has {n} vertices, above the exact treewidth limit of {limit}; use the k-tree subgraph check instead"
    )]
    TreewidthLimit { n: usize, limit: usize },

    #[error("{size} variables exceed the exact learner limit of {limit}; use an approximate initialization")]
    ExactLimit { size: usize, limit: usize },

    #[error("no iteration completed within the budget; increase --time or --max-iter")]
    NoIterations,

    #[error("evidence has probability zero under the network{hint}")]
    ImpossibleEvidence { hint: &'static str },

    #[error("unknown state `{state}` for variable `{variable}`")]
    UnknownState { variable: String, state: String },

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("network format error: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable class name, used by the CLI for exit codes.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } | Error::Empty(_) | Error::Format(_) => "input",
            Error::InvalidArgument(_)
            | Error::UnknownState { .. }
            | Error::UnknownVariable(_)
            | Error::OverlappingParents(_)
            | Error::TreewidthLimit { .. }
            | Error::ExactLimit { .. } => "argument",
            Error::NoObservedStates(_) | Error::NoObservedFamily { .. } => "data",
            Error::KTree(_) => "structure",
            Error::NoIterations => "budget",
            Error::ImpossibleEvidence { .. } => "inference",
        }
    }
}
