use std::path::PathBuf;

use crate::trainer::MetricsRecord;

pub type Result<T, E = FerasError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum FerasError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("node id {id} out of range (graph has {num_nodes} nodes)")]
    NodeOutOfRange { id: usize, num_nodes: usize },

    #[error("node id {0} appears more than once")]
    DuplicateNode(usize),

    #[error("node list is empty")]
    EmptyNodeList,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite values in {0}")]
    NonFinite(&'static str),

    #[error("every node in the batch is masked out")]
    AllMasked,

    #[error("forward tape is incomplete or already consumed")]
    StaleTape,

    #[error("late embedding push: table is at epoch {table}, push tagged {push}")]
    LatePush { table: u64, push: u64 },

    #[error("expected {expected} weight pushes, found {found}")]
    PushCount { expected: usize, found: usize },

    #[error("no nodes in the {0} split")]
    EmptySplit(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at epoch {} (host {}, loss {})", .0.epoch, .0.host, .0.loss)]
    Diverged(Box<Divergence>),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("dense linearization of size {rows}x{cols} exceeds the limit of {limit} per side")]
    SizeGuard {
        rows: usize,
        cols: usize,
        limit: usize,
    },

    #[error("hyperparameters not certified: {0}")]
    Uncertified(String),
}

/// Diagnostic snapshot captured when the divergence guard trips.
#[derive(Debug, Clone)]
pub struct Divergence {
    pub epoch: usize,
    pub host: usize,
    pub loss: f64,
    /// Records emitted before the guard tripped, ending with the offending one.
    pub records: Vec<MetricsRecord>,
}

impl FerasError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FerasError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        FerasError::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
