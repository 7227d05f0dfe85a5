use std::fmt;

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug)]
pub enum ModelError {
    /// Inconsistent variant or hyperparameter combination.
    Config(String),
    /// Substrate failure from the tensor engine.
    Diff(diffnum::DiffError),
    /// Graph storage failure.
    Store(tgstore::StoreError),
    /// Memory update would move a node's clock backwards.
    OutOfOrderUpdate { node: usize, timestamp: f64, last: f64 },
    /// Aggregation was asked to flush a node with no pending messages.
    NoPendingMessages { node: usize },
    EmptySegment(&'static str),
    /// A metric was requested on a list that cannot support it.
    DegenerateMetric(String),
    Io(std::io::Error),
    /// Checkpoint payload did not match the expected layout.
    Checkpoint(String),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::Config(m) => write!(f, "configuration: {m}"),
            ModelError::Diff(e) => write!(f, "{e}"),
            ModelError::Store(e) => write!(f, "{e}"),
            ModelError::OutOfOrderUpdate { node, timestamp, last } => write!(
                f,
                "memory update for node {node} at t={timestamp} precedes last update t={last}"
            ),
            ModelError::NoPendingMessages { node } => {
                write!(f, "node {node} has no pending raw messages to aggregate")
            }
            ModelError::EmptySegment(what) => write!(f, "empty {what} segment"),
            ModelError::DegenerateMetric(m) => write!(f, "{m}"),
            ModelError::Io(e) => write!(f, "io error: {e}"),
            ModelError::Checkpoint(m) => write!(f, "checkpoint: {m}"),
        }
    }
}

impl std::error::Error for ModelError {}

impl From<diffnum::DiffError> for ModelError {
    fn from(e: diffnum::DiffError) -> Self {
        ModelError::Diff(e)
    }
}

impl From<tgstore::StoreError> for ModelError {
    fn from(e: tgstore::StoreError) -> Self {
        ModelError::Store(e)
    }
}

impl From<std::io::Error> for ModelError {
    fn from(e: std::io::Error) -> Self {
        ModelError::Io(e)
    }
}
