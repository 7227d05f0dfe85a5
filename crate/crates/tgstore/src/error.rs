use std::fmt;

pub type Result<T> = std::result::Result<T, StoreError>;

/// Errors from log construction, ingestion and temporal queries.
#[derive(Debug)]
pub enum StoreError {
    Io(std::io::Error),
    /// A CSV row could not be parsed; `line` is 1-based and counts the header.
    Parse { line: u64, message: String },
    /// A row carried a different number of feature columns than the header.
    RaggedRow { line: u64, expected: usize, got: usize },
    NegativeTimestamp { line: u64, value: f64 },
    /// Events must be appended in non-decreasing timestamp order.
    OutOfOrder { ordinal: usize, timestamp: f64, previous: f64 },
    /// Interaction features must all share the log's edge-feature dimension.
    FeatureDim { ordinal: usize, expected: usize, got: usize },
    /// Deletion referenced an edge or node that does not exist.
    UnknownDeletion { description: String },
    /// Neighbor queries need k >= 1.
    ZeroNeighborCount,
    /// Chronological splits need at least 10 events.
    DegenerateSplit { events: usize },
    Invalid { message: String },
}

impl fmt::Display for StoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StoreError::Io(e) => write!(f, "io error: {e}"),
            StoreError::Parse { line, message } => write!(f, "line {line}: {message}"),
            StoreError::RaggedRow { line, expected, got } => {
                write!(f, "line {line}: expected {expected} feature columns, got {got}")
            }
            StoreError::NegativeTimestamp { line, value } => {
                write!(f, "line {line}: negative timestamp {value}")
            }
            StoreError::OutOfOrder { ordinal, timestamp, previous } => write!(
                f,
                "event {ordinal} at t={timestamp} precedes earlier event at t={previous}"
            ),
            StoreError::FeatureDim { ordinal, expected, got } => write!(
                f,
                "event {ordinal}: expected {expected} edge features, got {got}"
            ),
            StoreError::UnknownDeletion { description } => {
                write!(f, "cannot delete nonexistent {description}")
            }
            StoreError::ZeroNeighborCount => write!(f, "neighbor queries require k >= 1"),
            StoreError::DegenerateSplit { events } => {
                write!(f, "chronological split needs at least 10 events, got {events}")
            }
            StoreError::Invalid { message } => write!(f, "{message}"),
        }
    }
}

impl std::error::Error for StoreError {}

impl From<std::io::Error> for StoreError {
    fn from(e: std::io::Error) -> Self {
        StoreError::Io(e)
    }
}
