//! Event-sourced continuous-time dynamic graph storage.
//!
//! A graph is a chronologically ordered log of events — interactions,
//! node feature updates, edge deletions, node deletions. On top of the log
//! sit a per-node time-sorted adjacency index answering "neighbors strictly
//! before t" queries, chronological train/validation/test splits, and CSV
//! ingestion for bipartite interaction exports.

mod adjacency;
mod csv_io;
mod error;
mod event;
mod split;

pub use adjacency::{NeighborSample, SamplingStrategy, TemporalAdjacency};
pub use csv_io::{ingest_csv, write_csv};
pub use error::{Result, StoreError};
pub use event::{Event, EventKind, EventLog, EventLogBuilder, NodeId};
pub use split::{chronological_split, SplitSpec};
