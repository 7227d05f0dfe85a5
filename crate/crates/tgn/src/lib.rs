//! Temporal graph networks over event-sourced dynamic graphs.
//!
//! The pipeline: every event deposits raw messages (memory snapshots, the
//! event time and features) into a per-node store; at the next batch that
//! touches a node, its pending messages are turned into messages through a
//! shared time encoding, aggregated, and fed to a recurrent cell that updates
//! the node's memory. Embedding modules then read the just-updated memory —
//! directly, projected in time, or through temporal graph attention / sum
//! over sampled past neighbors — and decoders score future edges or node
//! states. Deferring each event's memory update to the following batch keeps
//! the memory used to score an interaction independent of that interaction
//! while still letting the memory machinery receive gradients.

mod embed;
mod error;
mod memory;
mod metrics;
mod model;
mod time_enc;
mod variant;

pub use embed::{EmbedCtx, Embedder, MemoryAccess, ZeroMemory};
pub use error::{ModelError, Result};
pub use memory::{
    AggregatorMode, MemoryModule, MemoryStore, MessageDirection, RawMessage, RawMessageStore,
    UpdaterKind,
};
pub use metrics::{average_precision, roc_auc};
pub use model::{
    memory_independence_check, training_destinations, EpochMetrics, EvalSetting, Metrics,
    NodeClassReport, TgnModel, TrainReport,
};
pub use time_enc::TimeEncoder;
pub use variant::{AggregatorKind, EmbeddingMode, MessageKind, VariantConfig, PRESET_NAMES};

/// Hyperparameter bundle; defaults follow the reference configuration.
#[derive(Debug, Clone)]
pub struct Hyperparams {
    pub memory_dim: usize,
    pub time_dim: usize,
    pub embedding_dim: usize,
    pub heads: usize,
    pub dropout: diffnum::Real,
    pub learning_rate: diffnum::Real,
    pub batch_size: usize,
    pub patience: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            memory_dim: 172,
            time_dim: 100,
            embedding_dim: 100,
            heads: 2,
            dropout: 0.1,
            learning_rate: 1e-4,
            batch_size: 200,
            patience: 5,
        }
    }
}
