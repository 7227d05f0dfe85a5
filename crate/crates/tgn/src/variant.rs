use tgstore::SamplingStrategy;

use crate::error::{ModelError, Result};
use crate::memory::{AggregatorMode, UpdaterKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingMode {
    /// The memory vector itself.
    Identity,
    /// Memory modulated by time since the node's last update.
    TimeProjection,
    /// Multi-head attention over sampled temporal neighbors,
    /// `layers` hops deep, `neighbors` per hop.
    Attention { layers: usize, neighbors: usize },
    /// Projected-sum aggregation over sampled temporal neighbors.
    GraphSum { layers: usize, neighbors: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregatorKind {
    Last,
    Mean,
    /// Memoryless variants aggregate nothing.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageKind {
    /// Plain concatenation of the raw ingredients.
    Identity,
    /// Concatenation augmented with an attention summary of the counterpart's
    /// temporal neighborhood.
    AttentionAugmented,
}

/// A fully specified model variant. The named presets cover the classic
/// configurations compared in the ablation matrix.
#[derive(Debug, Clone)]
pub struct VariantConfig {
    pub name: String,
    pub memory: bool,
    pub updater: Option<UpdaterKind>,
    pub embedding: EmbeddingMode,
    pub aggregator: AggregatorKind,
    pub message: MessageKind,
    pub sampling: SamplingStrategy,
}

pub const PRESET_NAMES: [&str; 10] = [
    "tgn-attn", "tgn-2l", "tgn-no-mem", "tgn-time", "tgn-id", "tgn-sum", "tgn-mean", "jodie",
    "dyrep", "tgat",
];

impl VariantConfig {
    pub fn preset(name: &str) -> Result<VariantConfig> {
        let canonical = name.to_ascii_lowercase();
        let canonical = canonical.trim_end_matches("-style");
        let with_memory = |updater, embedding, aggregator, message| VariantConfig {
            name: canonical.to_string(),
            memory: true,
            updater: Some(updater),
            embedding,
            aggregator,
            message,
            sampling: SamplingStrategy::MostRecent,
        };
        Ok(match canonical {
            "tgn-attn" => with_memory(
                UpdaterKind::Gru,
                EmbeddingMode::Attention { layers: 1, neighbors: 10 },
                AggregatorKind::Last,
                MessageKind::Identity,
            ),
            "tgn-2l" => with_memory(
                UpdaterKind::Gru,
                EmbeddingMode::Attention { layers: 2, neighbors: 10 },
                AggregatorKind::Last,
                MessageKind::Identity,
            ),
            "tgn-time" => with_memory(
                UpdaterKind::Gru,
                EmbeddingMode::TimeProjection,
                AggregatorKind::Last,
                MessageKind::Identity,
            ),
            "tgn-id" => with_memory(
                UpdaterKind::Gru,
                EmbeddingMode::Identity,
                AggregatorKind::Last,
                MessageKind::Identity,
            ),
            "tgn-sum" => with_memory(
                UpdaterKind::Gru,
                EmbeddingMode::GraphSum { layers: 1, neighbors: 10 },
                AggregatorKind::Last,
                MessageKind::Identity,
            ),
            "tgn-mean" => with_memory(
                UpdaterKind::Gru,
                EmbeddingMode::Attention { layers: 1, neighbors: 10 },
                AggregatorKind::Mean,
                MessageKind::Identity,
            ),
            "jodie" => with_memory(
                UpdaterKind::Rnn,
                EmbeddingMode::TimeProjection,
                AggregatorKind::Last,
                MessageKind::Identity,
            ),
            "dyrep" => with_memory(
                UpdaterKind::Rnn,
                EmbeddingMode::Identity,
                AggregatorKind::Last,
                MessageKind::AttentionAugmented,
            ),
            "tgn-no-mem" => VariantConfig {
                name: canonical.to_string(),
                memory: false,
                updater: None,
                embedding: EmbeddingMode::Attention { layers: 1, neighbors: 10 },
                aggregator: AggregatorKind::None,
                message: MessageKind::Identity,
                sampling: SamplingStrategy::MostRecent,
            },
            "tgat" => VariantConfig {
                name: canonical.to_string(),
                memory: false,
                updater: None,
                embedding: EmbeddingMode::Attention { layers: 2, neighbors: 20 },
                aggregator: AggregatorKind::None,
                message: MessageKind::Identity,
                sampling: SamplingStrategy::Uniform,
            },
            _ => {
                return Err(ModelError::Config(format!(
                    "unknown preset {name:?}; known presets: {}",
                    PRESET_NAMES.join(", ")
                )))
            }
        })
    }

    pub fn aggregator_mode(&self) -> Option<AggregatorMode> {
        match self.aggregator {
            AggregatorKind::Last => Some(AggregatorMode::Last),
            AggregatorKind::Mean => Some(AggregatorMode::Mean),
            AggregatorKind::None => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(ModelError::Config(format!("variant {}: {m}", self.name)));
        if self.memory {
            if self.updater.is_none() {
                return fail("memory requires an updater");
            }
            if self.aggregator == AggregatorKind::None {
                return fail("memory requires a message aggregator");
            }
        } else {
            if self.updater.is_some() {
                return fail("an updater without memory has nothing to update");
            }
            if self.aggregator != AggregatorKind::None {
                return fail("an aggregator without memory has nothing to aggregate");
            }
            if self.message == MessageKind::AttentionAugmented {
                return fail("augmented messages need a memory to update");
            }
            if matches!(
                self.embedding,
                EmbeddingMode::Identity | EmbeddingMode::TimeProjection
            ) {
                return fail("identity and time-projection embeddings read the memory");
            }
        }
        match self.embedding {
            EmbeddingMode::Attention { layers, neighbors }
            | EmbeddingMode::GraphSum { layers, neighbors }
                if (layers == 0 || neighbors == 0) => {
                    return fail("graph embeddings need at least one layer and one neighbor");
                }
            _ => {}
        }
        Ok(())
    }
}
