use rand::Rng;

use crate::error::{Result, StoreError};
use crate::event::{Event, EventKind, EventLog, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingStrategy {
    /// The k most recent qualifying edges (timestamp ties broken by ordinal).
    MostRecent,
    /// k edges sampled without replacement, uniformly over qualifying edges.
    Uniform,
}

#[derive(Debug, Clone)]
struct EdgeEntry {
    neighbor: NodeId,
    timestamp: f64,
    /// Event ordinal of the interaction that created this edge.
    ordinal: usize,
    /// Deletion instant; the edge is invisible to queries at t >= this.
    deleted_at: Option<f64>,
}

/// Result of a temporal neighborhood query, in ascending (timestamp, ordinal)
/// order. Fewer than k entries come back unpadded.
#[derive(Debug, Clone, Default)]
pub struct NeighborSample {
    pub neighbors: Vec<NodeId>,
    pub timestamps: Vec<f64>,
    /// Event ordinals; edge features live in the log under these.
    pub ordinals: Vec<usize>,
}

impl NeighborSample {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }
}

/// Per-node, time-sorted edge index over an event log. Deletions are
/// tombstones: history before the deletion instant stays queryable.
#[derive(Debug, Clone)]
pub struct TemporalAdjacency {
    lists: Vec<Vec<EdgeEntry>>,
    node_deleted_at: Vec<Option<f64>>,
}

impl TemporalAdjacency {
    pub fn new(num_nodes: usize) -> Self {
        TemporalAdjacency {
            lists: vec![Vec::new(); num_nodes],
            node_deleted_at: vec![None; num_nodes],
        }
    }

    /// Index every event of the log; deletion events become tombstones.
    pub fn from_log(log: &EventLog) -> Result<Self> {
        let mut adj = TemporalAdjacency::new(log.num_nodes());
        for event in log.events() {
            match event.kind {
                EventKind::Interaction => adj.insert_interaction(event),
                EventKind::EdgeDeletion | EventKind::NodeDeletion => {
                    adj.apply_deletion(event)?;
                }
                EventKind::NodeUpdate => {}
            }
        }
        Ok(adj)
    }

    fn ensure_node(&mut self, node: NodeId) {
        if node >= self.lists.len() {
            self.lists.resize(node + 1, Vec::new());
            self.node_deleted_at.resize(node + 1, None);
        }
    }

    /// Append one interaction to both endpoints' lists. Events arrive in log
    /// order, so per-node lists stay sorted by (timestamp, ordinal).
    pub fn insert_interaction(&mut self, event: &Event) {
        debug_assert_eq!(event.kind, EventKind::Interaction);
        let target = event.target.expect("interaction has a target");
        self.ensure_node(event.source.max(target));
        self.lists[event.source].push(EdgeEntry {
            neighbor: target,
            timestamp: event.timestamp,
            ordinal: event.ordinal,
            deleted_at: None,
        });
        self.lists[target].push(EdgeEntry {
            neighbor: event.source,
            timestamp: event.timestamp,
            ordinal: event.ordinal,
            deleted_at: None,
        });
    }

    /// Record a tombstone. Queries at times >= the deletion timestamp no
    /// longer see the edge (or any edge of a deleted node); earlier history
    /// is untouched.
    pub fn apply_deletion(&mut self, event: &Event) -> Result<()> {
        match event.kind {
            EventKind::EdgeDeletion => {
                let target = event.target.expect("edge deletion has a target");
                let created = event.created_at.ok_or_else(|| StoreError::Invalid {
                    message: "edge deletion without creation time".into(),
                })?;
                let mut found = false;
                for node in [event.source, target] {
                    if node >= self.lists.len() {
                        continue;
                    }
                    let other = if node == event.source { target } else { event.source };
                    for entry in self.lists[node].iter_mut() {
                        if entry.neighbor == other
                            && entry.timestamp == created
                            && entry.deleted_at.is_none()
                        {
                            entry.deleted_at = Some(event.timestamp);
                            found = true;
                        }
                    }
                }
                if !found {
                    return Err(StoreError::UnknownDeletion {
                        description: format!(
                            "edge ({},{target}) created at {created}",
                            event.source
                        ),
                    });
                }
                Ok(())
            }
            EventKind::NodeDeletion => {
                if event.source >= self.lists.len() {
                    return Err(StoreError::UnknownDeletion {
                        description: format!("node {}", event.source),
                    });
                }
                self.node_deleted_at[event.source] = Some(event.timestamp);
                Ok(())
            }
            _ => Err(StoreError::Invalid {
                message: "apply_deletion expects a deletion event".into(),
            }),
        }
    }

    fn node_gone(&self, node: NodeId, t: f64) -> bool {
        node < self.node_deleted_at.len()
            && self.node_deleted_at[node].is_some_and(|d| t >= d)
    }

    /// Up to k edges incident to `node` with timestamp strictly before `t`,
    /// skipping the excluded event ordinal and anything deleted at or before
    /// `t`. Unknown nodes simply have no neighbors.
    pub fn neighbors_before<R: Rng + ?Sized>(
        &self,
        node: NodeId,
        t: f64,
        k: usize,
        strategy: SamplingStrategy,
        exclude: Option<usize>,
        rng: &mut R,
    ) -> Result<NeighborSample> {
        if k == 0 {
            return Err(StoreError::ZeroNeighborCount);
        }
        if node >= self.lists.len() || self.node_gone(node, t) {
            return Ok(NeighborSample::default());
        }
        let qualifying: Vec<&EdgeEntry> = self.lists[node]
            .iter()
            .filter(|e| {
                e.timestamp < t
                    && Some(e.ordinal) != exclude
                    && e.deleted_at.is_none_or(|d| t < d)
                    && !self.node_gone(e.neighbor, t)
            })
            .collect();
        let chosen: Vec<&EdgeEntry> = match strategy {
            SamplingStrategy::MostRecent => {
                let start = qualifying.len().saturating_sub(k);
                qualifying[start..].to_vec()
            }
            SamplingStrategy::Uniform => {
                if qualifying.len() <= k {
                    qualifying
                } else {
                    // Partial Fisher-Yates over candidate indices.
                    let mut idx: Vec<usize> = (0..qualifying.len()).collect();
                    for i in 0..k {
                        let j = rng.gen_range(i..idx.len());
                        idx.swap(i, j);
                    }
                    let mut picked: Vec<usize> = idx[..k].to_vec();
                    picked.sort_unstable();
                    picked.into_iter().map(|i| qualifying[i]).collect()
                }
            }
        };
        Ok(NeighborSample {
            neighbors: chosen.iter().map(|e| e.neighbor).collect(),
            timestamps: chosen.iter().map(|e| e.timestamp).collect(),
            ordinals: chosen.iter().map(|e| e.ordinal).collect(),
        })
    }
}
