use diffnum::Real;

use crate::error::{Result, StoreError};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Interaction,
    NodeUpdate,
    EdgeDeletion,
    NodeDeletion,
}

/// One timestamped occurrence in the graph's history.
#[derive(Debug, Clone)]
pub struct Event {
    pub kind: EventKind,
    pub source: NodeId,
    /// Destination node; absent for node-wise events.
    pub target: Option<NodeId>,
    pub timestamp: f64,
    /// Edge features for interactions and edge deletions, node features for
    /// feature updates, empty for node deletions.
    pub features: Vec<Real>,
    /// Position in the log, assigned on append.
    pub ordinal: usize,
    /// Creation time of the edge an edge-deletion removes.
    pub created_at: Option<f64>,
    /// Dynamic state label attached to interaction rows (0 when absent).
    pub state_label: u8,
}

/// Append-only, chronologically ordered event log.
#[derive(Debug, Clone)]
pub struct EventLog {
    events: Vec<Event>,
    num_nodes: usize,
    edge_feature_dim: usize,
    node_feature_dim: usize,
    /// Size of the raw source-id space; raw destination ids were offset by
    /// this amount during ingestion (0 for logs built directly).
    source_space: usize,
    /// Sorted unique destination nodes of interaction events.
    destinations: Vec<NodeId>,
}

pub struct EventLogBuilder {
    events: Vec<Event>,
    num_nodes: usize,
    edge_feature_dim: Option<usize>,
    node_feature_dim: Option<usize>,
    source_space: usize,
}

impl EventLogBuilder {
    pub fn new() -> Self {
        EventLogBuilder {
            events: Vec::new(),
            num_nodes: 0,
            edge_feature_dim: None,
            node_feature_dim: None,
            source_space: 0,
        }
    }

    /// Fix the edge-feature dimension up front (otherwise taken from the
    /// first interaction).
    pub fn with_edge_feature_dim(mut self, dim: usize) -> Self {
        self.edge_feature_dim = Some(dim);
        self
    }

    /// Declare the size of the raw source-id space for logs built with the
    /// ingestion convention (destination ids offset past the sources), so
    /// serialization can undo the offset.
    pub fn with_source_space(mut self, source_space: usize) -> Self {
        self.source_space = source_space;
        self
    }

    fn check_time(&self, timestamp: f64) -> Result<()> {
        if !timestamp.is_finite() || timestamp < 0.0 {
            return Err(StoreError::Invalid {
                message: format!("timestamp {timestamp} must be finite and non-negative"),
            });
        }
        if let Some(last) = self.events.last() {
            if timestamp < last.timestamp {
                return Err(StoreError::OutOfOrder {
                    ordinal: self.events.len(),
                    timestamp,
                    previous: last.timestamp,
                });
            }
        }
        Ok(())
    }

    fn see_node(&mut self, node: NodeId) {
        self.num_nodes = self.num_nodes.max(node + 1);
    }

    pub fn interaction(
        &mut self,
        source: NodeId,
        target: NodeId,
        timestamp: f64,
        features: Vec<Real>,
        state_label: u8,
    ) -> Result<&mut Self> {
        self.check_time(timestamp)?;
        let expected = *self.edge_feature_dim.get_or_insert(features.len());
        if features.len() != expected {
            return Err(StoreError::FeatureDim {
                ordinal: self.events.len(),
                expected,
                got: features.len(),
            });
        }
        if state_label > 1 {
            return Err(StoreError::Invalid {
                message: format!("state label {state_label} outside {{0,1}}"),
            });
        }
        self.see_node(source);
        self.see_node(target);
        self.events.push(Event {
            kind: EventKind::Interaction,
            source,
            target: Some(target),
            timestamp,
            features,
            ordinal: self.events.len(),
            created_at: None,
            state_label,
        });
        Ok(self)
    }

    pub fn node_update(
        &mut self,
        node: NodeId,
        timestamp: f64,
        features: Vec<Real>,
    ) -> Result<&mut Self> {
        self.check_time(timestamp)?;
        let expected = *self.node_feature_dim.get_or_insert(features.len());
        if features.len() != expected {
            return Err(StoreError::FeatureDim {
                ordinal: self.events.len(),
                expected,
                got: features.len(),
            });
        }
        self.see_node(node);
        self.events.push(Event {
            kind: EventKind::NodeUpdate,
            source: node,
            target: None,
            timestamp,
            features,
            ordinal: self.events.len(),
            created_at: None,
            state_label: 0,
        });
        Ok(self)
    }

    /// Delete the edge between `source` and `target` that was created at
    /// `created_at`. The original edge must exist; its features are copied
    /// onto the deletion event.
    pub fn edge_deletion(
        &mut self,
        source: NodeId,
        target: NodeId,
        created_at: f64,
        timestamp: f64,
    ) -> Result<&mut Self> {
        self.check_time(timestamp)?;
        let original = self.events.iter().rev().find(|e| {
            e.kind == EventKind::Interaction
                && e.timestamp == created_at
                && ((e.source == source && e.target == Some(target))
                    || (e.source == target && e.target == Some(source)))
        });
        let features = match original {
            Some(e) => e.features.clone(),
            None => {
                return Err(StoreError::UnknownDeletion {
                    description: format!("edge ({source},{target}) created at {created_at}"),
                })
            }
        };
        self.events.push(Event {
            kind: EventKind::EdgeDeletion,
            source,
            target: Some(target),
            timestamp,
            features,
            ordinal: self.events.len(),
            created_at: Some(created_at),
            state_label: 0,
        });
        Ok(self)
    }

    pub fn node_deletion(&mut self, node: NodeId, timestamp: f64) -> Result<&mut Self> {
        self.check_time(timestamp)?;
        if node >= self.num_nodes {
            return Err(StoreError::UnknownDeletion {
                description: format!("node {node}"),
            });
        }
        self.events.push(Event {
            kind: EventKind::NodeDeletion,
            source: node,
            target: None,
            timestamp,
            features: Vec::new(),
            ordinal: self.events.len(),
            created_at: None,
            state_label: 0,
        });
        Ok(self)
    }

    pub fn finish(self) -> EventLog {
        let mut destinations: Vec<NodeId> = self
            .events
            .iter()
            .filter(|e| e.kind == EventKind::Interaction)
            .filter_map(|e| e.target)
            .collect();
        destinations.sort_unstable();
        destinations.dedup();
        EventLog {
            events: self.events,
            num_nodes: self.num_nodes,
            edge_feature_dim: self.edge_feature_dim.unwrap_or(0),
            node_feature_dim: self.node_feature_dim.unwrap_or(0),
            source_space: self.source_space,
            destinations,
        }
    }
}

impl Default for EventLogBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl EventLog {
    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn event(&self, ordinal: usize) -> &Event {
        &self.events[ordinal]
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn edge_feature_dim(&self) -> usize {
        self.edge_feature_dim
    }

    pub fn node_feature_dim(&self) -> usize {
        self.node_feature_dim
    }

    pub fn source_space(&self) -> usize {
        self.source_space
    }

    /// Sorted unique destination nodes across all interactions.
    pub fn destinations(&self) -> &[NodeId] {
        &self.destinations
    }

    /// Latest node-feature update for `node` at or before `t`, if any.
    pub fn node_features_at(&self, node: NodeId, t: f64) -> Option<&[Real]> {
        self.events
            .iter()
            .rev()
            .find(|e| e.kind == EventKind::NodeUpdate && e.source == node && e.timestamp <= t)
            .map(|e| e.features.as_slice())
    }

    pub fn edge_features(&self, ordinal: usize) -> &[Real] {
        &self.events[ordinal].features
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_rejects_decreasing_timestamps() {
        let mut b = EventLogBuilder::new();
        b.interaction(0, 1, 5.0, vec![], 0).unwrap();
        assert!(matches!(
            b.interaction(1, 2, 3.0, vec![], 0),
            Err(StoreError::OutOfOrder { .. })
        ));
    }

    #[test]
    fn builder_rejects_ragged_edge_features() {
        let mut b = EventLogBuilder::new();
        b.interaction(0, 1, 1.0, vec![0.5, 0.5], 0).unwrap();
        assert!(matches!(
            b.interaction(0, 2, 2.0, vec![0.5], 0),
            Err(StoreError::FeatureDim { .. })
        ));
    }

    #[test]
    fn edge_deletion_copies_original_features() {
        let mut b = EventLogBuilder::new();
        b.interaction(0, 1, 1.0, vec![0.25, -0.5], 0).unwrap();
        b.edge_deletion(0, 1, 1.0, 4.0).unwrap();
        let log = b.finish();
        assert_eq!(log.event(1).features, vec![0.25, -0.5]);
        assert_eq!(log.event(1).created_at, Some(1.0));
    }

    #[test]
    fn deleting_unknown_edge_or_node_is_rejected() {
        let mut b = EventLogBuilder::new();
        b.interaction(0, 1, 1.0, vec![], 0).unwrap();
        assert!(b.edge_deletion(0, 2, 1.0, 2.0).is_err());
        assert!(b.node_deletion(9, 2.0).is_err());
    }

    #[test]
    fn node_features_at_returns_latest_before_query() {
        let mut b = EventLogBuilder::new();
        b.node_update(3, 1.0, vec![1.0]).unwrap();
        b.node_update(3, 5.0, vec![2.0]).unwrap();
        let log = b.finish();
        assert_eq!(log.node_features_at(3, 0.5), None);
        assert_eq!(log.node_features_at(3, 1.0), Some(&[1.0][..]));
        assert_eq!(log.node_features_at(3, 4.0), Some(&[1.0][..]));
        assert_eq!(log.node_features_at(3, 6.0), Some(&[2.0][..]));
    }

    #[test]
    fn destinations_are_unique_and_sorted() {
        let mut b = EventLogBuilder::new();
        b.interaction(0, 5, 1.0, vec![], 0).unwrap();
        b.interaction(1, 3, 2.0, vec![], 0).unwrap();
        b.interaction(2, 5, 3.0, vec![], 0).unwrap();
        let log = b.finish();
        assert_eq!(log.destinations(), &[3, 5]);
        assert_eq!(log.num_nodes(), 6);
    }
}
