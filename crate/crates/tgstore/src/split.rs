use std::collections::BTreeSet;
use std::ops::Range;

use crate::error::{Result, StoreError};
use crate::event::{EventKind, EventLog, NodeId};

/// 70%/15%/15% chronological split by event count.
#[derive(Debug, Clone)]
pub struct SplitSpec {
    /// Timestamp of the last training event.
    pub t_train: f64,
    /// Timestamp of the last validation event.
    pub t_val: f64,
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
    /// Nodes absent from the training segment.
    pub inductive_nodes: BTreeSet<NodeId>,
}

impl SplitSpec {
    /// True when the interaction touches at least one inductive node.
    pub fn is_inductive_event(&self, source: NodeId, target: Option<NodeId>) -> bool {
        self.inductive_nodes.contains(&source)
            || target.is_some_and(|t| self.inductive_nodes.contains(&t))
    }
}

pub fn chronological_split(log: &EventLog) -> Result<SplitSpec> {
    let n = log.len();
    if n < 10 {
        return Err(StoreError::DegenerateSplit { events: n });
    }
    let n70 = n * 70 / 100;
    let n85 = n * 85 / 100;
    let mut train_nodes: BTreeSet<NodeId> = BTreeSet::new();
    for event in &log.events()[..n70] {
        train_nodes.insert(event.source);
        if let Some(t) = event.target {
            train_nodes.insert(t);
        }
    }
    let mut inductive_nodes = BTreeSet::new();
    for event in &log.events()[n70..] {
        if event.kind == EventKind::Interaction {
            for node in [Some(event.source), event.target].into_iter().flatten() {
                if !train_nodes.contains(&node) {
                    inductive_nodes.insert(node);
                }
            }
        }
    }
    Ok(SplitSpec {
        t_train: log.event(n70 - 1).timestamp,
        t_val: log.event(n85 - 1).timestamp,
        train: 0..n70,
        val: n70..n85,
        test: n85..n,
        inductive_nodes,
    })
}
