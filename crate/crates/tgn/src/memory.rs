use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};

use diffnum::{GruCell, Real, RnnCell, Tape, Tensor};
use rand::Rng;
use tgstore::NodeId;

use crate::error::{ModelError, Result};
use crate::time_enc::TimeEncoder;

/// Per-node state vectors plus each node's last-update timestamp.
/// New nodes start at the zero vector with clock 0.
#[derive(Debug, Clone)]
pub struct MemoryStore {
    dim: usize,
    states: Vec<Vec<Real>>,
    last_update: Vec<f64>,
}

impl MemoryStore {
    pub fn new(num_nodes: usize, dim: usize) -> Self {
        MemoryStore {
            dim,
            states: vec![vec![0.0; dim]; num_nodes],
            last_update: vec![0.0; num_nodes],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_nodes(&self) -> usize {
        self.states.len()
    }

    pub fn state(&self, node: NodeId) -> &[Real] {
        &self.states[node]
    }

    pub fn last_update(&self, node: NodeId) -> f64 {
        self.last_update[node]
    }

    /// Overwrite a node's state; the clock may never move backwards.
    pub fn set(&mut self, node: NodeId, values: &[Real], t: f64) -> Result<()> {
        if values.len() != self.dim {
            return Err(ModelError::Config(format!(
                "memory row of length {} for dimension {}",
                values.len(),
                self.dim
            )));
        }
        if t < self.last_update[node] {
            return Err(ModelError::OutOfOrderUpdate {
                node,
                timestamp: t,
                last: self.last_update[node],
            });
        }
        self.states[node].copy_from_slice(values);
        self.last_update[node] = t;
        Ok(())
    }

    pub fn reset(&mut self) {
        for s in &mut self.states {
            s.fill(0.0);
        }
        self.last_update.fill(0.0);
    }
}

/// Which message function slot a raw message belongs to. All slots share the
/// identity (concatenation) form; the tags keep deletion traffic separable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageDirection {
    Source,
    Destination,
    NodeWise,
    DeletionSource,
    DeletionDestination,
}

/// The stored ingredients of a future message: memory snapshots taken when
/// the event was processed, never refreshed afterwards.
#[derive(Debug, Clone)]
pub struct RawMessage {
    pub node: NodeId,
    pub own_memory: Vec<Real>,
    pub counterpart_memory: Option<Vec<Real>>,
    pub timestamp: f64,
    pub ordinal: usize,
    pub features: Vec<Real>,
    pub direction: MessageDirection,
    /// Optional neighborhood-attention summary appended by augmented message
    /// functions.
    pub aux: Option<Vec<Real>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregatorMode {
    /// Keep only the most recent message per node.
    Last,
    /// Elementwise mean of all messages since the node's last update.
    Mean,
}

/// Per-node buffers of raw messages accumulated since each node's last
/// memory update. Under `Last` aggregation at most one message per node is
/// retained.
#[derive(Debug, Clone)]
pub struct RawMessageStore {
    mode: AggregatorMode,
    pending: BTreeMap<NodeId, Vec<RawMessage>>,
}

impl RawMessageStore {
    pub fn new(mode: AggregatorMode) -> Self {
        RawMessageStore {
            mode,
            pending: BTreeMap::new(),
        }
    }

    pub fn mode(&self) -> AggregatorMode {
        self.mode
    }

    pub fn push(&mut self, msg: RawMessage) {
        let slot = self.pending.entry(msg.node).or_default();
        match self.mode {
            AggregatorMode::Last => {
                let newer = slot
                    .first()
                    .is_none_or(|old| (msg.timestamp, msg.ordinal) >= (old.timestamp, old.ordinal));
                if newer {
                    slot.clear();
                    slot.push(msg);
                }
            }
            AggregatorMode::Mean => slot.push(msg),
        }
    }

    pub fn has_pending(&self, node: NodeId) -> bool {
        self.pending.contains_key(&node)
    }

    pub fn pending(&self, node: NodeId) -> Option<&[RawMessage]> {
        self.pending.get(&node).map(Vec::as_slice)
    }

    pub fn take(&mut self, node: NodeId) -> Vec<RawMessage> {
        self.pending.remove(&node).unwrap_or_default()
    }

    /// Nodes with pending messages, ascending.
    pub fn pending_nodes(&self) -> Vec<NodeId> {
        self.pending.keys().copied().collect()
    }

    pub fn total_messages(&self) -> usize {
        self.pending.values().map(Vec::len).sum()
    }

    pub fn clear(&mut self) {
        self.pending.clear();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdaterKind {
    Gru,
    Rnn,
}

enum UpdaterCell {
    Gru(GruCell),
    Rnn(RnnCell),
}

/// The full memory pipeline of one model: state table, raw message store and
/// the learnable update cell, plus the message assembly shared by all event
/// kinds.
pub struct MemoryModule {
    pub store: MemoryStore,
    pub raw: RawMessageStore,
    updater: UpdaterCell,
    kind: UpdaterKind,
    mem_dim: usize,
    edge_dim: usize,
    aux_dim: usize,
    msg_dim: usize,
}

impl MemoryModule {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        num_nodes: usize,
        mem_dim: usize,
        time_dim: usize,
        edge_dim: usize,
        aux_dim: usize,
        kind: UpdaterKind,
        mode: AggregatorMode,
    ) -> Self {
        // Interaction messages are [own ‖ counterpart ‖ φ(Δt) ‖ e (‖ aux)];
        // the message width is derived, not configured.
        let msg_dim = 2 * mem_dim + time_dim + edge_dim + aux_dim;
        let updater = match kind {
            UpdaterKind::Gru => UpdaterCell::Gru(GruCell::new(rng, msg_dim, mem_dim)),
            UpdaterKind::Rnn => UpdaterCell::Rnn(RnnCell::new(rng, msg_dim, mem_dim)),
        };
        MemoryModule {
            store: MemoryStore::new(num_nodes, mem_dim),
            raw: RawMessageStore::new(mode),
            updater,
            kind,
            mem_dim,
            edge_dim,
            aux_dim,
            msg_dim,
        }
    }

    pub fn message_dim(&self) -> usize {
        self.msg_dim
    }

    pub fn updater_kind(&self) -> UpdaterKind {
        self.kind
    }

    /// Assemble one message tensor from stored raw ingredients. The time
    /// delta is taken against the node's current clock and runs through the
    /// shared time encoder.
    pub fn compute_message(
        &self,
        tape: &Tape,
        time_enc: &TimeEncoder,
        msg: &RawMessage,
    ) -> Result<Tensor> {
        let delta = msg.timestamp - self.store.last_update(msg.node);
        let phi = time_enc.encode(tape, &[delta])?;
        let own = Tensor::row(msg.own_memory.clone())?;
        match msg.direction {
            MessageDirection::NodeWise => {
                if msg.features.len() != self.mem_dim {
                    return Err(ModelError::Config(format!(
                        "node-wise message features of length {}, memory dimension {}",
                        msg.features.len(),
                        self.mem_dim
                    )));
                }
                let node_feats = Tensor::row(msg.features.clone())?;
                // Zero-fill the slots an interaction message would occupy so
                // every message matches the updater's input width.
                let pad = self.msg_dim - (2 * self.mem_dim + time_enc.dim());
                let mut parts = vec![&own, &phi, &node_feats];
                let padding;
                if pad > 0 {
                    padding = Tensor::zeros(&[1, pad])?;
                    parts.push(&padding);
                }
                Ok(tape.concat(&parts, 1)?)
            }
            _ => {
                let counterpart = msg.counterpart_memory.as_ref().ok_or_else(|| {
                    ModelError::Config("interaction message without counterpart snapshot".into())
                })?;
                if msg.features.len() != self.edge_dim {
                    return Err(ModelError::Config(format!(
                        "edge features of length {}, expected {}",
                        msg.features.len(),
                        self.edge_dim
                    )));
                }
                let other = Tensor::row(counterpart.clone())?;
                let feats = Tensor::row(msg.features.clone())?;
                let mut parts = vec![&own, &other, &phi, &feats];
                let aux_t;
                if self.aux_dim > 0 {
                    let aux = msg.aux.clone().unwrap_or_else(|| vec![0.0; self.aux_dim]);
                    if aux.len() != self.aux_dim {
                        return Err(ModelError::Config(format!(
                            "message summary of length {}, expected {}",
                            aux.len(),
                            self.aux_dim
                        )));
                    }
                    aux_t = Tensor::row(aux)?;
                    parts.push(&aux_t);
                }
                Ok(tape.concat(&parts, 1)?)
            }
        }
    }

    /// Aggregate one node's messages: `Last` keeps the greatest
    /// (timestamp, ordinal), `Mean` averages elementwise. The aggregated
    /// timestamp is the maximum. Empty input is a caller bug.
    pub fn aggregate(
        &self,
        tape: &Tape,
        time_enc: &TimeEncoder,
        msgs: &[RawMessage],
    ) -> Result<(Tensor, f64)> {
        let Some(first) = msgs.first() else {
            return Err(ModelError::NoPendingMessages { node: usize::MAX });
        };
        debug_assert!(msgs.iter().all(|m| m.node == first.node));
        let t_max = msgs
            .iter()
            .map(|m| m.timestamp)
            .fold(f64::NEG_INFINITY, f64::max);
        match self.raw.mode() {
            AggregatorMode::Last => {
                let last = msgs
                    .iter()
                    .max_by(|a, b| {
                        (a.timestamp, a.ordinal)
                            .partial_cmp(&(b.timestamp, b.ordinal))
                            .unwrap()
                    })
                    .unwrap();
                Ok((self.compute_message(tape, time_enc, last)?, t_max))
            }
            AggregatorMode::Mean => {
                let mut acc = self.compute_message(tape, time_enc, &msgs[0])?;
                for msg in &msgs[1..] {
                    let m = self.compute_message(tape, time_enc, msg)?;
                    acc = tape.add(&acc, &m)?;
                }
                Ok((tape.mul_scalar(&acc, 1.0 / msgs.len() as Real), t_max))
            }
        }
    }

    /// Differentiable flush: aggregate the node's pending messages and run
    /// the update cell against its current state. Nothing is persisted; the
    /// caller commits the values after the batch loss is taken.
    pub fn flush_node(
        &self,
        tape: &Tape,
        time_enc: &TimeEncoder,
        node: NodeId,
    ) -> Result<(Tensor, f64)> {
        let msgs = self
            .raw
            .pending(node)
            .ok_or(ModelError::NoPendingMessages { node })?;
        let (aggregated, t_new) = self.aggregate(tape, time_enc, msgs)?;
        if t_new < self.store.last_update(node) {
            return Err(ModelError::OutOfOrderUpdate {
                node,
                timestamp: t_new,
                last: self.store.last_update(node),
            });
        }
        let s_prev = Tensor::row(self.store.state(node).to_vec())?;
        let updated = match &self.updater {
            UpdaterCell::Gru(cell) => cell.forward(tape, &aggregated, &s_prev)?,
            UpdaterCell::Rnn(cell) => cell.forward(tape, &aggregated, &s_prev)?,
        };
        Ok((updated, t_new))
    }

    /// Persist a flushed state and clear the node's pending messages in one
    /// step.
    pub fn commit(&mut self, node: NodeId, values: &[Real], t: f64) -> Result<()> {
        if !self.raw.has_pending(node) {
            return Err(ModelError::NoPendingMessages { node });
        }
        self.store.set(node, values, t)?;
        self.raw.take(node);
        Ok(())
    }

    pub fn reset(&mut self) {
        self.store.reset();
        self.raw.clear();
    }

    pub fn updater_params(&self) -> Vec<(&'static str, Tensor)> {
        match &self.updater {
            UpdaterCell::Gru(cell) => cell.params(),
            UpdaterCell::Rnn(cell) => cell.params(),
        }
    }

    // ── Checkpointing ───────────────────────────────────────────────────
    //
    // Line-oriented text, versioned. Floats are written in shortest
    // round-trip form, so save → load is exact.

    pub fn save_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "tgn-memory-v1")?;
        writeln!(w, "dim {}", self.mem_dim)?;
        writeln!(w, "nodes {}", self.store.num_nodes())?;
        let kind = match self.kind {
            UpdaterKind::Gru => "gru",
            UpdaterKind::Rnn => "rnn",
        };
        writeln!(w, "updater {kind}")?;
        for node in 0..self.store.num_nodes() {
            write!(w, "node {node} {}", self.store.last_update(node))?;
            for v in self.store.state(node) {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        for (name, p) in self.updater_params() {
            write!(w, "param {name} {}", p.numel())?;
            for v in p.to_vec() {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        writeln!(w, "end")?;
        Ok(())
    }

    pub fn load_checkpoint<R: Read>(&mut self, r: R) -> Result<()> {
        let reader = BufReader::new(r);
        let mut lines = reader.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .transpose()?
                .ok_or_else(|| ModelError::Checkpoint("unexpected end of file".into()))
        };
        if next()? != "tgn-memory-v1" {
            return Err(ModelError::Checkpoint("unknown version header".into()));
        }
        let expect_field = |line: &str, key: &str| -> Result<String> {
            line.strip_prefix(key)
                .and_then(|s| s.strip_prefix(' '))
                .map(str::to_owned)
                .ok_or_else(|| ModelError::Checkpoint(format!("expected `{key}` line, got {line:?}")))
        };
        let dim: usize = expect_field(&next()?, "dim")?
            .parse()
            .map_err(|_| ModelError::Checkpoint("bad dim".into()))?;
        if dim != self.mem_dim {
            return Err(ModelError::Checkpoint(format!(
                "dimension {dim} does not match model dimension {}",
                self.mem_dim
            )));
        }
        let nodes: usize = expect_field(&next()?, "nodes")?
            .parse()
            .map_err(|_| ModelError::Checkpoint("bad node count".into()))?;
        if nodes != self.store.num_nodes() {
            return Err(ModelError::Checkpoint(format!(
                "node count {nodes} does not match model {}",
                self.store.num_nodes()
            )));
        }
        let kind = expect_field(&next()?, "updater")?;
        let expected_kind = match self.kind {
            UpdaterKind::Gru => "gru",
            UpdaterKind::Rnn => "rnn",
        };
        if kind != expected_kind {
            return Err(ModelError::Checkpoint(format!(
                "updater {kind} does not match model updater {expected_kind}"
            )));
        }
        self.store.reset();
        for _ in 0..nodes {
            let line = next()?;
            let rest = expect_field(&line, "node")?;
            let mut fields = rest.split(' ');
            let parse_f64 = |s: Option<&str>| -> Result<f64> {
                s.and_then(|v| v.parse().ok())
                    .ok_or_else(|| ModelError::Checkpoint(format!("bad node line {line:?}")))
            };
            let id: usize = fields
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| ModelError::Checkpoint("bad node id".into()))?;
            let t = parse_f64(fields.next())?;
            let values: Vec<Real> = fields
                .map(|v| v.parse::<Real>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| ModelError::Checkpoint(format!("bad node values in {line:?}")))?;
            if values.len() != dim {
                return Err(ModelError::Checkpoint(format!(
                    "node {id} carries {} values, expected {dim}",
                    values.len()
                )));
            }
            self.store.set(id, &values, t)?;
        }
        for (name, p) in self.updater_params() {
            let line = next()?;
            let rest = expect_field(&line, "param")?;
            let mut fields = rest.split(' ');
            let got_name = fields
                .next()
                .ok_or_else(|| ModelError::Checkpoint("missing param name".into()))?;
            if got_name != name {
                return Err(ModelError::Checkpoint(format!(
                    "expected parameter {name}, got {got_name}"
                )));
            }
            let numel: usize = fields
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| ModelError::Checkpoint("bad param length".into()))?;
            if numel != p.numel() {
                return Err(ModelError::Checkpoint(format!(
                    "parameter {name} carries {numel} values, expected {}",
                    p.numel()
                )));
            }
            let values: Vec<Real> = fields
                .map(|v| v.parse::<Real>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| ModelError::Checkpoint(format!("bad param values for {name}")))?;
            if values.len() != numel {
                return Err(ModelError::Checkpoint(format!(
                    "parameter {name} line has {} values, expected {numel}",
                    values.len()
                )));
            }
            p.set_values(&values)?;
        }
        if next()? != "end" {
            return Err(ModelError::Checkpoint("missing end marker".into()));
        }
        Ok(())
    }
}
