use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;
use std::time::Instant;

use diffnum::{Adam, Mlp, MultiHeadAttention, Real, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use tgstore::{Event, EventKind, EventLog, NodeId, SplitSpec, TemporalAdjacency};

use crate::embed::{AttnLayer, EmbedCtx, Embedder, MemoryAccess};
use crate::error::{ModelError, Result};
use crate::memory::{MemoryModule, MemoryStore, MessageDirection, RawMessage, RawMessageStore};
use crate::metrics::{average_precision, roc_auc};
use crate::time_enc::TimeEncoder;
use crate::variant::{MessageKind, VariantConfig};
use crate::Hyperparams;

#[derive(Debug, Clone)]
pub struct Metrics {
    pub loss: f64,
    pub ap: f64,
    pub auc: f64,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSetting {
    /// Score every interaction in the segment.
    Transductive,
    /// Score only interactions touching a node unseen during training.
    Inductive,
}

#[derive(Debug, Clone)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train: Metrics,
    pub val: Metrics,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

#[derive(Debug, Clone)]
pub struct NodeClassReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub val_auc: f64,
    pub test_auc: f64,
}

/// Independent deterministic generator per purpose, derived from the run
/// seed. Keeps negative sampling, dropout and initialization streams apart.
fn stream(seed: u64, label: &str) -> ChaCha12Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    let bytes = label.as_bytes();
    let n = bytes.len().min(24);
    key[8..8 + n].copy_from_slice(&bytes[..n]);
    ChaCha12Rng::from_seed(key)
}

fn sigmoid(x: Real) -> f64 {
    #[allow(clippy::unnecessary_cast)] // Real may be f32
    let x = x as f64;
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-batch memory view: persisted states overlaid with differentiable
/// flushes of pending raw messages, computed once per node and shared by
/// every embedding in the batch.
struct BatchMemory<'a> {
    module: Option<&'a MemoryModule>,
    time_enc: &'a TimeEncoder,
    mem_dim: usize,
    cache: BTreeMap<NodeId, (Tensor, f64)>,
}

impl<'a> BatchMemory<'a> {
    fn new(module: Option<&'a MemoryModule>, time_enc: &'a TimeEncoder, mem_dim: usize) -> Self {
        BatchMemory {
            module,
            time_enc,
            mem_dim,
            cache: BTreeMap::new(),
        }
    }
}

impl MemoryAccess for BatchMemory<'_> {
    fn memory_row(&mut self, tape: &Tape, node: NodeId) -> Result<(Tensor, f64)> {
        if let Some(entry) = self.cache.get(&node) {
            return Ok(entry.clone());
        }
        let entry = match self.module {
            None => (Tensor::zeros(&[1, self.mem_dim])?, 0.0),
            Some(m) => {
                if m.raw.has_pending(node) {
                    m.flush_node(tape, self.time_enc, node)?
                } else {
                    (
                        Tensor::row(m.store.state(node).to_vec())?,
                        m.store.last_update(node),
                    )
                }
            }
        };
        self.cache.insert(node, entry.clone());
        Ok(entry)
    }
}

/// Memory view over committed states only, for message augmentation
/// summaries taken after the batch update.
struct PersistedMemory<'a>(&'a MemoryModule);

impl MemoryAccess for PersistedMemory<'_> {
    fn memory_row(&mut self, _tape: &Tape, node: NodeId) -> Result<(Tensor, f64)> {
        Ok((
            Tensor::row(self.0.store.state(node).to_vec())?,
            self.0.store.last_update(node),
        ))
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum BatchMode {
    Train,
    Eval,
    /// Memory pipeline only: no embeddings, no scoring, no gradients.
    Replay,
}

struct BatchOutput {
    loss: f64,
    interactions: usize,
    /// (probability, label, touches-inductive-node) per scored edge.
    scores: Vec<(f64, bool, bool)>,
}

/// A variant assembled into a runnable model: memory pipeline, embedding
/// module, link decoder and the optimizer over every learnable tensor.
pub struct TgnModel {
    variant: VariantConfig,
    hp: Hyperparams,
    seed: u64,
    time_enc: TimeEncoder,
    memory: Option<MemoryModule>,
    embedder: Embedder,
    link_decoder: Mlp,
    /// Attention layer producing message-augmentation summaries.
    augmenter: Option<Embedder>,
    params: Vec<(String, Tensor)>,
    optimizer: Adam,
    rng: ChaCha12Rng,
    mem_dim: usize,
    z_dim: usize,
    num_nodes: usize,
}

impl TgnModel {
    pub fn new(
        log: &EventLog,
        variant: VariantConfig,
        hp: Hyperparams,
        seed: u64,
    ) -> Result<TgnModel> {
        variant.validate()?;
        if hp.memory_dim == 0 || hp.time_dim == 0 || hp.embedding_dim == 0 {
            return Err(ModelError::Config("dimensions must be positive".into()));
        }
        let node_feat_dim = log.node_feature_dim();
        if node_feat_dim != 0 && node_feat_dim != hp.memory_dim {
            return Err(ModelError::Config(format!(
                "node features of width {node_feat_dim} need memory dimension {node_feat_dim}"
            )));
        }
        let mut init_rng = stream(seed, "init");
        let time_enc = TimeEncoder::new(hp.time_dim);
        let edge_dim = log.edge_feature_dim();
        let aux_dim = match variant.message {
            MessageKind::AttentionAugmented => hp.memory_dim,
            MessageKind::Identity => 0,
        };
        let memory = match (&variant.memory, variant.updater, variant.aggregator_mode()) {
            (true, Some(updater), Some(mode)) => Some(MemoryModule::new(
                &mut init_rng,
                log.num_nodes(),
                hp.memory_dim,
                hp.time_dim,
                edge_dim,
                aux_dim,
                updater,
                mode,
            )),
            _ => None,
        };
        let embedder = Embedder::new(
            &mut init_rng,
            variant.embedding,
            hp.memory_dim,
            hp.time_dim,
            edge_dim,
            hp.embedding_dim,
            hp.heads,
        )?;
        let augmenter = match variant.message {
            MessageKind::AttentionAugmented => Some(Embedder::Attention {
                layers: vec![AttnLayer {
                    mha: MultiHeadAttention::new(
                        &mut init_rng,
                        hp.memory_dim + hp.time_dim,
                        hp.memory_dim + edge_dim + hp.time_dim,
                        hp.memory_dim + hp.time_dim,
                        hp.heads,
                    )?,
                    merge: Mlp::new(
                        &mut init_rng,
                        2 * hp.memory_dim + hp.time_dim,
                        hp.memory_dim,
                        hp.memory_dim,
                    ),
                }],
                neighbors: 10,
            }),
            MessageKind::Identity => None,
        };
        let z_dim = embedder.out_dim(hp.memory_dim);
        let link_decoder = Mlp::new(&mut init_rng, 2 * z_dim, z_dim, 1);

        let mut params: Vec<(String, Tensor)> = Vec::new();
        for (n, p) in time_enc.params() {
            params.push((format!("time.{n}"), p));
        }
        if let Some(m) = &memory {
            for (n, p) in m.updater_params() {
                params.push((format!("memory.{n}"), p));
            }
        }
        for (n, p) in embedder.params() {
            params.push((format!("embed.{n}"), p));
        }
        for (n, p) in link_decoder.params() {
            params.push((format!("decoder.{n}"), p));
        }
        if let Some(aug) = &augmenter {
            for (n, p) in aug.params() {
                params.push((format!("augment.{n}"), p));
            }
        }
        let optimizer = Adam::new(
            &params.iter().map(|(_, p)| p.clone()).collect::<Vec<_>>(),
            hp.learning_rate,
        );
        let mem_dim = hp.memory_dim;
        Ok(TgnModel {
            variant,
            hp,
            seed,
            time_enc,
            memory,
            embedder,
            link_decoder,
            augmenter,
            params,
            optimizer,
            rng: stream(seed, "train"),
            mem_dim,
            z_dim,
            num_nodes: log.num_nodes(),
        })
    }

    pub fn variant(&self) -> &VariantConfig {
        &self.variant
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hp
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn embedding_dim(&self) -> usize {
        self.z_dim
    }

    pub fn memory(&self) -> Option<&MemoryModule> {
        self.memory.as_ref()
    }

    pub fn memory_mut(&mut self) -> Option<&mut MemoryModule> {
        self.memory.as_mut()
    }

    pub fn param_names(&self) -> Vec<&str> {
        self.params.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn params(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|(_, p)| p.numel()).sum()
    }

    pub fn snapshot_params(&self) -> Vec<Vec<Real>> {
        self.params.iter().map(|(_, p)| p.to_vec()).collect()
    }

    pub fn restore_params(&self, snapshot: &[Vec<Real>]) -> Result<()> {
        if snapshot.len() != self.params.len() {
            return Err(ModelError::Config("parameter snapshot length mismatch".into()));
        }
        for ((_, p), values) in self.params.iter().zip(snapshot) {
            p.set_values(values)?;
        }
        Ok(())
    }

    /// Zero the memory table and drop all pending raw messages.
    pub fn reset_memory(&mut self) {
        if let Some(m) = &mut self.memory {
            m.reset();
        }
    }

    /// Committed states overlaid with a no-gradient flush of every pending
    /// message: the exact per-node memory any prediction in the next batch
    /// would read.
    pub fn effective_memory_table(&self) -> Result<BTreeMap<NodeId, (Vec<Real>, f64)>> {
        effective_table(self.memory.as_ref(), &self.time_enc, self.num_nodes, self.mem_dim)
    }

    // ── Batch pipeline ──────────────────────────────────────────────────

    fn process_batch(
        &mut self,
        log: &EventLog,
        adj: &TemporalAdjacency,
        events: &[Event],
        negatives: &[NodeId],
        mode: BatchMode,
        split: Option<&SplitSpec>,
    ) -> Result<BatchOutput> {
        for pair in events.windows(2) {
            if pair[1].timestamp < pair[0].timestamp {
                return Err(ModelError::Store(tgstore::StoreError::OutOfOrder {
                    ordinal: pair[1].ordinal,
                    timestamp: pair[1].timestamp,
                    previous: pair[0].timestamp,
                }));
            }
        }
        let interactions: Vec<&Event> = events
            .iter()
            .filter(|e| e.kind == EventKind::Interaction)
            .collect();
        if mode != BatchMode::Replay && negatives.len() != interactions.len() {
            return Err(ModelError::Config(format!(
                "{} negatives for {} interactions",
                negatives.len(),
                interactions.len()
            )));
        }

        let tape = match mode {
            BatchMode::Train => Tape::new(),
            _ => Tape::inference(),
        };
        let mut batch_mem = BatchMemory::new(self.memory.as_ref(), &self.time_enc, self.mem_dim);

        // Nodes whose memory this batch updates.
        let mut touched: BTreeSet<NodeId> = BTreeSet::new();
        for e in events {
            match e.kind {
                EventKind::Interaction | EventKind::EdgeDeletion => {
                    touched.insert(e.source);
                    touched.insert(e.target.expect("edge event has target"));
                }
                EventKind::NodeUpdate => {
                    touched.insert(e.source);
                }
                EventKind::NodeDeletion => {}
            }
        }

        // Flush pending messages for the batch's nodes up front; embeddings
        // below share the same updated rows through the cache.
        if self.memory.is_some() {
            for &node in &touched {
                batch_mem.memory_row(&tape, node)?;
            }
        }

        // Score the batch interactions against sampled negatives.
        let mut pos_logits: Vec<Tensor> = Vec::with_capacity(interactions.len());
        let mut neg_logits: Vec<Tensor> = Vec::with_capacity(interactions.len());
        let mut scores: Vec<(f64, bool, bool)> = Vec::new();
        if mode != BatchMode::Replay {
            let ctx = EmbedCtx {
                tape: &tape,
                log,
                adj,
                time_enc: &self.time_enc,
                sampling: self.variant.sampling,
                dropout: self.hp.dropout,
                train: mode == BatchMode::Train,
            };
            for (event, &neg) in interactions.iter().zip(negatives) {
                let dst = event.target.expect("interaction has target");
                let exclude = Some(event.ordinal);
                let z_src = self.embedder.embed(
                    &ctx,
                    &mut batch_mem,
                    &mut self.rng,
                    event.source,
                    event.timestamp,
                    exclude,
                )?;
                let z_dst = self.embedder.embed(
                    &ctx,
                    &mut batch_mem,
                    &mut self.rng,
                    dst,
                    event.timestamp,
                    exclude,
                )?;
                let z_neg = self.embedder.embed(
                    &ctx,
                    &mut batch_mem,
                    &mut self.rng,
                    neg,
                    event.timestamp,
                    exclude,
                )?;
                let pos_in = tape.concat(&[&z_src, &z_dst], 1)?;
                let neg_in = tape.concat(&[&z_src, &z_neg], 1)?;
                pos_logits.push(self.link_decoder.forward(&tape, &pos_in)?);
                neg_logits.push(self.link_decoder.forward(&tape, &neg_in)?);
            }
        }

        let mut loss_value = 0.0;
        if !pos_logits.is_empty() {
            let all: Vec<&Tensor> = pos_logits.iter().chain(neg_logits.iter()).collect();
            let logits = tape.concat(&all, 0)?;
            let mut labels = vec![1.0 as Real; pos_logits.len()];
            labels.extend(vec![0.0 as Real; neg_logits.len()]);
            let labels = Tensor::new(&[labels.len(), 1], labels)?;
            let loss = tape.bce_with_logits(&logits, &labels)?;
            loss_value = loss.scalar_value()? as f64;
            if mode == BatchMode::Train {
                for (_, p) in &self.params {
                    p.zero_grad();
                }
                tape.backward(&loss)?;
                let tensors: Vec<Tensor> = self.params.iter().map(|(_, p)| p.clone()).collect();
                self.optimizer.step(&tensors)?;
            }
            for (event, &neg) in interactions.iter().zip(negatives) {
                let _ = neg;
                let inductive = split.is_some_and(|s| {
                    s.is_inductive_event(event.source, event.target)
                });
                scores.push((0.0, true, inductive));
                scores.push((0.0, false, inductive));
            }
            for (i, slot) in scores.iter_mut().enumerate() {
                let logit = if i % 2 == 0 {
                    pos_logits[i / 2].scalar_value()?
                } else {
                    neg_logits[i / 2].scalar_value()?
                };
                slot.0 = sigmoid(logit);
            }
        }

        // Persist the flushed states of the batch's nodes, then store this
        // batch's raw messages with post-update snapshots.
        let commits: Vec<(NodeId, Vec<Real>, f64)> = touched
            .iter()
            .filter(|&&n| {
                self.memory
                    .as_ref()
                    .is_some_and(|m| m.raw.has_pending(n))
            })
            .map(|&n| {
                let (tensor, t) = batch_mem.cache.get(&n).expect("pre-flushed").clone();
                (n, tensor.to_vec(), t)
            })
            .collect();
        drop(batch_mem);
        if let Some(module) = &mut self.memory {
            for (node, values, t) in commits {
                module.commit(node, &values, t)?;
            }
        }
        if self.memory.is_some() {
            self.store_raw_messages(log, adj, events)?;
        }

        Ok(BatchOutput {
            loss: loss_value,
            interactions: interactions.len(),
            scores,
        })
    }

    /// Append this batch's raw messages with snapshots of the just-committed
    /// memory. Interactions message both endpoints; feature updates message
    /// their node; edge deletions message both endpoints through the
    /// deletion slots; node deletions only tombstone the graph.
    fn store_raw_messages(
        &mut self,
        log: &EventLog,
        adj: &TemporalAdjacency,
        events: &[Event],
    ) -> Result<()> {
        for event in events {
            match event.kind {
                EventKind::Interaction | EventKind::EdgeDeletion => {
                    let (src_dir, dst_dir) = if event.kind == EventKind::Interaction {
                        (MessageDirection::Source, MessageDirection::Destination)
                    } else {
                        (
                            MessageDirection::DeletionSource,
                            MessageDirection::DeletionDestination,
                        )
                    };
                    let dst = event.target.expect("edge event has target");
                    let aux_src = self.augment_summary(log, adj, dst, event)?;
                    let aux_dst = self.augment_summary(log, adj, event.source, event)?;
                    let module = self.memory.as_mut().expect("caller checked memory");
                    let own = module.store.state(event.source).to_vec();
                    let other = module.store.state(dst).to_vec();
                    module.raw.push(RawMessage {
                        node: event.source,
                        own_memory: own.clone(),
                        counterpart_memory: Some(other.clone()),
                        timestamp: event.timestamp,
                        ordinal: event.ordinal,
                        features: event.features.clone(),
                        direction: src_dir,
                        aux: aux_src,
                    });
                    module.raw.push(RawMessage {
                        node: dst,
                        own_memory: other,
                        counterpart_memory: Some(own),
                        timestamp: event.timestamp,
                        ordinal: event.ordinal,
                        features: event.features.clone(),
                        direction: dst_dir,
                        aux: aux_dst,
                    });
                }
                EventKind::NodeUpdate => {
                    let module = self.memory.as_mut().expect("caller checked memory");
                    module.raw.push(RawMessage {
                        node: event.source,
                        own_memory: module.store.state(event.source).to_vec(),
                        counterpart_memory: None,
                        timestamp: event.timestamp,
                        ordinal: event.ordinal,
                        features: event.features.clone(),
                        direction: MessageDirection::NodeWise,
                        aux: None,
                    });
                }
                EventKind::NodeDeletion => {}
            }
        }
        Ok(())
    }

    /// Attention summary of the counterpart's temporal neighborhood at the
    /// event time, stored detached inside the raw message.
    fn augment_summary(
        &mut self,
        log: &EventLog,
        adj: &TemporalAdjacency,
        counterpart: NodeId,
        event: &Event,
    ) -> Result<Option<Vec<Real>>> {
        let Some(aug) = &self.augmenter else {
            return Ok(None);
        };
        let module = self.memory.as_ref().expect("augmented messages need memory");
        let tape = Tape::inference();
        let ctx = EmbedCtx {
            tape: &tape,
            log,
            adj,
            time_enc: &self.time_enc,
            sampling: self.variant.sampling,
            dropout: 0.0,
            train: false,
        };
        let mut mem = PersistedMemory(module);
        let summary = aug.embed(
            &ctx,
            &mut mem,
            &mut self.rng,
            counterpart,
            event.timestamp,
            Some(event.ordinal),
        )?;
        Ok(Some(summary.to_vec()))
    }

    // ── Training and evaluation ─────────────────────────────────────────

    /// One pass over a chronological slice in batch order, with one uniform
    /// negative destination per interaction. Memory must be reset by the
    /// caller at epoch boundaries.
    pub fn train_epoch(
        &mut self,
        log: &EventLog,
        adj: &TemporalAdjacency,
        range: Range<usize>,
        negative_pool: &[NodeId],
    ) -> Result<Metrics> {
        self.run_segment(log, adj, range, negative_pool, BatchMode::Train, None, None)
    }

    #[allow(clippy::too_many_arguments)]
    fn run_segment(
        &mut self,
        log: &EventLog,
        adj: &TemporalAdjacency,
        range: Range<usize>,
        negative_pool: &[NodeId],
        mode: BatchMode,
        split: Option<&SplitSpec>,
        eval_rng: Option<&mut ChaCha12Rng>,
    ) -> Result<Metrics> {
        if range.is_empty() {
            return Err(ModelError::EmptySegment("event"));
        }
        if negative_pool.is_empty() {
            return Err(ModelError::Config("empty negative-sampling pool".into()));
        }
        let started = Instant::now();
        let mut all_scores: Vec<(f64, bool, bool)> = Vec::new();
        let mut loss_sum = 0.0;
        let mut weight = 0usize;
        let mut own_rng = None;
        let rng: &mut ChaCha12Rng = match eval_rng {
            Some(r) => r,
            None => {
                // Training draws negatives from the model's own stream.
                own_rng = Some(self.rng.clone());
                own_rng.as_mut().unwrap()
            }
        };
        let events = log.events();
        let mut start = range.start;
        while start < range.end {
            let end = (start + self.hp.batch_size).min(range.end);
            let batch = &events[start..end];
            let negatives: Vec<NodeId> = batch
                .iter()
                .filter(|e| e.kind == EventKind::Interaction)
                .map(|_| negative_pool[rng.gen_range(0..negative_pool.len())])
                .collect();
            let out = self.process_batch(log, adj, batch, &negatives, mode, split)?;
            loss_sum += out.loss * out.interactions as f64;
            weight += out.interactions;
            all_scores.extend(out.scores);
            start = end;
        }
        if let Some(r) = own_rng {
            self.rng = r;
        }
        if weight == 0 {
            return Err(ModelError::EmptySegment("interaction"));
        }
        let (s, l): (Vec<f64>, Vec<bool>) =
            all_scores.iter().map(|&(p, label, _)| (p, label)).unzip();
        Ok(Metrics {
            loss: loss_sum / weight as f64,
            ap: average_precision(&s, &l)?,
            auc: roc_auc(&s, &l)?,
            wall_clock_secs: started.elapsed().as_secs_f64(),
        })
    }

    /// Score a segment without parameter updates. Memory keeps evolving with
    /// the observed interactions; sampled negatives never touch it.
    #[allow(clippy::too_many_arguments)]
    pub fn evaluate(
        &mut self,
        log: &EventLog,
        adj: &TemporalAdjacency,
        range: Range<usize>,
        negative_pool: &[NodeId],
        split: &SplitSpec,
        setting: EvalSetting,
        rng_label: &str,
    ) -> Result<Metrics> {
        let (transductive, inductive) =
            self.evaluate_both(log, adj, range, negative_pool, split, rng_label)?;
        match setting {
            EvalSetting::Transductive => Ok(transductive),
            EvalSetting::Inductive => inductive.ok_or(ModelError::EmptySegment("inductive")),
        }
    }

    /// One evaluation pass producing transductive metrics and, when the
    /// segment contains interactions of unseen nodes, inductive metrics.
    pub fn evaluate_both(
        &mut self,
        log: &EventLog,
        adj: &TemporalAdjacency,
        range: Range<usize>,
        negative_pool: &[NodeId],
        split: &SplitSpec,
        rng_label: &str,
    ) -> Result<(Metrics, Option<Metrics>)> {
        if range.is_empty() {
            return Err(ModelError::EmptySegment("evaluation"));
        }
        let started = Instant::now();
        let mut eval_rng = stream(self.seed, rng_label);
        let mut all_scores: Vec<(f64, bool, bool)> = Vec::new();
        let mut loss_sum = 0.0;
        let mut weight = 0usize;
        let events = log.events();
        let mut start = range.start;
        while start < range.end {
            let end = (start + self.hp.batch_size).min(range.end);
            let batch = &events[start..end];
            let negatives: Vec<NodeId> = batch
                .iter()
                .filter(|e| e.kind == EventKind::Interaction)
                .map(|_| negative_pool[eval_rng.gen_range(0..negative_pool.len())])
                .collect();
            let out = self.process_batch(
                log,
                adj,
                batch,
                &negatives,
                BatchMode::Eval,
                Some(split),
            )?;
            loss_sum += out.loss * out.interactions as f64;
            weight += out.interactions;
            all_scores.extend(out.scores);
            start = end;
        }
        if weight == 0 {
            return Err(ModelError::EmptySegment("interaction"));
        }
        let elapsed = started.elapsed().as_secs_f64();
        let metrics_of = |scores: &[(f64, bool, bool)]| -> Result<Metrics> {
            let (s, l): (Vec<f64>, Vec<bool>) =
                scores.iter().map(|&(p, label, _)| (p, label)).unzip();
            Ok(Metrics {
                loss: loss_sum / weight as f64,
                ap: average_precision(&s, &l)?,
                auc: roc_auc(&s, &l)?,
                wall_clock_secs: elapsed,
            })
        };
        let transductive = metrics_of(&all_scores)?;
        let inductive_scores: Vec<(f64, bool, bool)> = all_scores
            .iter()
            .copied()
            .filter(|&(_, _, ind)| ind)
            .collect();
        let inductive = if inductive_scores.is_empty() {
            None
        } else {
            Some(metrics_of(&inductive_scores)?)
        };
        Ok((transductive, inductive))
    }

    /// One-off embedding of a node at a query time against the current
    /// memory, on an inference tape. Uses a probe-local random stream, so it
    /// neither mutates model state nor perturbs training randomness.
    pub fn embed_at(
        &self,
        log: &EventLog,
        adj: &TemporalAdjacency,
        node: NodeId,
        t: f64,
    ) -> Result<Vec<Real>> {
        let tape = Tape::inference();
        let mut batch_mem = BatchMemory::new(self.memory.as_ref(), &self.time_enc, self.mem_dim);
        let ctx = EmbedCtx {
            tape: &tape,
            log,
            adj,
            time_enc: &self.time_enc,
            sampling: self.variant.sampling,
            dropout: 0.0,
            train: false,
        };
        let mut rng = stream(self.seed, "embed-probe");
        let z = self
            .embedder
            .embed(&ctx, &mut batch_mem, &mut rng, node, t, None)?;
        Ok(z.to_vec())
    }

    /// Run the memory pipeline over a slice without scoring anything:
    /// flush, commit, store raw messages. Used to warm memory before test
    /// evaluation and by the leakage probe.
    pub fn replay_memory(
        &mut self,
        log: &EventLog,
        adj: &TemporalAdjacency,
        range: Range<usize>,
    ) -> Result<()> {
        let events = log.events();
        let mut start = range.start;
        while start < range.end {
            let end = (start + self.hp.batch_size).min(range.end);
            self.process_batch(
                log,
                adj,
                &events[start..end],
                &[],
                BatchMode::Replay,
                None,
            )?;
            start = end;
        }
        Ok(())
    }

    /// Full training loop: zero the memory each epoch, sweep the training
    /// segment, validate on the following segment with memory warm, and stop
    /// early after `patience` epochs without validation improvement. The
    /// best-validation parameters are restored before returning, together
    /// with the memory state as of that epoch's validation pass, so test
    /// scoring continues the exact state the reported validation metrics
    /// were measured on.
    pub fn train(
        &mut self,
        log: &EventLog,
        adj: &TemporalAdjacency,
        split: &SplitSpec,
        epochs: usize,
    ) -> Result<TrainReport> {
        let train_pool = training_destinations(log, split);
        let all_pool = log.destinations().to_vec();
        if epochs == 0 {
            return Ok(TrainReport {
                epochs: Vec::new(),
                best_epoch: None,
                stopped_early: false,
            });
        }
        if train_pool.is_empty() {
            return Err(ModelError::EmptySegment("training destination"));
        }
        let mut report = TrainReport {
            epochs: Vec::new(),
            best_epoch: None,
            stopped_early: false,
        };
        let mut best_ap = f64::NEG_INFINITY;
        let mut best_params = self.snapshot_params();
        let mut best_memory = self.memory_state();
        let mut stale = 0usize;
        for epoch in 1..=epochs {
            self.reset_memory();
            let train =
                self.train_epoch(log, adj, split.train.clone(), &train_pool)?;
            let (val, _) = self.evaluate_both(
                log,
                adj,
                split.val.clone(),
                &all_pool,
                split,
                &format!("val-{epoch}"),
            )?;
            let improved = val.ap > best_ap;
            if improved {
                best_ap = val.ap;
                best_params = self.snapshot_params();
                best_memory = self.memory_state();
                report.best_epoch = Some(epoch);
                stale = 0;
            } else {
                stale += 1;
            }
            report.epochs.push(EpochMetrics { epoch, train, val });
            if stale >= self.hp.patience {
                report.stopped_early = true;
                break;
            }
        }
        self.restore_params(&best_params)?;
        self.restore_memory_state(best_memory);
        Ok(report)
    }

    /// Clone of the memory table and pending raw messages.
    pub fn memory_state(&self) -> Option<(MemoryStore, RawMessageStore)> {
        self.memory
            .as_ref()
            .map(|m| (m.store.clone(), m.raw.clone()))
    }

    pub fn restore_memory_state(&mut self, state: Option<(MemoryStore, RawMessageStore)>) {
        if let (Some(module), Some((store, raw))) = (self.memory.as_mut(), state) {
            module.store = store;
            module.raw = raw;
        }
    }

    /// Frozen-encoder embeddings for every interaction source, collected in
    /// one chronological replay from zero memory.
    pub fn collect_source_embeddings(
        &mut self,
        log: &EventLog,
        adj: &TemporalAdjacency,
    ) -> Result<Vec<(usize, Vec<Real>, u8)>> {
        self.reset_memory();
        let mut collected = Vec::new();
        let events = log.events();
        let mut start = 0;
        while start < events.len() {
            let end = (start + self.hp.batch_size).min(events.len());
            let batch = &events[start..end];
            {
                let tape = Tape::inference();
                let mut batch_mem =
                    BatchMemory::new(self.memory.as_ref(), &self.time_enc, self.mem_dim);
                let ctx = EmbedCtx {
                    tape: &tape,
                    log,
                    adj,
                    time_enc: &self.time_enc,
                    sampling: self.variant.sampling,
                    dropout: self.hp.dropout,
                    train: false,
                };
                for event in batch {
                    if event.kind != EventKind::Interaction {
                        continue;
                    }
                    let z = self.embedder.embed(
                        &ctx,
                        &mut batch_mem,
                        &mut self.rng,
                        event.source,
                        event.timestamp,
                        Some(event.ordinal),
                    )?;
                    collected.push((event.ordinal, z.to_vec(), event.state_label));
                }
            }
            // Advance memory exactly as scoring would.
            self.process_batch(log, adj, batch, &[], BatchMode::Replay, None)?;
            start = end;
        }
        Ok(collected)
    }

    /// Train a classifier head on frozen embeddings and report ROC AUC on
    /// the chronological test segment.
    pub fn node_classification(
        &mut self,
        log: &EventLog,
        adj: &TemporalAdjacency,
        split: &SplitSpec,
        epochs: usize,
    ) -> Result<NodeClassReport> {
        let embeddings = self.collect_source_embeddings(log, adj)?;
        let in_range = |r: &Range<usize>, o: usize| r.contains(&o);
        let subset = |r: &Range<usize>| -> (Vec<Vec<Real>>, Vec<bool>) {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for (ordinal, z, label) in &embeddings {
                if in_range(r, *ordinal) {
                    xs.push(z.clone());
                    ys.push(*label == 1);
                }
            }
            (xs, ys)
        };
        let (train_x, train_y) = subset(&split.train);
        let (val_x, val_y) = subset(&split.val);
        let (test_x, test_y) = subset(&split.test);
        if train_x.is_empty() || val_x.is_empty() || test_x.is_empty() {
            return Err(ModelError::EmptySegment("node classification"));
        }

        let mut rng = stream(self.seed, "node-head");
        let head = Mlp::new(&mut rng, self.z_dim, self.z_dim, 1);
        let head_params: Vec<Tensor> = head.params().into_iter().map(|(_, p)| p).collect();
        let mut opt = Adam::new(&head_params, self.hp.learning_rate);

        let score_set = |head: &Mlp, xs: &[Vec<Real>]| -> Result<Vec<f64>> {
            let tape = Tape::inference();
            let flat: Vec<Real> = xs.iter().flatten().copied().collect();
            let x = Tensor::new(&[xs.len(), self.z_dim], flat)?;
            let logits = head.forward(&tape, &x)?;
            Ok(logits.to_vec().iter().map(|&v| sigmoid(v)).collect())
        };

        let mut best = (0usize, f64::NEG_INFINITY);
        let mut best_params: Vec<Vec<Real>> = head_params.iter().map(Tensor::to_vec).collect();
        let mut stale = 0usize;
        let mut epochs_run = 0usize;
        for epoch in 1..=epochs.max(1) {
            epochs_run = epoch;
            let mut start = 0;
            while start < train_x.len() {
                let end = (start + self.hp.batch_size).min(train_x.len());
                let tape = Tape::new();
                let flat: Vec<Real> = train_x[start..end].iter().flatten().copied().collect();
                let x = Tensor::new(&[end - start, self.z_dim], flat)?;
                let labels: Vec<Real> = train_y[start..end]
                    .iter()
                    .map(|&b| if b { 1.0 } else { 0.0 })
                    .collect();
                let labels = Tensor::new(&[end - start, 1], labels)?;
                let logits = head.forward(&tape, &x)?;
                let loss = tape.bce_with_logits(&logits, &labels)?;
                for p in &head_params {
                    p.zero_grad();
                }
                tape.backward(&loss)?;
                opt.step(&head_params)?;
                start = end;
            }
            let val_auc = roc_auc(&score_set(&head, &val_x)?, &val_y)?;
            if val_auc > best.1 {
                best = (epoch, val_auc);
                best_params = head_params.iter().map(Tensor::to_vec).collect();
                stale = 0;
            } else {
                stale += 1;
            }
            if stale >= self.hp.patience {
                break;
            }
        }
        for (p, values) in head_params.iter().zip(&best_params) {
            p.set_values(values)?;
        }
        let test_auc = roc_auc(&score_set(&head, &test_x)?, &test_y)?;
        Ok(NodeClassReport {
            epochs_run,
            best_epoch: best.0,
            val_auc: best.1,
            test_auc,
        })
    }
}

/// Destinations of training-segment interactions, deduplicated and sorted.
pub fn training_destinations(log: &EventLog, split: &SplitSpec) -> Vec<NodeId> {
    let mut pool: Vec<NodeId> = log.events()[split.train.clone()]
        .iter()
        .filter(|e| e.kind == EventKind::Interaction)
        .filter_map(|e| e.target)
        .collect();
    pool.sort_unstable();
    pool.dedup();
    pool
}

fn effective_table(
    memory: Option<&MemoryModule>,
    time_enc: &TimeEncoder,
    num_nodes: usize,
    mem_dim: usize,
) -> Result<BTreeMap<NodeId, (Vec<Real>, f64)>> {
    let mut table = BTreeMap::new();
    match memory {
        None => {
            for node in 0..num_nodes {
                table.insert(node, (vec![0.0; mem_dim], 0.0));
            }
        }
        Some(m) => {
            let tape = Tape::inference();
            for node in 0..num_nodes {
                let entry = if m.raw.has_pending(node) {
                    let (tensor, t) = m.flush_node(&tape, time_enc, node)?;
                    (tensor.to_vec(), t)
                } else {
                    (m.store.state(node).to_vec(), m.store.last_update(node))
                };
                table.insert(node, entry);
            }
        }
    }
    Ok(table)
}

/// Delete-and-replay check: for every batch and every interaction e in it,
/// rebuilding the run without e and stopping at e's batch must produce a
/// bit-identical effective memory table (parameters frozen, no optimizer
/// steps). Returns the number of (batch, event) pairs checked.
pub fn memory_independence_check(
    log: &EventLog,
    adj: &TemporalAdjacency,
    variant: &VariantConfig,
    hp: &Hyperparams,
    seed: u64,
) -> Result<usize> {
    let events = log.events();
    let batch = hp.batch_size;
    let mut checked = 0usize;

    let table_at_batch = |skip: Option<usize>, upto_batch: usize| -> Result<_> {
        let mut model = TgnModel::new(log, variant.clone(), hp.clone(), seed)?;
        for b in 0..upto_batch {
            let start = b * batch;
            let end = ((b + 1) * batch).min(events.len());
            let slice: Vec<Event> = events[start..end]
                .iter()
                .filter(|e| Some(e.ordinal) != skip)
                .cloned()
                .collect();
            model.process_batch(log, adj, &slice, &[], BatchMode::Replay, None)?;
        }
        // Capture the table the next batch's predictions would read.
        model.effective_memory_table()
    };

    let num_batches = events.len().div_ceil(batch);
    for b in 0..num_batches {
        let baseline = table_at_batch(None, b)?;
        let start = b * batch;
        let end = ((b + 1) * batch).min(events.len());
        for event in &events[start..end] {
            if event.kind != EventKind::Interaction {
                continue;
            }
            // e sits in batch b, which has not been applied yet; its removal
            // must leave the table untouched bit for bit.
            let without = table_at_batch(Some(event.ordinal), b)?;
            if !tables_bit_identical(&baseline, &without) {
                return Err(ModelError::Config(format!(
                    "memory table depends on interaction {} in batch {b}",
                    event.ordinal
                )));
            }
            checked += 1;
        }
    }
    Ok(checked)
}

fn tables_bit_identical(
    a: &BTreeMap<NodeId, (Vec<Real>, f64)>,
    b: &BTreeMap<NodeId, (Vec<Real>, f64)>,
) -> bool {
    if a.len() != b.len() {
        return false;
    }
    a.iter().zip(b.iter()).all(|((na, (va, ta)), (nb, (vb, tb)))| {
        na == nb
            && ta.to_bits() == tb.to_bits()
            && va.len() == vb.len()
            && va.iter().zip(vb).all(|(x, y)| x.to_bits() == y.to_bits())
    })
}
