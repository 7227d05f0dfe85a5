use diffnum::{glorot_uniform, Mlp, MultiHeadAttention, Real, Tape, Tensor};
use rand::Rng;
use tgstore::{EventLog, NodeId, SamplingStrategy, TemporalAdjacency};

use crate::error::{ModelError, Result};
use crate::time_enc::TimeEncoder;
use crate::variant::EmbeddingMode;

/// Source of per-node memory rows at embedding time. Batch processing hands
/// out just-updated states; memoryless variants hand out zeros.
pub trait MemoryAccess {
    /// State row [1, mem] and the timestamp it is current as of.
    fn memory_row(&mut self, tape: &Tape, node: NodeId) -> Result<(Tensor, f64)>;
}

/// All-zero memory of a fixed width, for variants without a memory table.
pub struct ZeroMemory(pub usize);

impl MemoryAccess for ZeroMemory {
    fn memory_row(&mut self, _tape: &Tape, _node: NodeId) -> Result<(Tensor, f64)> {
        Ok((Tensor::zeros(&[1, self.0])?, 0.0))
    }
}

/// Read-only inputs shared by every embedding call of a batch.
pub struct EmbedCtx<'a> {
    pub tape: &'a Tape,
    pub log: &'a EventLog,
    pub adj: &'a TemporalAdjacency,
    pub time_enc: &'a TimeEncoder,
    pub sampling: SamplingStrategy,
    pub dropout: Real,
    pub train: bool,
}

pub struct AttnLayer {
    pub mha: MultiHeadAttention,
    pub merge: Mlp,
}

pub struct SumLayer {
    /// Projects [h_j ‖ e_ij ‖ φ(t−t_j)] rows before summation.
    pub w1: Tensor,
    /// Maps [h ‖ h̃] to the layer output; the update rule has no bias terms.
    pub w2: Tensor,
}

/// Node embedding z_i(t): identity, time projection, temporal graph
/// attention, or temporal graph sum.
pub enum Embedder {
    Identity,
    TimeProjection { w: Tensor },
    Attention { layers: Vec<AttnLayer>, neighbors: usize },
    GraphSum { layers: Vec<SumLayer>, neighbors: usize },
}

impl Embedder {
    /// `emb_dim` is the width of the final graph-embedding layer; identity
    /// and time projection pass the memory width through unchanged.
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        mode: EmbeddingMode,
        mem_dim: usize,
        time_dim: usize,
        edge_dim: usize,
        emb_dim: usize,
        heads: usize,
    ) -> Result<Self> {
        let d_model = mem_dim + time_dim;
        let kv_dim = mem_dim + edge_dim + time_dim;
        match mode {
            EmbeddingMode::Identity => Ok(Embedder::Identity),
            EmbeddingMode::TimeProjection => Ok(Embedder::TimeProjection {
                w: Tensor::param(&[1, mem_dim], vec![0.0; mem_dim])?,
            }),
            EmbeddingMode::Attention { layers, neighbors } => {
                let layers = (0..layers)
                    .map(|i| {
                        let out_dim = if i + 1 == layers { emb_dim } else { mem_dim };
                        Ok(AttnLayer {
                            mha: MultiHeadAttention::new(rng, d_model, kv_dim, d_model, heads)?,
                            merge: Mlp::new(rng, mem_dim + d_model, mem_dim, out_dim),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Embedder::Attention { layers, neighbors })
            }
            EmbeddingMode::GraphSum { layers, neighbors } => {
                let layers = (0..layers)
                    .map(|i| {
                        let out_dim = if i + 1 == layers { emb_dim } else { mem_dim };
                        SumLayer {
                            w1: glorot_uniform(rng, d_model, kv_dim),
                            w2: glorot_uniform(rng, out_dim, mem_dim + d_model),
                        }
                    })
                    .collect();
                Ok(Embedder::GraphSum { layers, neighbors })
            }
        }
    }

    /// Width of the produced embeddings.
    pub fn out_dim(&self, mem_dim: usize) -> usize {
        match self {
            Embedder::Identity | Embedder::TimeProjection { .. } => mem_dim,
            Embedder::Attention { layers, .. } => layers
                .last()
                .map(|l| l.merge.w2.shape()[0])
                .unwrap_or(mem_dim),
            Embedder::GraphSum { layers, .. } => layers
                .last()
                .map(|l| l.w2.shape()[0])
                .unwrap_or(mem_dim),
        }
    }

    pub fn embed<R: Rng + ?Sized>(
        &self,
        ctx: &EmbedCtx,
        memory: &mut dyn MemoryAccess,
        rng: &mut R,
        node: NodeId,
        t: f64,
        exclude: Option<usize>,
    ) -> Result<Tensor> {
        match self {
            Embedder::Identity => Ok(memory.memory_row(ctx.tape, node)?.0),
            Embedder::TimeProjection { w } => {
                let (state, last) = memory.memory_row(ctx.tape, node)?;
                let delta = t - last;
                if delta < 0.0 {
                    return Err(ModelError::Config(format!(
                        "time projection at t={t} precedes node {node} clock {last}"
                    )));
                }
                let scale = ctx
                    .tape
                    .add_scalar(&ctx.tape.mul_scalar(w, delta as Real), 1.0);
                Ok(ctx.tape.mul(&scale, &state)?)
            }
            Embedder::Attention { layers, neighbors } => self.graph_repr(
                ctx,
                memory,
                rng,
                node,
                t,
                layers.len(),
                *neighbors,
                exclude,
            ),
            Embedder::GraphSum { layers, neighbors } => self.graph_repr(
                ctx,
                memory,
                rng,
                node,
                t,
                layers.len(),
                *neighbors,
                exclude,
            ),
        }
    }

    /// Input representation h⁰ = memory + node features (features default to
    /// zero, so h⁰ is the memory row for featureless datasets).
    fn input_repr(
        &self,
        ctx: &EmbedCtx,
        memory: &mut dyn MemoryAccess,
        node: NodeId,
        t: f64,
    ) -> Result<Tensor> {
        let (state, _) = memory.memory_row(ctx.tape, node)?;
        match ctx.log.node_features_at(node, t) {
            Some(v) => {
                if v.len() != state.numel() {
                    return Err(ModelError::Config(format!(
                        "node features of length {} against memory dimension {}",
                        v.len(),
                        state.numel()
                    )));
                }
                Ok(ctx.tape.add(&state, &Tensor::row(v.to_vec())?)?)
            }
            None => Ok(state),
        }
    }

    /// Recursive L-hop representation. Neighbor representations are taken at
    /// the query time t; per-edge time encodings use t − t_j.
    #[allow(clippy::too_many_arguments)]
    fn graph_repr<R: Rng + ?Sized>(
        &self,
        ctx: &EmbedCtx,
        memory: &mut dyn MemoryAccess,
        rng: &mut R,
        node: NodeId,
        t: f64,
        depth: usize,
        k: usize,
        exclude: Option<usize>,
    ) -> Result<Tensor> {
        if depth == 0 {
            return self.input_repr(ctx, memory, node, t);
        }
        let h_prev = self.graph_repr(ctx, memory, rng, node, t, depth - 1, k, exclude)?;
        let sample = ctx
            .adj
            .neighbors_before(node, t, k, ctx.sampling, exclude, rng)?;

        let neighbor_rows = if sample.is_empty() {
            None
        } else {
            let mut rows = Vec::with_capacity(sample.len());
            for &j in &sample.neighbors {
                rows.push(self.graph_repr(ctx, memory, rng, j, t, depth - 1, k, exclude)?);
            }
            let refs: Vec<&Tensor> = rows.iter().collect();
            let h_mat = ctx.tape.concat(&refs, 0)?;
            let deltas: Vec<f64> = sample.timestamps.iter().map(|&tj| t - tj).collect();
            let phi = ctx.time_enc.encode(ctx.tape, &deltas)?;
            let edge_dim = ctx.log.edge_feature_dim();
            let mut parts = vec![h_mat];
            if edge_dim > 0 {
                let mut feats = Vec::with_capacity(sample.len() * edge_dim);
                for &o in &sample.ordinals {
                    feats.extend_from_slice(ctx.log.edge_features(o));
                }
                parts.push(Tensor::new(&[sample.len(), edge_dim], feats)?);
            }
            parts.push(phi);
            let refs: Vec<&Tensor> = parts.iter().collect();
            Some(ctx.tape.concat(&refs, 1)?)
        };

        match self {
            Embedder::Attention { layers, .. } => {
                let layer = &layers[depth - 1];
                let context = match &neighbor_rows {
                    None => Tensor::zeros(&[1, layer.mha.d_model()])?,
                    Some(c_real) => {
                        // Pad short neighborhoods with masked zero rows.
                        let n = c_real.shape()[0];
                        let c = if n < k {
                            let pad = Tensor::zeros(&[k - n, c_real.shape()[1]])?;
                            ctx.tape.concat(&[c_real, &pad], 0)?
                        } else {
                            c_real.clone()
                        };
                        let mut mask = vec![true; n];
                        mask.resize(k.max(n), false);
                        let phi0 = ctx.time_enc.encode(ctx.tape, &[0.0])?;
                        let q = ctx.tape.concat(&[&h_prev, &phi0], 1)?;
                        layer
                            .mha
                            .forward(ctx.tape, &q, &c, &mask, ctx.dropout, ctx.train, rng)?
                            .output
                    }
                };
                let merged = ctx.tape.concat(&[&h_prev, &context], 1)?;
                layer.merge.forward(ctx.tape, &merged).map_err(Into::into)
            }
            Embedder::GraphSum { layers, .. } => {
                let layer = &layers[depth - 1];
                let d_model = layer.w1.shape()[0];
                let pooled = match &neighbor_rows {
                    None => Tensor::zeros(&[1, d_model])?,
                    Some(c_real) => {
                        let projected = ctx.tape.matmul_tb(c_real, &layer.w1)?;
                        let summed = ctx.tape.sum_rows(&projected)?;
                        ctx.tape.relu(&summed)
                    }
                };
                let merged = ctx.tape.concat(&[&h_prev, &pooled], 1)?;
                Ok(ctx.tape.matmul_tb(&merged, &layer.w2)?)
            }
            _ => unreachable!("graph_repr is only reached by graph modes"),
        }
    }

    pub fn params(&self) -> Vec<(String, Tensor)> {
        match self {
            Embedder::Identity => Vec::new(),
            Embedder::TimeProjection { w } => vec![("w".to_string(), w.clone())],
            Embedder::Attention { layers, .. } => layers
                .iter()
                .enumerate()
                .flat_map(|(i, l)| {
                    l.mha
                        .params()
                        .into_iter()
                        .map(move |(n, p)| (format!("l{i}.attn.{n}"), p))
                        .chain(
                            l.merge
                                .params()
                                .into_iter()
                                .map(move |(n, p)| (format!("l{i}.merge.{n}"), p)),
                        )
                })
                .collect(),
            Embedder::GraphSum { layers, .. } => layers
                .iter()
                .enumerate()
                .flat_map(|(i, l)| {
                    [
                        (format!("l{i}.w1"), l.w1.clone()),
                        (format!("l{i}.w2"), l.w2.clone()),
                    ]
                })
                .collect(),
        }
    }
}
