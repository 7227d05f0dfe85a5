use rand::Rng;

use crate::error::{DiffError, Result};
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::Real;

// ── Initializers ────────────────────────────────────────────────────────

/// Glorot-style uniform weight matrix, shape [out, in].
pub fn glorot_uniform<R: Rng + ?Sized>(rng: &mut R, out_dim: usize, in_dim: usize) -> Tensor {
    let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
    let values = (0..out_dim * in_dim)
        .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) as Real * bound as Real)
        .collect();
    Tensor::param(&[out_dim, in_dim], values).expect("valid init shape")
}

/// Uniform values in [-bound, bound], as a learnable tensor.
pub fn uniform_init<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: Real) -> Tensor {
    let numel = shape.iter().product();
    let values = (0..numel)
        .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) as Real * bound)
        .collect();
    Tensor::param(shape, values).expect("valid init shape")
}

/// x (n,in) · wᵀ (out,in) + b, b broadcast over rows.
pub fn linear(tape: &Tape, x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let y = tape.matmul_tb(x, w)?;
    tape.add_row(&y, b)
}

// ── Two-layer perceptron ────────────────────────────────────────────────

/// Linear → ReLU → Linear.
pub struct Mlp {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, in_dim: usize, hidden: usize, out_dim: usize) -> Self {
        Mlp {
            w1: glorot_uniform(rng, hidden, in_dim),
            b1: Tensor::param(&[hidden], vec![0.0; hidden]).unwrap(),
            w2: glorot_uniform(rng, out_dim, hidden),
            b2: Tensor::param(&[out_dim], vec![0.0; out_dim]).unwrap(),
        }
    }

    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Result<Tensor> {
        let h = linear(tape, x, &self.w1, &self.b1)?;
        let h = tape.relu(&h);
        linear(tape, &h, &self.w2, &self.b2)
    }

    pub fn params(&self) -> Vec<(&'static str, Tensor)> {
        vec![
            ("w1", self.w1.clone()),
            ("b1", self.b1.clone()),
            ("w2", self.w2.clone()),
            ("b2", self.b2.clone()),
        ]
    }
}

// ── Recurrent cells ─────────────────────────────────────────────────────

/// Gated recurrent unit. For input m (n,d_in) and state s (n,d_state):
///
///   r = σ(m·Wrᵀ + s·Urᵀ + br)
///   z = σ(m·Wzᵀ + s·Uzᵀ + bz)
///   c = tanh(m·Wcᵀ + (r∘s)·Ucᵀ + bc)
///   out = (1−z)∘s + z∘c
///
/// A saturated-low update gate (z → 0) leaves the state unchanged.
pub struct GruCell {
    pub w_r: Tensor,
    pub u_r: Tensor,
    pub b_r: Tensor,
    pub w_z: Tensor,
    pub u_z: Tensor,
    pub b_z: Tensor,
    pub w_c: Tensor,
    pub u_c: Tensor,
    pub b_c: Tensor,
    in_dim: usize,
    state_dim: usize,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, in_dim: usize, state_dim: usize) -> Self {
        let bound = 1.0 / (state_dim as f64).sqrt() as Real;
        let gate = |rng: &mut R| {
            (
                uniform_init(rng, &[state_dim, in_dim], bound),
                uniform_init(rng, &[state_dim, state_dim], bound),
                uniform_init(rng, &[state_dim], bound),
            )
        };
        let (w_r, u_r, b_r) = gate(rng);
        let (w_z, u_z, b_z) = gate(rng);
        let (w_c, u_c, b_c) = gate(rng);
        GruCell {
            w_r,
            u_r,
            b_r,
            w_z,
            u_z,
            b_z,
            w_c,
            u_c,
            b_c,
            in_dim,
            state_dim,
        }
    }

    pub fn forward(&self, tape: &Tape, m: &Tensor, s_prev: &Tensor) -> Result<Tensor> {
        let (_, d_in) = m.dims2("gru_cell")?;
        let (_, d_state) = s_prev.dims2("gru_cell")?;
        if d_in != self.in_dim || d_state != self.state_dim {
            return Err(DiffError::ShapeMismatch {
                kernel: "gru_cell",
                lhs: m.shape().to_vec(),
                rhs: s_prev.shape().to_vec(),
            });
        }
        let gate_pre = |w: &Tensor, u: &Tensor, b: &Tensor, hid: &Tensor| -> Result<Tensor> {
            let xm = tape.matmul_tb(m, w)?;
            let hs = tape.matmul_tb(hid, u)?;
            tape.add_row(&tape.add(&xm, &hs)?, b)
        };
        let r = tape.sigmoid(&gate_pre(&self.w_r, &self.u_r, &self.b_r, s_prev)?);
        let z = tape.sigmoid(&gate_pre(&self.w_z, &self.u_z, &self.b_z, s_prev)?);
        let rs = tape.mul(&r, s_prev)?;
        let c = tape.tanh(&gate_pre(&self.w_c, &self.u_c, &self.b_c, &rs)?);
        let one_minus_z = tape.add_scalar(&tape.mul_scalar(&z, -1.0), 1.0);
        let keep = tape.mul(&one_minus_z, s_prev)?;
        let take = tape.mul(&z, &c)?;
        tape.add(&keep, &take)
    }

    pub fn params(&self) -> Vec<(&'static str, Tensor)> {
        vec![
            ("w_r", self.w_r.clone()),
            ("u_r", self.u_r.clone()),
            ("b_r", self.b_r.clone()),
            ("w_z", self.w_z.clone()),
            ("u_z", self.u_z.clone()),
            ("b_z", self.b_z.clone()),
            ("w_c", self.w_c.clone()),
            ("u_c", self.u_c.clone()),
            ("b_c", self.b_c.clone()),
        ]
    }
}

/// Vanilla recurrent cell: out = tanh(m·Wᵀ + s·Uᵀ + b).
pub struct RnnCell {
    pub w: Tensor,
    pub u: Tensor,
    pub b: Tensor,
    in_dim: usize,
    state_dim: usize,
}

impl RnnCell {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, in_dim: usize, state_dim: usize) -> Self {
        let bound = 1.0 / (state_dim as f64).sqrt() as Real;
        RnnCell {
            w: uniform_init(rng, &[state_dim, in_dim], bound),
            u: uniform_init(rng, &[state_dim, state_dim], bound),
            b: uniform_init(rng, &[state_dim], bound),
            in_dim,
            state_dim,
        }
    }

    pub fn forward(&self, tape: &Tape, m: &Tensor, s_prev: &Tensor) -> Result<Tensor> {
        let (_, d_in) = m.dims2("rnn_cell")?;
        let (_, d_state) = s_prev.dims2("rnn_cell")?;
        if d_in != self.in_dim || d_state != self.state_dim {
            return Err(DiffError::ShapeMismatch {
                kernel: "rnn_cell",
                lhs: m.shape().to_vec(),
                rhs: s_prev.shape().to_vec(),
            });
        }
        let xm = tape.matmul_tb(m, &self.w)?;
        let hs = tape.matmul_tb(s_prev, &self.u)?;
        Ok(tape.tanh(&tape.add_row(&tape.add(&xm, &hs)?, &self.b)?))
    }

    pub fn params(&self) -> Vec<(&'static str, Tensor)> {
        vec![
            ("w", self.w.clone()),
            ("u", self.u.clone()),
            ("b", self.b.clone()),
        ]
    }
}

// ── Multi-head attention ────────────────────────────────────────────────

/// Attention output plus per-head weight rows for inspection.
pub struct AttentionOutput {
    pub output: Tensor,
    /// One (n_query, n_key) weight tensor per head, before dropout.
    pub weights: Vec<Tensor>,
}

/// Scaled dot-product attention with per-head projections of queries, keys
/// and values, concatenation of heads and an output projection. The key/value
/// mask marks valid rows; with every row masked the result is a zero vector.
pub struct MultiHeadAttention {
    pub w_q: Tensor,
    pub b_q: Tensor,
    pub w_k: Tensor,
    pub b_k: Tensor,
    pub w_v: Tensor,
    pub b_v: Tensor,
    pub w_o: Tensor,
    pub b_o: Tensor,
    heads: usize,
    d_model: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        query_dim: usize,
        kv_dim: usize,
        d_model: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || !d_model.is_multiple_of(heads) {
            return Err(DiffError::InvalidArgument {
                context: "multi_head_attention",
                message: format!("model dimension {d_model} not divisible by {heads} heads"),
            });
        }
        Ok(MultiHeadAttention {
            w_q: glorot_uniform(rng, d_model, query_dim),
            b_q: Tensor::param(&[d_model], vec![0.0; d_model]).unwrap(),
            w_k: glorot_uniform(rng, d_model, kv_dim),
            b_k: Tensor::param(&[d_model], vec![0.0; d_model]).unwrap(),
            w_v: glorot_uniform(rng, d_model, kv_dim),
            b_v: Tensor::param(&[d_model], vec![0.0; d_model]).unwrap(),
            w_o: glorot_uniform(rng, d_model, d_model),
            b_o: Tensor::param(&[d_model], vec![0.0; d_model]).unwrap(),
            heads,
            d_model,
        })
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &Tape,
        query: &Tensor,
        keys_values: &Tensor,
        mask: &[bool],
        dropout: Real,
        train: bool,
        rng: &mut R,
    ) -> Result<AttentionOutput> {
        let (n_query, _) = query.dims2("multi_head_attention")?;
        let (n_key, _) = keys_values.dims2("multi_head_attention")?;
        if mask.len() != n_key {
            return Err(DiffError::InvalidArgument {
                context: "multi_head_attention",
                message: format!("mask length {} does not match {n_key} rows", mask.len()),
            });
        }
        if !mask.iter().any(|&m| m) {
            // Degenerate contract: no valid rows yields a zero context.
            return Ok(AttentionOutput {
                output: Tensor::zeros(&[n_query, self.d_model])?,
                weights: (0..self.heads)
                    .map(|_| Tensor::zeros(&[n_query, n_key]).unwrap())
                    .collect(),
            });
        }
        let q = linear(tape, query, &self.w_q, &self.b_q)?;
        let k = linear(tape, keys_values, &self.w_k, &self.b_k)?;
        let v = linear(tape, keys_values, &self.w_v, &self.b_v)?;
        let d_head = self.d_model / self.heads;
        let scale = 1.0 / (d_head as Real).sqrt();
        let mut contexts = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice(&q, 1, h * d_head, d_head)?;
            let kh = tape.slice(&k, 1, h * d_head, d_head)?;
            let vh = tape.slice(&v, 1, h * d_head, d_head)?;
            let scores = tape.mul_scalar(&tape.matmul_tb(&qh, &kh)?, scale);
            let attn = tape.softmax_rows(&scores, Some(mask))?;
            let attn_dropped = tape.dropout(&attn, dropout, train, rng)?;
            contexts.push(tape.matmul(&attn_dropped, &vh)?);
            weights.push(attn);
        }
        let refs: Vec<&Tensor> = contexts.iter().collect();
        let merged = tape.concat(&refs, 1)?;
        let output = linear(tape, &merged, &self.w_o, &self.b_o)?;
        Ok(AttentionOutput { output, weights })
    }

    pub fn params(&self) -> Vec<(&'static str, Tensor)> {
        vec![
            ("w_q", self.w_q.clone()),
            ("b_q", self.b_q.clone()),
            ("w_k", self.w_k.clone()),
            ("b_k", self.b_k.clone()),
            ("w_v", self.w_v.clone()),
            ("b_v", self.b_v.clone()),
            ("w_o", self.w_o.clone()),
            ("b_o", self.b_o.clone()),
        ]
    }
}
