use std::cell::{Cell, RefCell};

use rand::Rng;

use crate::error::{DiffError, Result};
use crate::tensor::Tensor;
use crate::Real;

// ── Raw matrix helpers (shared by forward kernels and VJPs) ─────────────

/// c += a (m,k) · b (k,n)
fn mm(a: &[Real], b: &[Real], m: usize, k: usize, n: usize, c: &mut [Real]) {
    for i in 0..m {
        for l in 0..k {
            let av = a[i * k + l];
            if av == 0.0 {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
}

/// c += a (m,k) · b (n,k)ᵀ
fn mm_tb(a: &[Real], b: &[Real], m: usize, k: usize, n: usize, c: &mut [Real]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for l in 0..k {
                acc += arow[l] * brow[l];
            }
            c[i * n + j] += acc;
        }
    }
}

/// c += a (m,k)ᵀ · b (m,n)
fn mm_ta(a: &[Real], b: &[Real], m: usize, k: usize, n: usize, c: &mut [Real]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for l in 0..k {
            let av = arow[l];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[l * n..(l + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
}

fn stable_sigmoid(x: Real) -> Real {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// ── Recorded kernels ────────────────────────────────────────────────────

#[derive(Debug)]
enum Op {
    Add,
    Sub,
    Mul,
    AddScalar,
    MulScalar(Real),
    Matmul,
    /// a · bᵀ
    MatmulTB,
    Concat {
        axis: usize,
    },
    Slice {
        axis: usize,
        start: usize,
    },
    SumAll,
    MeanAll,
    SumRows,
    AddRow,
    Relu,
    Sigmoid,
    Tanh,
    Cos,
    // Masked entries produce exact zeros, so backward needs no mask copy.
    SoftmaxRows,
    Dropout {
        mask: Vec<bool>,
        keep: Real,
    },
    BceWithLogits,
    Reshape,
}

struct KernelRecord {
    op: Op,
    inputs: Vec<Tensor>,
    output: Tensor,
}

/// Ordered record of executed kernels. Kernels run eagerly; when any input
/// requires a gradient the kernel is recorded, and [`Tape::backward`] replays
/// the record once, in reverse order, accumulating gradients.
pub struct Tape {
    records: RefCell<Vec<KernelRecord>>,
    recording: bool,
    used: Cell<bool>,
}

impl Tape {
    /// Tape that records kernels touching gradient-bearing tensors.
    pub fn new() -> Self {
        Tape {
            records: RefCell::new(Vec::new()),
            recording: true,
            used: Cell::new(false),
        }
    }

    /// Tape that executes kernels without recording; forward values are
    /// identical to a recording tape.
    pub fn inference() -> Self {
        Tape {
            records: RefCell::new(Vec::new()),
            recording: false,
            used: Cell::new(false),
        }
    }

    pub fn num_recorded(&self) -> usize {
        self.records.borrow().len()
    }

    fn finish(&self, op: Op, inputs: Vec<Tensor>, shape: Vec<usize>, values: Vec<Real>) -> Tensor {
        let track = self.recording && inputs.iter().any(Tensor::requires_grad);
        let output = Tensor::output(shape, values, track);
        if track {
            self.records.borrow_mut().push(KernelRecord {
                op,
                inputs,
                output: output.clone(),
            });
        }
        output
    }

    // ── Elementwise kernels ─────────────────────────────────────────────

    fn zip_elementwise(
        &self,
        kernel: &'static str,
        op: Op,
        a: &Tensor,
        b: &Tensor,
        f: impl Fn(Real, Real) -> Real,
    ) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(DiffError::ShapeMismatch {
                kernel,
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let values = a
            .values()
            .iter()
            .zip(b.values().iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.finish(op, vec![a.clone(), b.clone()], a.shape().to_vec(), values))
    }

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.zip_elementwise("add", Op::Add, a, b, |x, y| x + y)
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.zip_elementwise("sub", Op::Sub, a, b, |x, y| x - y)
    }

    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.zip_elementwise("mul", Op::Mul, a, b, |x, y| x * y)
    }

    pub fn add_scalar(&self, a: &Tensor, c: Real) -> Tensor {
        let values = a.values().iter().map(|&x| x + c).collect();
        self.finish(Op::AddScalar, vec![a.clone()], a.shape().to_vec(), values)
    }

    pub fn mul_scalar(&self, a: &Tensor, c: Real) -> Tensor {
        let values = a.values().iter().map(|&x| x * c).collect();
        self.finish(Op::MulScalar(c), vec![a.clone()], a.shape().to_vec(), values)
    }

    fn map_elementwise(&self, op: Op, a: &Tensor, f: impl Fn(Real) -> Real) -> Tensor {
        let values = a.values().iter().map(|&x| f(x)).collect();
        self.finish(op, vec![a.clone()], a.shape().to_vec(), values)
    }

    pub fn relu(&self, a: &Tensor) -> Tensor {
        self.map_elementwise(Op::Relu, a, |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn sigmoid(&self, a: &Tensor) -> Tensor {
        self.map_elementwise(Op::Sigmoid, a, stable_sigmoid)
    }

    pub fn tanh(&self, a: &Tensor) -> Tensor {
        self.map_elementwise(Op::Tanh, a, Real::tanh)
    }

    pub fn cos(&self, a: &Tensor) -> Tensor {
        self.map_elementwise(Op::Cos, a, Real::cos)
    }

    // ── Matrix kernels ──────────────────────────────────────────────────

    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (m, k) = a.dims2("matmul")?;
        let (k2, n) = b.dims2("matmul")?;
        if k != k2 {
            return Err(DiffError::ShapeMismatch {
                kernel: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let mut values = vec![0.0; m * n];
        mm(&a.values(), &b.values(), m, k, n, &mut values);
        Ok(self.finish(Op::Matmul, vec![a.clone(), b.clone()], vec![m, n], values))
    }

    /// a (m,k) · b (n,k)ᵀ → (m,n)
    pub fn matmul_tb(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (m, k) = a.dims2("matmul_tb")?;
        let (n, k2) = b.dims2("matmul_tb")?;
        if k != k2 {
            return Err(DiffError::ShapeMismatch {
                kernel: "matmul_tb",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let mut values = vec![0.0; m * n];
        mm_tb(&a.values(), &b.values(), m, k, n, &mut values);
        Ok(self.finish(Op::MatmulTB, vec![a.clone(), b.clone()], vec![m, n], values))
    }

    /// x (n,d) + b broadcast over rows; b has shape [d] or [1,d].
    pub fn add_row(&self, x: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (n, d) = x.dims2("add_row")?;
        if b.numel() != d {
            return Err(DiffError::ShapeMismatch {
                kernel: "add_row",
                lhs: x.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let bv = b.values();
        let values = x
            .values()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bv[i % d])
            .collect();
        drop(bv);
        Ok(self.finish(Op::AddRow, vec![x.clone(), b.clone()], vec![n, d], values))
    }

    // ── Shape kernels ───────────────────────────────────────────────────

    /// Concatenate 2-d tensors along `axis` (0 = stack rows, 1 = widen rows).
    pub fn concat(&self, parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(DiffError::InvalidArgument {
                context: "concat",
                message: "no inputs".into(),
            });
        }
        if axis > 1 {
            return Err(DiffError::InvalidArgument {
                context: "concat",
                message: format!("axis {axis} out of range for 2-d tensors"),
            });
        }
        let (r0, c0) = parts[0].dims2("concat")?;
        let mut rows = r0;
        let mut cols = c0;
        for p in &parts[1..] {
            let (r, c) = p.dims2("concat")?;
            if axis == 0 {
                if c != c0 {
                    return Err(DiffError::ShapeMismatch {
                        kernel: "concat",
                        lhs: parts[0].shape().to_vec(),
                        rhs: p.shape().to_vec(),
                    });
                }
                rows += r;
            } else {
                if r != r0 {
                    return Err(DiffError::ShapeMismatch {
                        kernel: "concat",
                        lhs: parts[0].shape().to_vec(),
                        rhs: p.shape().to_vec(),
                    });
                }
                cols += c;
            }
        }
        let mut values = vec![0.0; rows * cols];
        if axis == 0 {
            let mut row = 0;
            for p in parts {
                let (r, _) = p.dims2("concat")?;
                values[row * cols..(row + r) * cols].copy_from_slice(&p.values());
                row += r;
            }
        } else {
            let mut col = 0;
            for p in parts {
                let (_, c) = p.dims2("concat")?;
                let pv = p.values();
                for i in 0..rows {
                    values[i * cols + col..i * cols + col + c]
                        .copy_from_slice(&pv[i * c..(i + 1) * c]);
                }
                col += c;
            }
        }
        let inputs = parts.iter().map(|&p| p.clone()).collect();
        Ok(self.finish(Op::Concat { axis }, inputs, vec![rows, cols], values))
    }

    /// Contiguous range along `axis` of a 2-d tensor.
    pub fn slice(&self, x: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let (r, c) = x.dims2("slice")?;
        let extent = if axis == 0 { r } else { c };
        if axis > 1 || len == 0 || start + len > extent {
            return Err(DiffError::InvalidArgument {
                context: "slice",
                message: format!(
                    "range {start}..{} on axis {axis} of shape {:?}",
                    start + len,
                    x.shape()
                ),
            });
        }
        let xv = x.values();
        let (shape, values) = if axis == 0 {
            (vec![len, c], xv[start * c..(start + len) * c].to_vec())
        } else {
            let mut v = Vec::with_capacity(r * len);
            for i in 0..r {
                v.extend_from_slice(&xv[i * c + start..i * c + start + len]);
            }
            (vec![r, len], v)
        };
        drop(xv);
        Ok(self.finish(Op::Slice { axis, start }, vec![x.clone()], shape, values))
    }

    /// Same values, new shape; element count must match.
    pub fn reshape(&self, x: &Tensor, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != x.numel() || shape.contains(&0) {
            return Err(DiffError::InvalidArgument {
                context: "reshape",
                message: format!("cannot reshape {:?} to {shape:?}", x.shape()),
            });
        }
        Ok(self.finish(Op::Reshape, vec![x.clone()], shape.to_vec(), x.to_vec()))
    }

    // ── Reductions ──────────────────────────────────────────────────────

    pub fn sum_all(&self, x: &Tensor) -> Tensor {
        let s = x.values().iter().sum();
        self.finish(Op::SumAll, vec![x.clone()], vec![1], vec![s])
    }

    pub fn mean_all(&self, x: &Tensor) -> Tensor {
        let s: Real = x.values().iter().sum();
        let n = x.numel() as Real;
        self.finish(Op::MeanAll, vec![x.clone()], vec![1], vec![s / n])
    }

    /// Column sums of a 2-d tensor → shape [1, d].
    pub fn sum_rows(&self, x: &Tensor) -> Result<Tensor> {
        let (r, c) = x.dims2("sum_rows")?;
        let xv = x.values();
        let mut values = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                values[j] += xv[i * c + j];
            }
        }
        drop(xv);
        Ok(self.finish(Op::SumRows, vec![x.clone()], vec![1, c], values))
    }

    // ── Structured kernels ──────────────────────────────────────────────

    /// Row-wise softmax of a 2-d tensor. When `mask` is given it marks valid
    /// columns; invalid columns get weight exactly 0, and a row with no valid
    /// column becomes all zeros.
    pub fn softmax_rows(&self, x: &Tensor, mask: Option<&[bool]>) -> Result<Tensor> {
        let (r, c) = x.dims2("softmax_rows")?;
        if let Some(m) = mask {
            if m.len() != c {
                return Err(DiffError::InvalidArgument {
                    context: "softmax_rows",
                    message: format!("mask length {} does not match {c} columns", m.len()),
                });
            }
        }
        let xv = x.values();
        let mut values = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let valid = |j: usize| mask.is_none_or(|m| m[j]);
            let mut max = Real::NEG_INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if valid(j) && v > max {
                    max = v;
                }
            }
            if max == Real::NEG_INFINITY {
                continue; // fully masked row stays zero
            }
            let mut denom = 0.0;
            for (j, &v) in row.iter().enumerate() {
                if valid(j) {
                    let e = (v - max).exp();
                    values[i * c + j] = e;
                    denom += e;
                }
            }
            for j in 0..c {
                values[i * c + j] /= denom;
            }
        }
        drop(xv);
        Ok(self.finish(Op::SoftmaxRows, vec![x.clone()], vec![r, c], values))
    }

    /// Inverted dropout: in train mode, kept entries are scaled by 1/keep so
    /// eval mode is the identity. `p` is the drop probability in [0, 1).
    pub fn dropout<R: Rng + ?Sized>(
        &self,
        x: &Tensor,
        p: Real,
        train: bool,
        rng: &mut R,
    ) -> Result<Tensor> {
        if !(0.0..1.0).contains(&p) {
            return Err(DiffError::InvalidArgument {
                context: "dropout",
                message: format!("probability {p} outside [0,1)"),
            });
        }
        if !train || p == 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 - p;
        #[allow(clippy::unnecessary_cast)] // Real may be f32
        let mask: Vec<bool> = (0..x.numel()).map(|_| rng.gen::<f64>() >= p as f64).collect();
        let values = x
            .values()
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| if m { v / keep } else { 0.0 })
            .collect();
        Ok(self.finish(
            Op::Dropout { mask, keep },
            vec![x.clone()],
            x.shape().to_vec(),
            values,
        ))
    }

    /// Mean binary cross-entropy between logits and {0,1} labels, computed in
    /// the log-sum-exp form. Labels never receive a gradient.
    pub fn bce_with_logits(&self, logits: &Tensor, labels: &Tensor) -> Result<Tensor> {
        if logits.shape() != labels.shape() {
            return Err(DiffError::ShapeMismatch {
                kernel: "bce_with_logits",
                lhs: logits.shape().to_vec(),
                rhs: labels.shape().to_vec(),
            });
        }
        if let Some(bad) = labels.values().iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(DiffError::InvalidArgument {
                context: "bce_with_logits",
                message: format!("label {bad} outside {{0,1}}"),
            });
        }
        let n = logits.numel() as Real;
        let mut total = 0.0;
        for (&x, &y) in logits.values().iter().zip(labels.values().iter()) {
            total += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
        }
        Ok(self.finish(
            Op::BceWithLogits,
            vec![logits.clone(), labels.clone()],
            vec![1],
            vec![total / n],
        ))
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Populate gradients of every gradient-bearing tensor reachable from
    /// `loss`, visiting recorded kernels once in reverse order. A tape can
    /// run backward once; gradients accumulate across tapes until cleared.
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        if loss.numel() != 1 {
            return Err(DiffError::NonScalarLoss {
                numel: loss.numel(),
            });
        }
        if !loss.requires_grad() {
            return Err(DiffError::DetachedLoss);
        }
        if self.used.replace(true) {
            return Err(DiffError::InvalidArgument {
                context: "backward",
                message: "tape already consumed by a previous backward pass".into(),
            });
        }
        loss.seed_grad(1.0);
        let records = self.records.borrow();
        for rec in records.iter().rev() {
            let Some(gout) = rec.output.grad_clone() else {
                continue;
            };
            backward_kernel(rec, &gout);
        }
        Ok(())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn accumulate_if_tracked(t: &Tensor, delta: &[Real]) {
    if t.requires_grad() {
        t.accumulate_grad(delta);
    }
}

fn backward_kernel(rec: &KernelRecord, gout: &[Real]) {
    match &rec.op {
        Op::Add => {
            accumulate_if_tracked(&rec.inputs[0], gout);
            accumulate_if_tracked(&rec.inputs[1], gout);
        }
        Op::Sub => {
            accumulate_if_tracked(&rec.inputs[0], gout);
            if rec.inputs[1].requires_grad() {
                let neg: Vec<Real> = gout.iter().map(|&g| -g).collect();
                rec.inputs[1].accumulate_grad(&neg);
            }
        }
        Op::Mul => {
            let (a, b) = (&rec.inputs[0], &rec.inputs[1]);
            if a.requires_grad() {
                let d: Vec<Real> = gout.iter().zip(b.values().iter()).map(|(&g, &v)| g * v).collect();
                a.accumulate_grad(&d);
            }
            if b.requires_grad() {
                let d: Vec<Real> = gout.iter().zip(a.values().iter()).map(|(&g, &v)| g * v).collect();
                b.accumulate_grad(&d);
            }
        }
        Op::AddScalar => accumulate_if_tracked(&rec.inputs[0], gout),
        Op::MulScalar(c) => {
            if rec.inputs[0].requires_grad() {
                let d: Vec<Real> = gout.iter().map(|&g| g * c).collect();
                rec.inputs[0].accumulate_grad(&d);
            }
        }
        Op::Matmul => {
            let (a, b) = (&rec.inputs[0], &rec.inputs[1]);
            let [m, k] = a.shape() else { unreachable!() };
            let [_, n] = b.shape() else { unreachable!() };
            let (m, k, n) = (*m, *k, *n);
            if a.requires_grad() {
                let mut da = vec![0.0; m * k];
                mm_tb(gout, &b.values(), m, n, k, &mut da);
                a.accumulate_grad(&da);
            }
            if b.requires_grad() {
                let mut db = vec![0.0; k * n];
                mm_ta(&a.values(), gout, m, k, n, &mut db);
                b.accumulate_grad(&db);
            }
        }
        Op::MatmulTB => {
            let (a, b) = (&rec.inputs[0], &rec.inputs[1]);
            let [m, k] = a.shape() else { unreachable!() };
            let [n, _] = b.shape() else { unreachable!() };
            let (m, k, n) = (*m, *k, *n);
            if a.requires_grad() {
                let mut da = vec![0.0; m * k];
                mm(gout, &b.values(), m, n, k, &mut da);
                a.accumulate_grad(&da);
            }
            if b.requires_grad() {
                let mut db = vec![0.0; n * k];
                mm_ta(gout, &a.values(), m, n, k, &mut db);
                b.accumulate_grad(&db);
            }
        }
        Op::AddRow => {
            let (x, b) = (&rec.inputs[0], &rec.inputs[1]);
            accumulate_if_tracked(x, gout);
            if b.requires_grad() {
                let d = b.numel();
                let mut db = vec![0.0; d];
                for (i, &g) in gout.iter().enumerate() {
                    db[i % d] += g;
                }
                b.accumulate_grad(&db);
            }
        }
        Op::Concat { axis } => {
            let [rows, cols] = rec.output.shape() else { unreachable!() };
            let (rows, cols) = (*rows, *cols);
            if *axis == 0 {
                let mut row = 0;
                for p in &rec.inputs {
                    let r = p.shape()[0];
                    if p.requires_grad() {
                        p.accumulate_grad(&gout[row * cols..(row + r) * cols]);
                    }
                    row += r;
                }
            } else {
                let mut col = 0;
                for p in &rec.inputs {
                    let c = p.shape()[1];
                    if p.requires_grad() {
                        let mut d = vec![0.0; rows * c];
                        for i in 0..rows {
                            d[i * c..(i + 1) * c]
                                .copy_from_slice(&gout[i * cols + col..i * cols + col + c]);
                        }
                        p.accumulate_grad(&d);
                    }
                    col += c;
                }
            }
        }
        Op::Slice { axis, start } => {
            let x = &rec.inputs[0];
            if !x.requires_grad() {
                return;
            }
            let [r, c] = x.shape() else { unreachable!() };
            let (r, c) = (*r, *c);
            let mut d = vec![0.0; r * c];
            if *axis == 0 {
                let len = rec.output.shape()[0];
                d[start * c..(start + len) * c].copy_from_slice(gout);
            } else {
                let len = rec.output.shape()[1];
                for i in 0..r {
                    d[i * c + start..i * c + start + len]
                        .copy_from_slice(&gout[i * len..(i + 1) * len]);
                }
            }
            x.accumulate_grad(&d);
        }
        Op::Reshape => accumulate_if_tracked(&rec.inputs[0], gout),
        Op::SumAll => {
            let x = &rec.inputs[0];
            if x.requires_grad() {
                x.accumulate_grad(&vec![gout[0]; x.numel()]);
            }
        }
        Op::MeanAll => {
            let x = &rec.inputs[0];
            if x.requires_grad() {
                let g = gout[0] / x.numel() as Real;
                x.accumulate_grad(&vec![g; x.numel()]);
            }
        }
        Op::SumRows => {
            let x = &rec.inputs[0];
            if x.requires_grad() {
                let [r, c] = x.shape() else { unreachable!() };
                let mut d = vec![0.0; r * c];
                for i in 0..*r {
                    d[i * c..(i + 1) * c].copy_from_slice(gout);
                }
                x.accumulate_grad(&d);
            }
        }
        Op::Relu => {
            let x = &rec.inputs[0];
            if x.requires_grad() {
                let d: Vec<Real> = x
                    .values()
                    .iter()
                    .zip(gout)
                    .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                x.accumulate_grad(&d);
            }
        }
        Op::Sigmoid => {
            let x = &rec.inputs[0];
            if x.requires_grad() {
                let d: Vec<Real> = rec
                    .output
                    .values()
                    .iter()
                    .zip(gout)
                    .map(|(&y, &g)| g * y * (1.0 - y))
                    .collect();
                x.accumulate_grad(&d);
            }
        }
        Op::Tanh => {
            let x = &rec.inputs[0];
            if x.requires_grad() {
                let d: Vec<Real> = rec
                    .output
                    .values()
                    .iter()
                    .zip(gout)
                    .map(|(&y, &g)| g * (1.0 - y * y))
                    .collect();
                x.accumulate_grad(&d);
            }
        }
        Op::Cos => {
            let x = &rec.inputs[0];
            if x.requires_grad() {
                let d: Vec<Real> = x
                    .values()
                    .iter()
                    .zip(gout)
                    .map(|(&v, &g)| -g * v.sin())
                    .collect();
                x.accumulate_grad(&d);
            }
        }
        Op::SoftmaxRows => {
            let x = &rec.inputs[0];
            if !x.requires_grad() {
                return;
            }
            let [r, c] = x.shape() else { unreachable!() };
            let (r, c) = (*r, *c);
            let y = rec.output.values();
            let mut d = vec![0.0; r * c];
            for i in 0..r {
                let yrow = &y[i * c..(i + 1) * c];
                let grow = &gout[i * c..(i + 1) * c];
                let dot: Real = yrow.iter().zip(grow).map(|(&yv, &gv)| yv * gv).sum();
                for j in 0..c {
                    d[i * c + j] = yrow[j] * (grow[j] - dot);
                }
            }
            drop(y);
            x.accumulate_grad(&d);
        }
        Op::Dropout { mask, keep } => {
            let x = &rec.inputs[0];
            if x.requires_grad() {
                let d: Vec<Real> = gout
                    .iter()
                    .zip(mask)
                    .map(|(&g, &m)| if m { g / keep } else { 0.0 })
                    .collect();
                x.accumulate_grad(&d);
            }
        }
        Op::BceWithLogits => {
            let (logits, labels) = (&rec.inputs[0], &rec.inputs[1]);
            if logits.requires_grad() {
                let n = logits.numel() as Real;
                let d: Vec<Real> = logits
                    .values()
                    .iter()
                    .zip(labels.values().iter())
                    .map(|(&x, &y)| gout[0] * (stable_sigmoid(x) - y) / n)
                    .collect();
                logits.accumulate_grad(&d);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: Real, b: Real, tol: Real) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn matmul_identity_left() {
        let tape = Tape::new();
        let eye = Tensor::new(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let a = Tensor::new(&[3, 3], vec![2.0, -1.0, 0.5, 3.0, 4.0, -2.0, 0.0, 1.0, 7.0]).unwrap();
        let out = tape.matmul(&eye, &a).unwrap();
        assert_eq!(out.to_vec(), a.to_vec());
    }

    #[test]
    fn softmax_of_equal_entries_is_uniform() {
        let tape = Tape::new();
        let x = Tensor::new(&[1, 3], vec![1.0, 1.0, 1.0]).unwrap();
        let y = tape.softmax_rows(&x, None).unwrap();
        for &v in y.values().iter() {
            assert!(approx(v, 1.0 / 3.0, 1e-15));
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_mask_zeroes() {
        let tape = Tape::new();
        let x = Tensor::new(&[2, 4], vec![0.3, -2.0, 1.7, 0.0, 5.0, 4.0, 3.0, 2.0]).unwrap();
        let y = tape.softmax_rows(&x, Some(&[true, false, true, true])).unwrap();
        let v = y.values();
        for i in 0..2 {
            let s: Real = v[i * 4..(i + 1) * 4].iter().sum();
            assert!(approx(s, 1.0, 1e-12), "row {i} sums to {s}");
            assert_eq!(v[i * 4 + 1], 0.0);
        }
    }

    #[test]
    fn fully_masked_softmax_row_is_zero() {
        let tape = Tape::new();
        let x = Tensor::new(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = tape.softmax_rows(&x, Some(&[false, false, false])).unwrap();
        assert_eq!(y.to_vec(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn relu_definition() {
        let tape = Tape::new();
        let x = Tensor::new(&[3], vec![-2.0, 0.0, 3.0]).unwrap();
        assert_eq!(tape.relu(&x).to_vec(), vec![0.0, 0.0, 3.0]);
    }

    #[test]
    fn shape_mismatch_names_kernel_and_shapes() {
        let tape = Tape::new();
        let a = Tensor::new(&[2, 2], vec![1.0; 4]).unwrap();
        let b = Tensor::new(&[3, 2], vec![1.0; 6]).unwrap();
        let err = tape.add(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("add") && msg.contains("[2, 2]") && msg.contains("[3, 2]"), "{msg}");
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let tape = Tape::new();
        let x = Tensor::param(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let loss = tape.sum_all(&x);
        tape.backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_sum_of_squares() {
        let tape = Tape::new();
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let sq = tape.mul(&x, &x).unwrap();
        let loss = tape.sum_all(&sq);
        tape.backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn grads_accumulate_across_tapes() {
        let x = Tensor::param(&[2], vec![1.0, 1.0]).unwrap();
        for _ in 0..2 {
            let tape = Tape::new();
            let loss = tape.sum_all(&x);
            tape.backward(&loss).unwrap();
        }
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn second_backward_on_same_tape_rejected() {
        let tape = Tape::new();
        let x = Tensor::param(&[2], vec![1.0, 1.0]).unwrap();
        let loss = tape.sum_all(&x);
        tape.backward(&loss).unwrap();
        assert!(tape.backward(&loss).is_err());
    }

    #[test]
    fn backward_rejects_non_scalar_and_detached() {
        let tape = Tape::new();
        let x = Tensor::param(&[2], vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            tape.backward(&x),
            Err(DiffError::NonScalarLoss { numel: 2 })
        ));
        let c = Tensor::scalar(1.0);
        assert!(matches!(tape.backward(&c), Err(DiffError::DetachedLoss)));
    }

    #[test]
    fn constant_kernels_are_not_recorded() {
        let tape = Tape::new();
        let a = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(&[2], vec![3.0, 4.0]).unwrap();
        let c = tape.add(&a, &b).unwrap();
        assert!(!c.requires_grad());
        assert_eq!(tape.num_recorded(), 0);
        let p = Tensor::param(&[2], vec![1.0, 1.0]).unwrap();
        let _ = tape.add(&a, &p).unwrap();
        assert_eq!(tape.num_recorded(), 1);
    }

    #[test]
    fn bce_logit_zero_is_ln_two() {
        let tape = Tape::new();
        let logits = Tensor::new(&[2], vec![0.0, 0.0]).unwrap();
        let labels = Tensor::new(&[2], vec![0.0, 1.0]).unwrap();
        let loss = tape.bce_with_logits(&logits, &labels).unwrap();
        assert!(approx(loss.scalar_value().unwrap(), (2.0 as Real).ln(), 1e-12));
    }

    #[test]
    fn bce_decreases_with_confident_correct_logit() {
        let tape = Tape::new();
        let labels = Tensor::new(&[1], vec![1.0]).unwrap();
        let mut prev = Real::INFINITY;
        for logit in [1.0, 5.0, 10.0, 20.0] {
            let x = Tensor::new(&[1], vec![logit]).unwrap();
            let loss = tape.bce_with_logits(&x, &labels).unwrap().scalar_value().unwrap();
            assert!(loss < prev);
            prev = loss;
        }
        assert!(prev < 1e-8);
    }

    #[test]
    fn bce_matches_direct_formula_on_mixed_batch() {
        let tape = Tape::new();
        let xs = [0.3, -1.2, 2.5, -0.4];
        let ys = [1.0, 0.0, 0.0, 1.0];
        let logits = Tensor::new(&[4], xs.to_vec()).unwrap();
        let labels = Tensor::new(&[4], ys.to_vec()).unwrap();
        let loss = tape.bce_with_logits(&logits, &labels).unwrap().scalar_value().unwrap();
        let direct: Real = xs
            .iter()
            .zip(&ys)
            .map(|(&x, &y)| {
                let p = stable_sigmoid(x);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum::<Real>()
            / 4.0;
        assert!(approx(loss, direct, 1e-12));
    }

    #[test]
    fn bce_rejects_non_binary_labels() {
        let tape = Tape::new();
        let logits = Tensor::new(&[1], vec![0.0]).unwrap();
        let labels = Tensor::new(&[1], vec![0.5]).unwrap();
        assert!(tape.bce_with_logits(&logits, &labels).is_err());
    }

    #[test]
    fn dropout_eval_mode_is_identity() {
        let tape = Tape::new();
        let mut rng = rand::thread_rng();
        let x = Tensor::param(&[4], vec![1.0, -2.0, 3.0, -4.0]).unwrap();
        let y = tape.dropout(&x, 0.5, false, &mut rng).unwrap();
        assert!(y.same_tensor(&x));
    }

    #[test]
    fn dropout_rejects_bad_probability() {
        let tape = Tape::new();
        let mut rng = rand::thread_rng();
        let x = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        assert!(tape.dropout(&x, 1.0, true, &mut rng).is_err());
        assert!(tape.dropout(&x, -0.1, true, &mut rng).is_err());
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let tape = Tape::new();
        let a = Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(&[1, 3], vec![3.0, 4.0, 5.0]).unwrap();
        let cat = tape.concat(&[&a, &b], 1).unwrap();
        assert_eq!(cat.shape(), &[1, 5]);
        assert_eq!(cat.to_vec(), vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let back = tape.slice(&cat, 1, 2, 3).unwrap();
        assert_eq!(back.to_vec(), b.to_vec());
    }
}
