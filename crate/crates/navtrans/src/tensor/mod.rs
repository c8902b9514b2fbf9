//! Dense f64 tensors with tape-based reverse-mode differentiation.
//!
//! The engine is deliberately small: 1-D/2-D tensors, the primitive set the
//! translation model needs, and a Wengert tape that records one entry per
//! primitive application. A tape lives for one forward/backward pass and is
//! discarded afterward; long-lived values (parameters, inputs) are plain
//! [`Tensor`]s that get re-leafed onto each fresh tape.

mod checkpoint;
mod gradcheck;

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointError, CheckpointMeta};
pub use gradcheck::{grad_check, GradCheckReport};

use thiserror::Error;

/// A dense row-major f64 array with an optional gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Builds a tensor, panicking if `data` does not fill `shape`.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert!(
            !shape.is_empty() && shape.iter().all(|&d| d > 0),
            "tensor: extents must be positive, got {shape:?}"
        );
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "tensor: shape {shape:?} needs {numel} values, got {}",
            data.len()
        );
        Tensor { shape, data, requires_grad: false, grad: None }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor::new(shape, vec![0.0; numel])
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::new(vec![1], vec![v])
    }

    /// Uniform init in `[-bound, bound]`, a seeded RNG draw per element.
    pub fn uniform<R: rand::Rng>(shape: Vec<usize>, bound: f64, rng: &mut R) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.random_range(-bound..=bound)).collect();
        Tensor::new(shape, data)
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Adds `g` into the gradient buffer, allocating zeros on first use.
    pub fn accumulate_grad(&mut self, g: &[f64]) {
        assert_eq!(g.len(), self.data.len(), "grad length {} != tensor numel {}", g.len(), self.data.len());
        let grad = self.grad.get_or_insert_with(|| vec![0.0; self.data.len()]);
        for (dst, src) in grad.iter_mut().zip(g) {
            *dst += src;
        }
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Handle to a value on a specific [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Val(usize);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AutodiffError {
    #[error("backward: loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward: tape has no recorded operations")]
    EmptyTape,
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
}

/// One recorded primitive application: inputs, output, saved attributes.
enum Record {
    MatMul { a: usize, b: usize, out: usize },
    Add { a: usize, b: usize, out: usize },
    Sub { a: usize, b: usize, out: usize },
    Mul { a: usize, b: usize, out: usize },
    AddBias { a: usize, bias: usize, out: usize },
    Sigmoid { a: usize, out: usize },
    Tanh { a: usize, out: usize },
    Log { a: usize, out: usize },
    Scale { a: usize, c: f64, out: usize },
    Softmax { a: usize, axis: usize, out: usize },
    Concat { inputs: Vec<usize>, axis: usize, out: usize },
    Slice { a: usize, axis: usize, start: usize, out: usize },
    Transpose { a: usize, out: usize },
    Reshape { a: usize, out: usize },
    EmbedLookup { table: usize, indices: Vec<usize>, out: usize },
    Sum { a: usize, out: usize },
    Mean { a: usize, out: usize },
    CrossEntropy { logits: usize, targets: Vec<usize>, out: usize },
}

/// The computation tape: records primitive applications in topological
/// order during the forward pass and replays them in reverse to fill
/// gradient buffers.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    records: Vec<Record>,
    grads: Vec<Vec<f64>>,
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Places a tensor on the tape, honoring its `requires_grad` flag.
    pub fn leaf(&mut self, t: &Tensor) -> Val {
        self.push_node(t.shape.clone(), t.data.clone(), t.requires_grad)
    }

    /// Places a tensor on the tape with gradient tracking disabled.
    pub fn frozen(&mut self, t: &Tensor) -> Val {
        self.push_node(t.shape.clone(), t.data.clone(), false)
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Val {
        let t = Tensor::new(shape, data);
        self.push_node(t.shape, t.data, false)
    }

    pub fn ones(&mut self, shape: Vec<usize>) -> Val {
        let numel = shape.iter().product();
        self.push_node(shape, vec![1.0; numel], false)
    }

    fn push_node(&mut self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Val {
        let id = self.nodes.len();
        self.nodes.push(Node { shape, data, requires_grad });
        Val(id)
    }

    fn push_op(&mut self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, mk: impl FnOnce(usize) -> Record) -> Val {
        let out = self.nodes.len();
        self.nodes.push(Node { shape, data, requires_grad });
        if requires_grad {
            self.records.push(mk(out));
        }
        Val(out)
    }

    pub fn shape(&self, v: Val) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn data(&self, v: Val) -> &[f64] {
        &self.nodes[v.0].data
    }

    /// Scalar value of a single-element node.
    pub fn scalar_value(&self, v: Val) -> f64 {
        assert_eq!(self.nodes[v.0].data.len(), 1, "scalar_value: node has {} elements", self.nodes[v.0].data.len());
        self.nodes[v.0].data[0]
    }

    /// Copies a node back out as a detached tensor.
    pub fn tensor(&self, v: Val) -> Tensor {
        Tensor::new(self.nodes[v.0].shape.clone(), self.nodes[v.0].data.clone())
    }

    /// Accumulated gradient w.r.t. this node; `None` before any `backward`.
    pub fn grad(&self, v: Val) -> Option<&[f64]> {
        self.grads.get(v.0).map(|g| g.as_slice())
    }

    fn rg2(&self, a: Val, b: Val) -> bool {
        self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad
    }

    // ── primitives ──────────────────────────────────────────────────

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Val, b: Val) -> Val {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        assert!(
            sa.len() == 2 && sb.len() == 2 && sa[1] == sb[0],
            "matmul: incompatible shapes {sa:?} and {sb:?}"
        );
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut data = vec![0.0; m * n];
        matmul_raw(&self.nodes[a.0].data, &self.nodes[b.0].data, m, k, n, &mut data);
        let rg = self.rg2(a, b);
        self.push_op(vec![m, n], data, rg, |out| Record::MatMul { a: a.0, b: b.0, out })
    }

    pub fn add(&mut self, a: Val, b: Val) -> Val {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        assert_eq!(sa, sb, "add: shape mismatch {sa:?} vs {sb:?}");
        let shape = sa.clone();
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x + y)
            .collect();
        let rg = self.rg2(a, b);
        self.push_op(shape, data, rg, |out| Record::Add { a: a.0, b: b.0, out })
    }

    pub fn sub(&mut self, a: Val, b: Val) -> Val {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        assert_eq!(sa, sb, "sub: shape mismatch {sa:?} vs {sb:?}");
        let shape = sa.clone();
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x - y)
            .collect();
        let rg = self.rg2(a, b);
        self.push_op(shape, data, rg, |out| Record::Sub { a: a.0, b: b.0, out })
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Val, b: Val) -> Val {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        assert_eq!(sa, sb, "mul: shape mismatch {sa:?} vs {sb:?}");
        let shape = sa.clone();
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x * y)
            .collect();
        let rg = self.rg2(a, b);
        self.push_op(shape, data, rg, |out| Record::Mul { a: a.0, b: b.0, out })
    }

    /// `[m,n] + [n]`, the bias row added to every row.
    pub fn add_bias(&mut self, a: Val, bias: Val) -> Val {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[bias.0].shape);
        assert!(
            sa.len() == 2 && sb.len() == 1 && sa[1] == sb[0],
            "add_bias: incompatible shapes {sa:?} and {sb:?}"
        );
        let (m, n) = (sa[0], sa[1]);
        let mut data = self.nodes[a.0].data.clone();
        for i in 0..m {
            for (d, &b) in data[i * n..(i + 1) * n].iter_mut().zip(&self.nodes[bias.0].data) {
                *d += b;
            }
        }
        let rg = self.rg2(a, bias);
        self.push_op(vec![m, n], data, rg, |out| Record::AddBias { a: a.0, bias: bias.0, out })
    }

    pub fn sigmoid(&mut self, a: Val) -> Val {
        let shape = self.nodes[a.0].shape.clone();
        let data = self.nodes[a.0].data.iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect();
        let rg = self.nodes[a.0].requires_grad;
        self.push_op(shape, data, rg, |out| Record::Sigmoid { a: a.0, out })
    }

    pub fn tanh(&mut self, a: Val) -> Val {
        let shape = self.nodes[a.0].shape.clone();
        let data = self.nodes[a.0].data.iter().map(|&x| x.tanh()).collect();
        let rg = self.nodes[a.0].requires_grad;
        self.push_op(shape, data, rg, |out| Record::Tanh { a: a.0, out })
    }

    pub fn log(&mut self, a: Val) -> Val {
        let shape = self.nodes[a.0].shape.clone();
        let data = self.nodes[a.0].data.iter().map(|&x| x.ln()).collect();
        let rg = self.nodes[a.0].requires_grad;
        self.push_op(shape, data, rg, |out| Record::Log { a: a.0, out })
    }

    pub fn scale(&mut self, a: Val, c: f64) -> Val {
        let shape = self.nodes[a.0].shape.clone();
        let data = self.nodes[a.0].data.iter().map(|&x| c * x).collect();
        let rg = self.nodes[a.0].requires_grad;
        self.push_op(shape, data, rg, |out| Record::Scale { a: a.0, c, out })
    }

    /// Softmax along `axis` of a 2-D tensor, max-subtracted for stability.
    pub fn softmax(&mut self, a: Val, axis: usize) -> Val {
        let sa = &self.nodes[a.0].shape;
        assert!(sa.len() == 2 && axis < 2, "softmax: need 2-D input and axis < 2, got shape {sa:?} axis {axis}");
        let (rows, cols) = (sa[0], sa[1]);
        let src = &self.nodes[a.0].data;
        let mut data = vec![0.0; src.len()];
        // lanes run along `axis`; iterate the complementary index
        let (lanes, lane_len, stride, lane_step) = if axis == 1 {
            (rows, cols, 1usize, cols)
        } else {
            (cols, rows, cols, 1usize)
        };
        for lane in 0..lanes {
            let base = lane * lane_step;
            let mut max = f64::NEG_INFINITY;
            for i in 0..lane_len {
                max = max.max(src[base + i * stride]);
            }
            let mut sum = 0.0;
            for i in 0..lane_len {
                let e = (src[base + i * stride] - max).exp();
                data[base + i * stride] = e;
                sum += e;
            }
            for i in 0..lane_len {
                data[base + i * stride] /= sum;
            }
        }
        let rg = self.nodes[a.0].requires_grad;
        self.push_op(vec![rows, cols], data, rg, |out| Record::Softmax { a: a.0, axis, out })
    }

    /// Concatenates 2-D tensors along `axis` (0 stacks rows, 1 widens rows).
    pub fn concat(&mut self, inputs: &[Val], axis: usize) -> Val {
        assert!(!inputs.is_empty() && axis < 2, "concat: need inputs and axis < 2");
        let first = self.nodes[inputs[0].0].shape.clone();
        assert_eq!(first.len(), 2, "concat: need 2-D inputs, got {first:?}");
        let keep = 1 - axis;
        let mut total = 0;
        for v in inputs {
            let s = &self.nodes[v.0].shape;
            assert!(
                s.len() == 2 && s[keep] == first[keep],
                "concat: shape {s:?} incompatible with {first:?} along axis {axis}"
            );
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (rows, cols) = (shape[0], shape[1]);
        let mut data = vec![0.0; rows * cols];
        if axis == 0 {
            let mut offset = 0;
            for v in inputs {
                let src = &self.nodes[v.0].data;
                data[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        } else {
            let mut col_off = 0;
            for v in inputs {
                let s = &self.nodes[v.0].shape;
                let w = s[1];
                let src = &self.nodes[v.0].data;
                for r in 0..rows {
                    data[r * cols + col_off..r * cols + col_off + w].copy_from_slice(&src[r * w..(r + 1) * w]);
                }
                col_off += w;
            }
        }
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let ids: Vec<usize> = inputs.iter().map(|v| v.0).collect();
        self.push_op(shape, data, rg, |out| Record::Concat { inputs: ids, axis, out })
    }

    /// Contiguous range `[start, end)` along `axis` of a 2-D tensor.
    pub fn slice(&mut self, a: Val, axis: usize, start: usize, end: usize) -> Val {
        let sa = self.nodes[a.0].shape.clone();
        assert!(
            sa.len() == 2 && axis < 2 && start < end && end <= sa[axis],
            "slice: range {start}..{end} on axis {axis} invalid for shape {sa:?}"
        );
        let (rows, cols) = (sa[0], sa[1]);
        let src = &self.nodes[a.0].data;
        let (shape, data) = if axis == 0 {
            (vec![end - start, cols], src[start * cols..end * cols].to_vec())
        } else {
            let mut d = Vec::with_capacity(rows * (end - start));
            for r in 0..rows {
                d.extend_from_slice(&src[r * cols + start..r * cols + end]);
            }
            (vec![rows, end - start], d)
        };
        let rg = self.nodes[a.0].requires_grad;
        self.push_op(shape, data, rg, |out| Record::Slice { a: a.0, axis, start, out })
    }

    /// One row of a 2-D tensor as `[1, cols]`.
    pub fn row(&mut self, a: Val, r: usize) -> Val {
        self.slice(a, 0, r, r + 1)
    }

    /// Reinterprets the data under a new shape with the same element count.
    pub fn reshape(&mut self, a: Val, shape: Vec<usize>) -> Val {
        let numel: usize = shape.iter().product();
        let sa = &self.nodes[a.0].shape;
        assert_eq!(
            numel,
            self.nodes[a.0].data.len(),
            "reshape: {sa:?} has {} elements, target {shape:?} wants {numel}",
            self.nodes[a.0].data.len()
        );
        let data = self.nodes[a.0].data.clone();
        let rg = self.nodes[a.0].requires_grad;
        self.push_op(shape, data, rg, |out| Record::Reshape { a: a.0, out })
    }

    pub fn transpose(&mut self, a: Val) -> Val {
        let sa = &self.nodes[a.0].shape;
        assert_eq!(sa.len(), 2, "transpose: need 2-D input, got {sa:?}");
        let (rows, cols) = (sa[0], sa[1]);
        let src = &self.nodes[a.0].data;
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                data[c * rows + r] = src[r * cols + c];
            }
        }
        let rg = self.nodes[a.0].requires_grad;
        self.push_op(vec![cols, rows], data, rg, |out| Record::Transpose { a: a.0, out })
    }

    /// Row gather: `table[indices[i], :]` stacked into `[len, dim]`.
    pub fn embed_lookup(&mut self, table: Val, indices: &[usize]) -> Val {
        let st = &self.nodes[table.0].shape;
        assert!(st.len() == 2 && !indices.is_empty(), "embed_lookup: need 2-D table and nonempty indices, got {st:?}");
        let (vocab, dim) = (st[0], st[1]);
        let src = &self.nodes[table.0].data;
        let mut data = Vec::with_capacity(indices.len() * dim);
        for &ix in indices {
            assert!(ix < vocab, "embed_lookup: index {ix} out of range for table with {vocab} rows");
            data.extend_from_slice(&src[ix * dim..(ix + 1) * dim]);
        }
        let rg = self.nodes[table.0].requires_grad;
        let idx = indices.to_vec();
        self.push_op(vec![indices.len(), dim], data, rg, |out| Record::EmbedLookup {
            table: table.0,
            indices: idx,
            out,
        })
    }

    /// Full reduction to a `[1]` scalar.
    pub fn sum(&mut self, a: Val) -> Val {
        let s: f64 = self.nodes[a.0].data.iter().sum();
        let rg = self.nodes[a.0].requires_grad;
        self.push_op(vec![1], vec![s], rg, |out| Record::Sum { a: a.0, out })
    }

    pub fn mean(&mut self, a: Val) -> Val {
        let n = self.nodes[a.0].data.len() as f64;
        let s: f64 = self.nodes[a.0].data.iter().sum();
        let rg = self.nodes[a.0].requires_grad;
        self.push_op(vec![1], vec![s / n], rg, |out| Record::Mean { a: a.0, out })
    }

    /// Mean over rows of `logsumexp(row) - row[target]`, a `[m,k]` logits
    /// matrix against `m` class indices. Stable log-sum-exp form.
    pub fn cross_entropy(&mut self, logits: Val, targets: &[usize]) -> Val {
        let sl = &self.nodes[logits.0].shape;
        assert!(
            sl.len() == 2 && sl[0] == targets.len(),
            "cross_entropy: logits {sl:?} need one target per row, got {} targets",
            targets.len()
        );
        let (m, k) = (sl[0], sl[1]);
        let src = &self.nodes[logits.0].data;
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            assert!(t < k, "cross_entropy: target {t} out of range for {k} classes");
            let row = &src[r * k..(r + 1) * k];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            total += lse - row[t];
        }
        let rg = self.nodes[logits.0].requires_grad;
        let tg = targets.to_vec();
        self.push_op(vec![1], vec![total / m as f64], rg, |out| Record::CrossEntropy {
            logits: logits.0,
            targets: tg,
            out,
        })
    }

    // ── backward ────────────────────────────────────────────────────

    /// Reverse sweep from a scalar `loss`. Gradients accumulate across
    /// repeated calls on the same tape.
    pub fn backward(&mut self, loss: Val) -> Result<(), AutodiffError> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(self.nodes[loss.0].shape.clone()));
        }
        if self.records.is_empty() {
            return Err(AutodiffError::EmptyTape);
        }
        while self.grads.len() < self.nodes.len() {
            let n = self.grads.len();
            self.grads.push(vec![0.0; self.nodes[n].data.len()]);
        }
        // Seed of 1 at the loss, then one reverse visit per record.
        let mut local: Vec<Vec<f64>> = self.nodes.iter().map(|n| vec![0.0; n.data.len()]).collect();
        local[loss.0][0] = 1.0;

        for rec in self.records.iter().rev() {
            self.step_backward(rec, &mut local);
        }
        for (dst, src) in self.grads.iter_mut().zip(&local) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        Ok(())
    }

    fn step_backward(&self, rec: &Record, g: &mut [Vec<f64>]) {
        match rec {
            Record::MatMul { a, b, out } => {
                let (m, k) = (self.nodes[*a].shape[0], self.nodes[*a].shape[1]);
                let n = self.nodes[*b].shape[1];
                let go = g[*out].clone();
                // dA = G B^T
                let bd = &self.nodes[*b].data;
                let ga = &mut g[*a];
                for i in 0..m {
                    for p in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += go[i * n + j] * bd[p * n + j];
                        }
                        ga[i * k + p] += s;
                    }
                }
                // dB = A^T G
                let ad = &self.nodes[*a].data;
                let gb = &mut g[*b];
                for p in 0..k {
                    for j in 0..n {
                        let mut s = 0.0;
                        for i in 0..m {
                            s += ad[i * k + p] * go[i * n + j];
                        }
                        gb[p * n + j] += s;
                    }
                }
            }
            Record::Add { a, b, out } => {
                let go = g[*out].clone();
                for (d, s) in g[*a].iter_mut().zip(&go) {
                    *d += s;
                }
                for (d, s) in g[*b].iter_mut().zip(&go) {
                    *d += s;
                }
            }
            Record::Sub { a, b, out } => {
                let go = g[*out].clone();
                for (d, s) in g[*a].iter_mut().zip(&go) {
                    *d += s;
                }
                for (d, s) in g[*b].iter_mut().zip(&go) {
                    *d -= s;
                }
            }
            Record::Mul { a, b, out } => {
                let go = g[*out].clone();
                {
                    let bd = &self.nodes[*b].data;
                    for ((d, s), x) in g[*a].iter_mut().zip(&go).zip(bd) {
                        *d += s * x;
                    }
                }
                let ad = &self.nodes[*a].data;
                for ((d, s), x) in g[*b].iter_mut().zip(&go).zip(ad) {
                    *d += s * x;
                }
            }
            Record::AddBias { a, bias, out } => {
                let go = g[*out].clone();
                for (d, s) in g[*a].iter_mut().zip(&go) {
                    *d += s;
                }
                let n = self.nodes[*bias].data.len();
                let gb = &mut g[*bias];
                for (i, s) in go.iter().enumerate() {
                    gb[i % n] += s;
                }
            }
            Record::Sigmoid { a, out } => {
                let od = &self.nodes[*out].data;
                let go = g[*out].clone();
                for ((d, s), y) in g[*a].iter_mut().zip(&go).zip(od) {
                    *d += s * y * (1.0 - y);
                }
            }
            Record::Tanh { a, out } => {
                let od = &self.nodes[*out].data;
                let go = g[*out].clone();
                for ((d, s), y) in g[*a].iter_mut().zip(&go).zip(od) {
                    *d += s * (1.0 - y * y);
                }
            }
            Record::Log { a, out } => {
                let ad = &self.nodes[*a].data;
                let go = g[*out].clone();
                for ((d, s), x) in g[*a].iter_mut().zip(&go).zip(ad) {
                    *d += s / x;
                }
            }
            Record::Scale { a, c, out } => {
                let go = g[*out].clone();
                for (d, s) in g[*a].iter_mut().zip(&go) {
                    *d += s * c;
                }
            }
            Record::Softmax { a, axis, out } => {
                // ds_i = y_i (g_i - sum_j g_j y_j) per lane
                let y = &self.nodes[*out].data;
                let shape = &self.nodes[*out].shape;
                let (rows, cols) = (shape[0], shape[1]);
                let go = g[*out].clone();
                let (lanes, lane_len, stride, lane_step) = if *axis == 1 {
                    (rows, cols, 1usize, cols)
                } else {
                    (cols, rows, cols, 1usize)
                };
                let ga = &mut g[*a];
                for lane in 0..lanes {
                    let base = lane * lane_step;
                    let mut dot = 0.0;
                    for i in 0..lane_len {
                        let ix = base + i * stride;
                        dot += go[ix] * y[ix];
                    }
                    for i in 0..lane_len {
                        let ix = base + i * stride;
                        ga[ix] += y[ix] * (go[ix] - dot);
                    }
                }
            }
            Record::Concat { inputs, axis, out } => {
                let go = g[*out].clone();
                let oshape = &self.nodes[*out].shape;
                let (rows, cols) = (oshape[0], oshape[1]);
                if *axis == 0 {
                    let mut offset = 0;
                    for v in inputs {
                        let len = self.nodes[*v].data.len();
                        for (d, s) in g[*v].iter_mut().zip(&go[offset..offset + len]) {
                            *d += s;
                        }
                        offset += len;
                    }
                } else {
                    let mut col_off = 0;
                    for v in inputs {
                        let w = self.nodes[*v].shape[1];
                        let gv = &mut g[*v];
                        for r in 0..rows {
                            for c in 0..w {
                                gv[r * w + c] += go[r * cols + col_off + c];
                            }
                        }
                        col_off += w;
                    }
                }
            }
            Record::Slice { a, axis, start, out } => {
                let go = g[*out].clone();
                let oshape = self.nodes[*out].shape.clone();
                let ashape = &self.nodes[*a].shape;
                let acols = ashape[1];
                let ga = &mut g[*a];
                if *axis == 0 {
                    let off = start * acols;
                    for (d, s) in ga[off..off + go.len()].iter_mut().zip(&go) {
                        *d += s;
                    }
                } else {
                    let (rows, w) = (oshape[0], oshape[1]);
                    for r in 0..rows {
                        for c in 0..w {
                            ga[r * acols + start + c] += go[r * w + c];
                        }
                    }
                }
            }
            Record::Transpose { a, out } => {
                // grad of A[r,c] is G[c,r]
                let go = g[*out].clone();
                let oshape = &self.nodes[*out].shape;
                let (rows, cols) = (oshape[0], oshape[1]);
                let ga = &mut g[*a];
                for r in 0..rows {
                    for c in 0..cols {
                        ga[c * rows + r] += go[r * cols + c];
                    }
                }
            }
            Record::Reshape { a, out } => {
                let go = g[*out].clone();
                for (ga, go) in g[*a].iter_mut().zip(&go) {
                    *ga += go;
                }
            }
            Record::EmbedLookup { table, indices, out } => {
                let go = g[*out].clone();
                let dim = self.nodes[*out].shape[1];
                let gt = &mut g[*table];
                for (i, &ix) in indices.iter().enumerate() {
                    for c in 0..dim {
                        gt[ix * dim + c] += go[i * dim + c];
                    }
                }
            }
            Record::Sum { a, out } => {
                let s = g[*out][0];
                for d in g[*a].iter_mut() {
                    *d += s;
                }
            }
            Record::Mean { a, out } => {
                let n = self.nodes[*a].data.len() as f64;
                let s = g[*out][0] / n;
                for d in g[*a].iter_mut() {
                    *d += s;
                }
            }
            Record::CrossEntropy { logits, targets, out } => {
                // d/dlogits = (softmax(row) - onehot(target)) / m
                let s = g[*out][0];
                let (m, k) = (self.nodes[*logits].shape[0], self.nodes[*logits].shape[1]);
                let src = &self.nodes[*logits].data;
                let gl = &mut g[*logits];
                let scale = s / m as f64;
                for (r, &t) in targets.iter().enumerate() {
                    let row = &src[r * k..(r + 1) * k];
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let denom: f64 = row.iter().map(|&x| (x - max).exp()).sum();
                    for c in 0..k {
                        let p = (row[c] - max).exp() / denom;
                        let onehot = if c == t { 1.0 } else { 0.0 };
                        gl[r * k + c] += scale * (p - onehot);
                    }
                }
            }
        }
    }
}
