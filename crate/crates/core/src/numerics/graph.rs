//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node to the tape; node ids are handed out in
//! topological order, so the backward sweep is a single reverse pass. Gradient
//! buffers are allocated lazily and accumulated in place, which keeps sparse
//! ops (`index`, `pick`, `gather_rows`) O(1) per selected element even when
//! the source tensor is large.

use std::collections::HashMap;
use std::ops::Range;
use std::sync::Arc;

use super::gemm::{gemm, MatRef};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{bail, Result};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One block of a block-diagonal attention pattern: query rows `q` attend to key rows `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttnSegment {
    pub q: Range<usize>,
    pub k: Range<usize>,
}

impl AttnSegment {
    pub fn square(rows: Range<usize>) -> Self {
        Self {
            q: rows.clone(),
            k: rows,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    Affine(NodeId, NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    /// Keeps the tanh term for the backward pass.
    Gelu(NodeId, Vec<f64>),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        rstd: Vec<f64>,
    },
    GatherRows {
        src: NodeId,
        index: Vec<Option<usize>>,
    },
    Softmax {
        x: NodeId,
        width: usize,
    },
    LogSoftmax {
        x: NodeId,
        width: usize,
    },
    LogSumExp(NodeId),
    LogAddExp(NodeId, NodeId),
    Concat {
        inputs: Vec<NodeId>,
        axis: Axis,
    },
    MeanRows(NodeId),
    Sum(Vec<NodeId>),
    SumAll(NodeId),
    Index(NodeId, usize),
    Pick(NodeId, Vec<usize>),
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        segments: Vec<AttnSegment>,
        probs: Vec<f64>,
    },
    DepthwiseConv {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        spans: Vec<Range<usize>>,
    },
    CrossEntropy {
        logits: NodeId,
        target: usize,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Arc<Tensor>,
    needs_grad: bool,
}

/// Recording tape. One graph per forward pass; drop it when done.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, NodeId>,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    leaves: HashMap<NodeId, Tensor>,
    params: HashMap<ParamId, Tensor>,
}

impl Gradients {
    /// Gradient of a leaf created with `requires_grad`.
    pub fn leaf(&self, id: NodeId) -> Option<&Tensor> {
        self.leaves.get(&id)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    /// Per-parameter gradients aligned with `store`; parameters the loss does
    /// not touch get `None`.
    pub fn for_store(mut self, store: &ParamStore) -> Vec<Option<Tensor>> {
        store.ids().map(|id| self.params.remove(&id)).collect()
    }
}

fn shape2(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn row_softmax_inplace(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        row.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn logsumexp_slice(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn gelu_tanh(x: f64) -> f64 {
    (GELU_C * (x + GELU_A * x * x * x)).tanh()
}

fn gelu_grad(x: f64, t: f64) -> f64 {
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> NodeId {
        debug_assert!(value.data().iter().all(|v| !v.is_nan()), "NaN produced by {op:?}");
        self.nodes.push(Node {
            op,
            value: Arc::new(value),
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Input tensor; receives a gradient iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> NodeId {
        let needs = tensor.requires_grad();
        self.push(Op::Leaf, tensor, needs)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, tensor: Tensor) -> NodeId {
        self.push(Op::Leaf, tensor.with_requires_grad(false), false)
    }

    /// Registers a trainable parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&node) = self.params.get(&id) {
            return node;
        }
        let value = store.shared(id);
        self.nodes.push(Node {
            op: Op::Param(id),
            value,
            needs_grad: true,
        });
        let node = NodeId(self.nodes.len() - 1);
        self.params.insert(id, node);
        node
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.shape().len() != 2 {
            bail!(Dimension, "matmul rhs must be a matrix, got {:?}", bv.shape());
        }
        let (m, k) = shape2(av);
        let (k2, n) = shape2(bv);
        if k != k2 {
            bail!(Dimension, "matmul {:?} x {:?}", av.shape(), bv.shape());
        }
        let mut out = vec![0.0; m * n];
        gemm(
            MatRef::dense(av.data(), m, k),
            MatRef::dense(bv.data(), k, n),
            &mut out,
            0,
            n,
            0.0,
        );
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::MatMul(a, b), Tensor::new(vec![m, n], out)?, needs))
    }

    /// `x · w + b` with `b` broadcast over rows.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (m, k) = shape2(xv);
        let (k2, n) = shape2(wv);
        if k != k2 || bv.len() != n {
            bail!(
                Dimension,
                "affine {:?} x {:?} + {:?}",
                xv.shape(),
                wv.shape(),
                bv.shape()
            );
        }
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(bv.data());
        }
        gemm(
            MatRef::dense(xv.data(), m, k),
            MatRef::dense(wv.data(), k, n),
            &mut out,
            0,
            n,
            1.0,
        );
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(Op::Affine(x, w, b), Tensor::new(vec![m, n], out)?, needs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            bail!(Dimension, "add {:?} + {:?}", av.shape(), bv.shape());
        }
        let out: Vec<f64> = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(av.shape().to_vec(), out)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add(a, b), t, needs))
    }

    /// Adds the vector `b` to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let n = av.cols();
        if bv.len() != n {
            bail!(Dimension, "add_row {:?} + {:?}", av.shape(), bv.shape());
        }
        let out: Vec<f64> = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + bv.data()[i % n])
            .collect();
        let t = Tensor::new(av.shape().to_vec(), out)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::AddRow(a, b), t, needs))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            bail!(Dimension, "mul {:?} * {:?}", av.shape(), bv.shape());
        }
        let out: Vec<f64> = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(av.shape().to_vec(), out)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Mul(a, b), t, needs))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let av = self.value(a);
        let out: Vec<f64> = av.data().iter().map(|x| x * c).collect();
        let t = Tensor::new(av.shape().to_vec(), out).expect("same shape");
        let needs = self.needs(a);
        self.push(Op::Scale(a, c), t, needs)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let out: Vec<f64> = av.data().iter().map(|x| x.max(0.0)).collect();
        let t = Tensor::new(av.shape().to_vec(), out).expect("same shape");
        let needs = self.needs(a);
        self.push(Op::Relu(a), t, needs)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let tanh: Vec<f64> = av.data().iter().map(|&x| gelu_tanh(x)).collect();
        let out: Vec<f64> = av.data().iter().zip(&tanh).map(|(&x, t)| 0.5 * x * (1.0 + t)).collect();
        let t = Tensor::new(av.shape().to_vec(), out).expect("same shape");
        let needs = self.needs(a);
        self.push(Op::Gelu(a, if needs { tanh } else { Vec::new() }), t, needs)
    }

    /// Normalizes each row to zero mean / unit variance, then applies `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let (m, n) = shape2(xv);
        if gv.len() != n || bv.len() != n {
            bail!(Dimension, "layer_norm over {} with gamma {:?}", n, gv.shape());
        }
        let mut out = vec![0.0; m * n];
        let mut rstd = Vec::with_capacity(m);
        for i in 0..m {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let r = 1.0 / (var + LN_EPS).sqrt();
            for j in 0..n {
                out[i * n + j] = (row[j] - mean) * r * gv.data()[j] + bv.data()[j];
            }
            rstd.push(r);
        }
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(Op::LayerNorm { x, gamma, beta, rstd }, t, needs))
    }

    /// Gathers rows of `src` (embedding lookup); `None` produces a zero row.
    pub fn gather_rows(&mut self, src: NodeId, index: Vec<Option<usize>>) -> Result<NodeId> {
        let sv = self.value(src);
        let (r, n) = shape2(sv);
        let mut out = vec![0.0; index.len() * n];
        for (i, ix) in index.iter().enumerate() {
            if let Some(j) = *ix {
                if j >= r {
                    bail!(Index, "row {} out of range for {} rows", j, r);
                }
                out[i * n..(i + 1) * n].copy_from_slice(sv.row(j));
            }
        }
        let t = Tensor::new(vec![index.len(), n], out)?;
        let needs = self.needs(src);
        Ok(self.push(Op::GatherRows { src, index }, t, needs))
    }

    /// Embedding lookup by token id.
    pub fn embed(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        self.gather_rows(table, ids.iter().map(|&i| Some(i)).collect())
    }

    /// Softmax over consecutive chunks of `width` values.
    pub fn softmax(&mut self, x: NodeId, width: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if width == 0 || !xv.len().is_multiple_of(width) {
            bail!(Dimension, "softmax width {} over {} values", width, xv.len());
        }
        let mut out = xv.data().to_vec();
        out.chunks_mut(width).for_each(row_softmax_inplace);
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        let needs = self.needs(x);
        Ok(self.push(Op::Softmax { x, width }, t, needs))
    }

    /// Log-softmax over consecutive chunks of `width` values.
    pub fn log_softmax(&mut self, x: NodeId, width: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if width == 0 || !xv.len().is_multiple_of(width) {
            bail!(Dimension, "log_softmax width {} over {} values", width, xv.len());
        }
        let mut out = xv.data().to_vec();
        for chunk in out.chunks_mut(width) {
            let lse = logsumexp_slice(chunk);
            chunk.iter_mut().for_each(|v| *v -= lse);
        }
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        let needs = self.needs(x);
        Ok(self.push(Op::LogSoftmax { x, width }, t, needs))
    }

    /// `log Σ exp(x)` over all elements.
    pub fn logsumexp(&mut self, x: NodeId) -> NodeId {
        let v = logsumexp_slice(self.value(x).data());
        let needs = self.needs(x);
        self.push(Op::LogSumExp(x), Tensor::scalar(v), needs)
    }

    /// Elementwise `log(exp(a) + exp(b))`.
    pub fn log_add_exp(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            bail!(Dimension, "log_add_exp {:?} vs {:?}", av.shape(), bv.shape());
        }
        let out: Vec<f64> = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| log_add_exp(x, y))
            .collect();
        let t = Tensor::new(av.shape().to_vec(), out)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::LogAddExp(a, b), t, needs))
    }

    pub fn concat(&mut self, inputs: &[NodeId], axis: Axis) -> Result<NodeId> {
        if inputs.is_empty() {
            bail!(Contract, "concat of nothing");
        }
        let values: Vec<&Tensor> = inputs.iter().map(|&i| self.value(i)).collect();
        let t = match axis {
            Axis::Rows => {
                let n = values[0].cols();
                if values.iter().any(|v| v.cols() != n) {
                    bail!(Dimension, "row concat with mismatched widths");
                }
                let rows: usize = values.iter().map(|v| v.rows()).sum();
                let data: Vec<f64> = values.iter().flat_map(|v| v.data().iter().cloned()).collect();
                Tensor::new(vec![rows, n], data)?
            }
            Axis::Cols => {
                let m = values[0].rows();
                if values.iter().any(|v| v.rows() != m) {
                    bail!(Dimension, "column concat with mismatched heights");
                }
                let n: usize = values.iter().map(|v| v.cols()).sum();
                let mut data = Vec::with_capacity(m * n);
                for i in 0..m {
                    for v in &values {
                        data.extend_from_slice(v.row(i));
                    }
                }
                Tensor::new(vec![m, n], data)?
            }
        };
        let needs = inputs.iter().any(|&i| self.needs(i));
        Ok(self.push(
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            t,
            needs,
        ))
    }

    /// Mean over rows: `[m × n] -> [1 × n]`.
    pub fn mean_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let (m, n) = shape2(xv);
        if m == 0 {
            bail!(Contract, "mean over zero rows");
        }
        let mut out = vec![0.0; n];
        for i in 0..m {
            for (o, v) in out.iter_mut().zip(xv.row(i)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|v| *v /= m as f64);
        let needs = self.needs(x);
        Ok(self.push(Op::MeanRows(x), Tensor::new(vec![1, n], out)?, needs))
    }

    /// Elementwise sum of same-shaped tensors.
    pub fn sum(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = inputs.first() else {
            bail!(Contract, "sum of nothing");
        };
        let shape = self.value(first).shape().to_vec();
        let mut out = vec![0.0; self.value(first).len()];
        for &i in inputs {
            let v = self.value(i);
            if v.shape() != shape.as_slice() {
                bail!(Dimension, "sum {:?} vs {:?}", shape, v.shape());
            }
            out.iter_mut().zip(v.data()).for_each(|(o, x)| *o += x);
        }
        let needs = inputs.iter().any(|&i| self.needs(i));
        Ok(self.push(Op::Sum(inputs.to_vec()), Tensor::new(shape, out)?, needs))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let v: f64 = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        self.push(Op::SumAll(x), Tensor::scalar(v), needs)
    }

    /// Single element by flat index.
    pub fn index(&mut self, x: NodeId, i: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if i >= xv.len() {
            bail!(Index, "flat index {} out of range {}", i, xv.len());
        }
        let v = xv.data()[i];
        let needs = self.needs(x);
        Ok(self.push(Op::Index(x, i), Tensor::scalar(v), needs))
    }

    /// Vector of elements by flat index.
    pub fn pick(&mut self, x: NodeId, indices: Vec<usize>) -> Result<NodeId> {
        let xv = self.value(x);
        let mut out = Vec::with_capacity(indices.len());
        for &i in &indices {
            if i >= xv.len() {
                bail!(Index, "flat index {} out of range {}", i, xv.len());
            }
            out.push(xv.data()[i]);
        }
        let needs = self.needs(x);
        Ok(self.push(Op::Pick(x, indices), Tensor::vector(out), needs))
    }

    /// Multi-head scaled dot-product attention restricted to the given segments.
    ///
    /// `q` is `[n_q × d]`, `k` and `v` are `[n_k × d]`; `d` must divide into
    /// `heads`. Query rows outside every segment produce zeros. With `causal`
    /// each segment must be square and query `i` only sees keys `≤ i`.
    pub fn attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        segments: Vec<AttnSegment>,
        causal: bool,
    ) -> Result<NodeId> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (nq, d) = shape2(qv);
        let (nk, dk) = shape2(kv);
        if dk != d || vv.cols() != d || vv.rows() != nk || heads == 0 || d % heads != 0 {
            bail!(
                Dimension,
                "attention q {:?} k {:?} v {:?} heads {}",
                qv.shape(),
                kv.shape(),
                vv.shape(),
                heads
            );
        }
        for s in &segments {
            if s.q.end > nq || s.k.end > nk || s.k.is_empty() {
                bail!(Index, "attention segment {:?} out of range", s);
            }
            if causal && s.q.len() != s.k.len() {
                bail!(Contract, "causal attention needs square segments");
            }
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = vec![0.0; nq * d];
        let total: usize = segments.iter().map(|s| s.q.len() * s.k.len()).sum::<usize>() * heads;
        let mut probs = vec![0.0; total];
        let mut off = 0;
        for s in &segments {
            let (lq, lk) = (s.q.len(), s.k.len());
            for h in 0..heads {
                let p = &mut probs[off..off + lq * lk];
                let qm = MatRef::new(qv.data(), s.q.start * d + h * dh, lq, dh, d);
                let km = MatRef::new(kv.data(), s.k.start * d + h * dh, lk, dh, d);
                gemm(qm, km.t(), p, 0, lk, 0.0);
                for i in 0..lq {
                    let row = &mut p[i * lk..(i + 1) * lk];
                    for (j, x) in row.iter_mut().enumerate() {
                        *x = if causal && j > i { f64::NEG_INFINITY } else { *x * scale };
                    }
                    row_softmax_inplace(row);
                }
                let vm = MatRef::new(vv.data(), s.k.start * d + h * dh, lk, dh, d);
                gemm(MatRef::dense(p, lq, lk), vm, &mut out, s.q.start * d + h * dh, d, 0.0);
                off += lq * lk;
            }
        }
        let needs = self.needs(q) || self.needs(k) || self.needs(v);
        let t = Tensor::new(vec![nq, d], out)?;
        Ok(self.push(
            Op::Attention {
                q,
                k,
                v,
                heads,
                segments,
                probs,
            },
            t,
            needs,
        ))
    }

    /// Depthwise 1-D convolution along rows with centered ("same") padding;
    /// `spans` delimit independent sequences so no kernel crosses a boundary.
    /// `w` is `[kernel × d]`, `b` is `[d]`.
    pub fn depthwise_conv(&mut self, x: NodeId, w: NodeId, b: NodeId, spans: Vec<Range<usize>>) -> Result<NodeId> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (m, d) = shape2(xv);
        let (kernel, dw) = shape2(wv);
        if dw != d || bv.len() != d || kernel % 2 == 0 {
            bail!(
                Dimension,
                "depthwise_conv x {:?} w {:?} b {:?}",
                xv.shape(),
                wv.shape(),
                bv.shape()
            );
        }
        let half = (kernel / 2) as isize;
        let mut out = vec![0.0; m * d];
        for span in &spans {
            if span.end > m {
                bail!(Index, "conv span {:?} beyond {} rows", span, m);
            }
            for t in span.clone() {
                let o = &mut out[t * d..(t + 1) * d];
                o.copy_from_slice(bv.data());
                for j in 0..kernel {
                    let src = t as isize + j as isize - half;
                    if src < span.start as isize || src >= span.end as isize {
                        continue;
                    }
                    let xr = xv.row(src as usize);
                    let wr = wv.row(j);
                    for c in 0..d {
                        o[c] += wr[c] * xr[c];
                    }
                }
            }
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        let t = Tensor::new(vec![m, d], out)?;
        Ok(self.push(Op::DepthwiseConv { x, w, b, spans }, t, needs))
    }

    /// `-log softmax(logits)[target]`, max-subtracted.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        let lv = self.value(logits);
        if target >= lv.len() {
            bail!(Index, "target {} out of range for {} logits", target, lv.len());
        }
        let mut probs = lv.data().to_vec();
        let lse = logsumexp_slice(&probs);
        let loss = lse - probs[target];
        row_softmax_inplace(&mut probs);
        let needs = self.needs(logits);
        Ok(self.push(Op::CrossEntropy { logits, target, probs }, Tensor::scalar(loss), needs))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            bail!(
                Contract,
                "backward from non-scalar of shape {:?}",
                self.value(loss).shape()
            );
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut result = Gradients::default();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    result
                        .leaves
                        .insert(NodeId(i), Tensor::new(node.value.shape().to_vec(), g)?);
                }
                Op::Param(pid) => {
                    result.params.insert(*pid, Tensor::new(node.value.shape().to_vec(), g)?);
                }
                op => self.backward_op(op, &node.value, &g, &mut grads),
            }
        }
        Ok(result)
    }

    fn backward_op(&self, op: &Op, out: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match op {
            Op::Leaf | Op::Param(_) => unreachable!(),
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = shape2(av);
                let n = bv.cols();
                let gm = MatRef::dense(g, m, n);
                if let Some(buf) = self.grad_buf(grads, *a) {
                    gemm(gm, MatRef::dense(bv.data(), k, n).t(), buf, 0, k, 1.0);
                }
                if let Some(buf) = self.grad_buf(grads, *b) {
                    gemm(MatRef::dense(av.data(), m, k).t(), gm, buf, 0, n, 1.0);
                }
            }
            Op::Affine(x, w, b) => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (m, k) = shape2(xv);
                let n = wv.cols();
                let gm = MatRef::dense(g, m, n);
                if let Some(buf) = self.grad_buf(grads, *x) {
                    gemm(gm, MatRef::dense(wv.data(), k, n).t(), buf, 0, k, 1.0);
                }
                if let Some(buf) = self.grad_buf(grads, *w) {
                    gemm(MatRef::dense(xv.data(), m, k).t(), gm, buf, 0, n, 1.0);
                }
                if let Some(buf) = self.grad_buf(grads, *b) {
                    for row in g.chunks(n) {
                        buf.iter_mut().zip(row).for_each(|(o, v)| *o += v);
                    }
                }
            }
            Op::Add(a, b) => {
                for p in [*a, *b] {
                    if let Some(buf) = self.grad_buf(grads, p) {
                        buf.iter_mut().zip(g).for_each(|(o, v)| *o += v);
                    }
                }
            }
            Op::AddRow(a, b) => {
                if let Some(buf) = self.grad_buf(grads, *a) {
                    buf.iter_mut().zip(g).for_each(|(o, v)| *o += v);
                }
                if let Some(buf) = self.grad_buf(grads, *b) {
                    let n = buf.len();
                    for row in g.chunks(n) {
                        buf.iter_mut().zip(row).for_each(|(o, v)| *o += v);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(buf) = self.grad_buf(grads, *a) {
                    for ((o, gi), y) in buf.iter_mut().zip(g).zip(bv) {
                        *o += gi * y;
                    }
                }
                if let Some(buf) = self.grad_buf(grads, *b) {
                    for ((o, gi), x) in buf.iter_mut().zip(g).zip(av) {
                        *o += gi * x;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(buf) = self.grad_buf(grads, *a) {
                    buf.iter_mut().zip(g).for_each(|(o, v)| *o += v * c);
                }
            }
            Op::Relu(a) => {
                let av = self.value(*a).data();
                if let Some(buf) = self.grad_buf(grads, *a) {
                    for ((o, gi), x) in buf.iter_mut().zip(g).zip(av) {
                        if *x > 0.0 {
                            *o += gi;
                        }
                    }
                }
            }
            Op::Gelu(a, tanh) => {
                let av = self.value(*a).data();
                if let Some(buf) = self.grad_buf(grads, *a) {
                    for (((o, gi), x), t) in buf.iter_mut().zip(g).zip(av).zip(tanh) {
                        *o += gi * gelu_grad(*x, *t);
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, rstd } => {
                let (xv, gv) = (self.value(*x), self.value(*gamma));
                let (m, n) = shape2(xv);
                let mut xhat = vec![0.0; m * n];
                for i in 0..m {
                    let row = xv.row(i);
                    let mean = row.iter().sum::<f64>() / n as f64;
                    for j in 0..n {
                        xhat[i * n + j] = (row[j] - mean) * rstd[i];
                    }
                }
                if let Some(buf) = self.grad_buf(grads, *gamma) {
                    for (gi, xh) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            buf[j] += gi[j] * xh[j];
                        }
                    }
                }
                if let Some(buf) = self.grad_buf(grads, *beta) {
                    for gi in g.chunks(n) {
                        buf.iter_mut().zip(gi).for_each(|(o, v)| *o += v);
                    }
                }
                if let Some(buf) = self.grad_buf(grads, *x) {
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        let xh = &xhat[i * n..(i + 1) * n];
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for j in 0..n {
                            let d = gi[j] * gv.data()[j];
                            mean_d += d;
                            mean_dx += d * xh[j];
                        }
                        mean_d /= n as f64;
                        mean_dx /= n as f64;
                        for j in 0..n {
                            let d = gi[j] * gv.data()[j];
                            buf[i * n + j] += rstd[i] * (d - mean_d - xh[j] * mean_dx);
                        }
                    }
                }
            }
            Op::GatherRows { src, index } => {
                let n = out.cols();
                if let Some(buf) = self.grad_buf(grads, *src) {
                    for (i, ix) in index.iter().enumerate() {
                        if let Some(j) = *ix {
                            let dst = &mut buf[j * n..(j + 1) * n];
                            dst.iter_mut().zip(&g[i * n..(i + 1) * n]).for_each(|(o, v)| *o += v);
                        }
                    }
                }
            }
            Op::Softmax { x, width } => {
                if let Some(buf) = self.grad_buf(grads, *x) {
                    let y = out.data();
                    for ((bc, gc), yc) in buf.chunks_mut(*width).zip(g.chunks(*width)).zip(y.chunks(*width)) {
                        let dot: f64 = gc.iter().zip(yc).map(|(a, b)| a * b).sum();
                        for j in 0..*width {
                            bc[j] += yc[j] * (gc[j] - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax { x, width } => {
                if let Some(buf) = self.grad_buf(grads, *x) {
                    let y = out.data();
                    for ((bc, gc), yc) in buf.chunks_mut(*width).zip(g.chunks(*width)).zip(y.chunks(*width)) {
                        let total: f64 = gc.iter().sum();
                        if total == 0.0 && gc.iter().all(|v| *v == 0.0) {
                            continue;
                        }
                        for j in 0..*width {
                            bc[j] += gc[j] - yc[j].exp() * total;
                        }
                    }
                }
            }
            Op::LogSumExp(x) => {
                let lse = out.data()[0];
                let xv = self.value(*x).data();
                if let Some(buf) = self.grad_buf(grads, *x) {
                    if lse.is_finite() {
                        for (o, v) in buf.iter_mut().zip(xv) {
                            *o += g[0] * (v - lse).exp();
                        }
                    }
                }
            }
            Op::LogAddExp(a, b) => {
                let y = out.data();
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                for (p, pv) in [(*a, av), (*b, bv)] {
                    if let Some(buf) = self.grad_buf(grads, p) {
                        for i in 0..buf.len() {
                            if y[i].is_finite() {
                                buf[i] += g[i] * (pv[i] - y[i]).exp();
                            }
                        }
                    }
                }
            }
            Op::Concat { inputs, axis } => match axis {
                Axis::Rows => {
                    let mut off = 0;
                    for &p in inputs {
                        let len = self.value(p).len();
                        if let Some(buf) = self.grad_buf(grads, p) {
                            buf.iter_mut().zip(&g[off..off + len]).for_each(|(o, v)| *o += v);
                        }
                        off += len;
                    }
                }
                Axis::Cols => {
                    let n = out.cols();
                    let m = out.rows();
                    let mut col = 0;
                    for &p in inputs {
                        let w = self.value(p).cols();
                        if let Some(buf) = self.grad_buf(grads, p) {
                            for i in 0..m {
                                let src = &g[i * n + col..i * n + col + w];
                                buf[i * w..(i + 1) * w].iter_mut().zip(src).for_each(|(o, v)| *o += v);
                            }
                        }
                        col += w;
                    }
                }
            },
            Op::MeanRows(x) => {
                let m = self.value(*x).rows() as f64;
                if let Some(buf) = self.grad_buf(grads, *x) {
                    let n = g.len();
                    for row in buf.chunks_mut(n) {
                        row.iter_mut().zip(g).for_each(|(o, v)| *o += v / m);
                    }
                }
            }
            Op::Sum(inputs) => {
                for &p in inputs {
                    if let Some(buf) = self.grad_buf(grads, p) {
                        buf.iter_mut().zip(g).for_each(|(o, v)| *o += v);
                    }
                }
            }
            Op::SumAll(x) => {
                if let Some(buf) = self.grad_buf(grads, *x) {
                    buf.iter_mut().for_each(|o| *o += g[0]);
                }
            }
            Op::Index(x, i) => {
                if let Some(buf) = self.grad_buf(grads, *x) {
                    buf[*i] += g[0];
                }
            }
            Op::Pick(x, indices) => {
                if let Some(buf) = self.grad_buf(grads, *x) {
                    for (&i, v) in indices.iter().zip(g) {
                        buf[i] += v;
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                segments,
                probs,
            } => self.attention_backward(*q, *k, *v, *heads, segments, probs, g, grads),
            Op::DepthwiseConv { x, w, b, spans } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let d = xv.cols();
                let kernel = wv.rows();
                let half = (kernel / 2) as isize;
                let mut dx = self.needs(*x).then(|| vec![0.0; xv.len()]);
                let mut dw = self.needs(*w).then(|| vec![0.0; wv.len()]);
                for span in spans {
                    for t in span.clone() {
                        let gr = &g[t * d..(t + 1) * d];
                        for j in 0..kernel {
                            let src = t as isize + j as isize - half;
                            if src < span.start as isize || src >= span.end as isize {
                                continue;
                            }
                            let src = src as usize;
                            if let Some(dx) = dx.as_mut() {
                                let wr = wv.row(j);
                                let o = &mut dx[src * d..(src + 1) * d];
                                for c in 0..d {
                                    o[c] += gr[c] * wr[c];
                                }
                            }
                            if let Some(dw) = dw.as_mut() {
                                let xr = xv.row(src);
                                let o = &mut dw[j * d..(j + 1) * d];
                                for c in 0..d {
                                    o[c] += gr[c] * xr[c];
                                }
                            }
                        }
                    }
                }
                if let (Some(dx), Some(buf)) = (dx, self.grad_buf(grads, *x)) {
                    buf.iter_mut().zip(&dx).for_each(|(o, v)| *o += v);
                }
                if let (Some(dw), Some(buf)) = (dw, self.grad_buf(grads, *w)) {
                    buf.iter_mut().zip(&dw).for_each(|(o, v)| *o += v);
                }
                if let Some(buf) = self.grad_buf(grads, *b) {
                    for span in spans {
                        for t in span.clone() {
                            buf.iter_mut().zip(&g[t * d..(t + 1) * d]).for_each(|(o, v)| *o += v);
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, target, probs } => {
                if let Some(buf) = self.grad_buf(grads, *logits) {
                    for (j, (o, p)) in buf.iter_mut().zip(probs).enumerate() {
                        let y = if j == *target { 1.0 } else { 0.0 };
                        *o += g[0] * (p - y);
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        segments: &[AttnSegment],
        probs: &[f64],
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.cols();
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = vec![0.0; qv.len()];
        let mut dk = vec![0.0; kv.len()];
        let mut dv = vec![0.0; vv.len()];
        let mut off = 0;
        for s in segments {
            let (lq, lk) = (s.q.len(), s.k.len());
            let mut dp = vec![0.0; lq * lk];
            for h in 0..heads {
                let p = &probs[off..off + lq * lk];
                let go = MatRef::new(g, s.q.start * d + h * dh, lq, dh, d);
                let vm = MatRef::new(vv.data(), s.k.start * d + h * dh, lk, dh, d);
                gemm(go, vm.t(), &mut dp, 0, lk, 0.0);
                gemm(
                    MatRef::dense(p, lq, lk).t(),
                    go,
                    &mut dv,
                    s.k.start * d + h * dh,
                    d,
                    1.0,
                );
                for i in 0..lq {
                    let pr = &p[i * lk..(i + 1) * lk];
                    let dr = &mut dp[i * lk..(i + 1) * lk];
                    let dot: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
                    for j in 0..lk {
                        dr[j] = pr[j] * (dr[j] - dot) * scale;
                    }
                }
                let qm = MatRef::new(qv.data(), s.q.start * d + h * dh, lq, dh, d);
                let km = MatRef::new(kv.data(), s.k.start * d + h * dh, lk, dh, d);
                gemm(MatRef::dense(&dp, lq, lk), km, &mut dq, s.q.start * d + h * dh, d, 1.0);
                gemm(
                    MatRef::dense(&dp, lq, lk).t(),
                    qm,
                    &mut dk,
                    s.k.start * d + h * dh,
                    d,
                    1.0,
                );
                off += lq * lk;
            }
        }
        for (p, contrib) in [(q, dq), (k, dk), (v, dv)] {
            if let Some(buf) = self.grad_buf(grads, p) {
                buf.iter_mut().zip(&contrib).for_each(|(o, x)| *o += x);
            }
        }
    }

    fn grad_buf<'a>(&self, grads: &'a mut [Option<Vec<f64>>], id: NodeId) -> Option<&'a mut Vec<f64>> {
        if !self.needs(id) {
            return None;
        }
        let len = self.value(id).len();
        Some(grads[id.0].get_or_insert_with(|| vec![0.0; len]))
    }
}
