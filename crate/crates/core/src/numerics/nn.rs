//! Parameterized building blocks assembled from graph ops.

use std::ops::Range;

use rand::Rng;

use super::graph::{AttnSegment, Graph, NodeId};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, rng: &mut impl Rng) -> Result<Self> {
        let std = (1.0 / inputs as f64).sqrt();
        Ok(Self {
            w: store.add_normal(format!("{name}.w"), &[inputs, outputs], std, rng)?,
            b: store.add_constant(format!("{name}.b"), &[outputs], 0.0)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.affine(x, w, b)
    }

    pub fn inputs(&self, store: &ParamStore) -> usize {
        store.get(self.w).rows()
    }

    pub fn outputs(&self, store: &ParamStore) -> usize {
        store.get(self.w).cols()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add_constant(format!("{name}.gamma"), &[dim], 1.0)?,
            beta: store.add_constant(format!("{name}.beta"), &[dim], 0.0)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Embedding {
    pub table: ParamId,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, name: &str, vocab: usize, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            table: store.add_normal(format!("{name}.table"), &[vocab, dim], 0.5, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, ids: &[usize]) -> Result<NodeId> {
        let t = g.param(store, self.table);
        g.embed(t, ids)
    }
}

/// Sinusoidal position table for positions `offset..offset+len`.
pub fn sinusoidal_positions(len: usize, dim: usize, offset: usize) -> Tensor {
    let mut data = vec![0.0; len * dim];
    for p in 0..len {
        let pos = (p + offset) as f64;
        for i in 0..dim / 2 {
            let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            data[p * dim + 2 * i] = (pos * freq).sin();
            data[p * dim + 2 * i + 1] = (pos * freq).cos();
        }
    }
    Tensor::new(vec![len, dim], data).expect("consistent shape")
}

/// Positions restarting at zero inside every span.
pub fn segment_positions(spans: &[Range<usize>], dim: usize) -> Tensor {
    let rows: usize = spans.iter().map(|s| s.len()).sum();
    let mut data = Vec::with_capacity(rows * dim);
    for s in spans {
        data.extend_from_slice(sinusoidal_positions(s.len(), dim, 0).data());
    }
    Tensor::new(vec![rows, dim], data).expect("consistent shape")
}

/// Pre-norm multi-head attention with residual. Keys/values may come from a
/// different sequence (cross-attention).
#[derive(Debug, Clone, Copy)]
pub struct AttentionBlock {
    pub norm: LayerNorm,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl AttentionBlock {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(store, &format!("{name}.norm"), dim)?,
            query: Linear::new(store, &format!("{name}.query"), dim, dim, rng)?,
            key: Linear::new(store, &format!("{name}.key"), dim, dim, rng)?,
            value: Linear::new(store, &format!("{name}.value"), dim, dim, rng)?,
            out: Linear::new(store, &format!("{name}.out"), dim, dim, rng)?,
            heads,
        })
    }

    /// `x + Attn(LN(x))` over block-diagonal self-attention segments.
    pub fn self_attend(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: NodeId,
        spans: &[Range<usize>],
        causal: bool,
    ) -> Result<NodeId> {
        let h = self.norm.forward(g, store, x)?;
        let q = self.query.forward(g, store, h)?;
        let k = self.key.forward(g, store, h)?;
        let v = self.value.forward(g, store, h)?;
        let segments = spans.iter().cloned().map(AttnSegment::square).collect();
        let a = g.attention(q, k, v, self.heads, segments, causal)?;
        let o = self.out.forward(g, store, a)?;
        g.add(x, o)
    }

    /// Projects a memory sequence into keys and values for later cross-attention.
    pub fn project_memory(&self, g: &mut Graph, store: &ParamStore, memory: NodeId) -> Result<(NodeId, NodeId)> {
        Ok((
            self.key.forward(g, store, memory)?,
            self.value.forward(g, store, memory)?,
        ))
    }

    /// `x + Attn(LN(x), keys, values)` with precomputed keys/values.
    pub fn cross_attend(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: NodeId,
        keys: NodeId,
        values: NodeId,
        segments: Vec<AttnSegment>,
    ) -> Result<NodeId> {
        let h = self.norm.forward(g, store, x)?;
        let q = self.query.forward(g, store, h)?;
        let a = g.attention(q, keys, values, self.heads, segments, false)?;
        let o = self.out.forward(g, store, a)?;
        g.add(x, o)
    }
}

/// Pre-norm position-wise feed-forward block with residual.
#[derive(Debug, Clone, Copy)]
pub struct FeedForward {
    pub norm: LayerNorm,
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, inner: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(store, &format!("{name}.norm"), dim)?,
            up: Linear::new(store, &format!("{name}.up"), dim, inner, rng)?,
            down: Linear::new(store, &format!("{name}.down"), inner, dim, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let h = self.norm.forward(g, store, x)?;
        let h = self.up.forward(g, store, h)?;
        let h = g.gelu(h);
        let h = self.down.forward(g, store, h)?;
        g.add(x, h)
    }
}

/// Conformer-style convolution module: LN, depthwise conv, GELU, pointwise projection, residual.
#[derive(Debug, Clone, Copy)]
pub struct ConvModule {
    pub norm: LayerNorm,
    pub depthwise_w: ParamId,
    pub depthwise_b: ParamId,
    pub pointwise: Linear,
}

impl ConvModule {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, kernel: usize, rng: &mut impl Rng) -> Result<Self> {
        let std = (1.0 / kernel as f64).sqrt();
        Ok(Self {
            norm: LayerNorm::new(store, &format!("{name}.norm"), dim)?,
            depthwise_w: store.add_normal(format!("{name}.depthwise.w"), &[kernel, dim], std, rng)?,
            depthwise_b: store.add_constant(format!("{name}.depthwise.b"), &[dim], 0.0)?,
            pointwise: Linear::new(store, &format!("{name}.pointwise"), dim, dim, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId, spans: &[Range<usize>]) -> Result<NodeId> {
        let h = self.norm.forward(g, store, x)?;
        let w = g.param(store, self.depthwise_w);
        let b = g.param(store, self.depthwise_b);
        let h = g.depthwise_conv(h, w, b, spans.to_vec())?;
        let h = g.gelu(h);
        let h = self.pointwise.forward(g, store, h)?;
        g.add(x, h)
    }
}
