//! Dense `f64` tensors with reverse-mode differentiation and optimizers.
//!
//! Every learned component of the cascade, including the transducer lattice
//! recursion, is expressed with the ops on [`Graph`]; gradients always come
//! from the same generic backward sweep.

mod gemm;
pub mod graph;
pub mod nn;
pub mod optim;
pub mod params;
pub mod tensor;


pub use graph::{AttnSegment, Axis, Gradients, Graph, NodeId};
pub use optim::{clip_grad_norm, Optimizer, OptimizerConfig, OptimizerKind};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;

/// Numerically stable `log Σ exp` of a slice, outside any graph.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Log-softmax of a slice, outside any graph.
pub fn log_softmax(xs: &[f64]) -> Vec<f64> {
    let lse = logsumexp(xs);
    xs.iter().map(|v| v - lse).collect()
}
