//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Graphs are recorded once with a [`GraphBuilder`], which infers and checks
//! shapes eagerly, and are then evaluated against named [`Bindings`]. The op
//! set is deliberately small: convolution, matmul, pooling, bilinear
//! resampling, softmax, and the elementwise/reduction ops the losses need.

mod graph;
mod kernels;
mod tensor;

pub use graph::{Bindings, EvalStats, Evaluation, Graph, GraphBuilder, NodeId, Region};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("node {node} ({op}): shape mismatch: {detail}")]
    Shape {
        node: usize,
        op: &'static str,
        detail: String,
    },
    #[error("node {node} ({op}): non-finite value")]
    NonFinite { node: usize, op: &'static str },
    #[error("node {node} ({op}): {detail}")]
    Domain {
        node: usize,
        op: &'static str,
        detail: String,
    },
    #[error("leaf `{0}` is not bound")]
    Unbound(String),
    #[error("leaf `{name}` bound with shape {got:?}, declared {want:?}")]
    BindingShape {
        name: String,
        got: Vec<usize>,
        want: Vec<usize>,
    },
    #[error("duplicate leaf `{0}`")]
    DuplicateLeaf(String),
    #[error("backward needs a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("finite-difference step must lie in (0, 1e-2], got {0}")]
    BadStep(f64),
}

/// Coordinates probed per leaf by [`grad_check`].
const GRAD_CHECK_SAMPLES: usize = 24;

/// Largest relative disagreement between the analytic gradient and central
/// finite differences, `|a − n| / max(1, |a|, |n|)`, over a deterministic
/// sample of coordinates of every leaf.
pub fn grad_check(graph: &Graph, bindings: &Bindings, eps: f64) -> Result<f64, GraphError> {
    let leaves: Vec<String> = graph.leaves().into_iter().map(|(n, _)| n).collect();
    grad_check_leaves(graph, bindings, eps, &leaves, GRAD_CHECK_SAMPLES)
}

/// [`grad_check`] restricted to `leaves`, probing up to `samples`
/// evenly strided coordinates of each.
pub fn grad_check_leaves(
    graph: &Graph,
    bindings: &Bindings,
    eps: f64,
    leaves: &[String],
    samples: usize,
) -> Result<f64, GraphError> {
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(GraphError::BadStep(eps));
    }
    let (_, grads) = graph.backward(bindings)?;
    let mut probe = bindings.clone();
    let mut worst = 0.0f64;
    for name in leaves {
        let analytic = &grads[name];
        let n = analytic.len();
        let stride = (n / samples.max(1)).max(1);
        // odd offset so strided probes don't all land on the same channel
        let coords = (0..n).step_by(stride).map(|i| (i + stride / 2) % n).take(samples);
        for i in coords {
            let base = bindings[name].data()[i];
            probe.get_mut(name).expect("bound leaf").data_mut()[i] = base + eps;
            let up = graph.evaluate(&probe)?.output().item();
            probe.get_mut(name).expect("bound leaf").data_mut()[i] = base - eps;
            let down = graph.evaluate(&probe)?.output().item();
            probe.get_mut(name).expect("bound leaf").data_mut()[i] = base;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
