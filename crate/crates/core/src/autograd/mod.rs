//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as a node holding its output value and
//! whatever the backward rule needs. Nodes are appended in evaluation order, so
//! the node index is a topological order and [`Graph::backward`] is a single
//! reverse sweep. A graph lives for one forward/backward pass on one thread.

mod backward;
pub mod check;
mod ops;
#[cfg(test)]
mod tests;

use std::sync::Arc;

use crate::tensor::kernels::{AttentionGeom, ConvGeom};
use crate::tensor::{Scalar, Tensor};

pub use backward::Gradients;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) struct Node<T: Scalar> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) needs_grad: bool,
}

pub(crate) enum Op<T: Scalar> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Reshape(Var),
    Conv3d {
        x: Var,
        w: Var,
        geom: ConvGeom,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
        rows: usize,
        din: usize,
        dout: usize,
    },
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        rstd: Vec<T>,
    },
    GroupNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        mean: Vec<T>,
        rstd: Vec<T>,
    },
    Silu(Var),
    Relu(Var),
    Sigmoid(Var),
    Upsample {
        x: Var,
        scale: usize,
    },
    AvgPool(Var),
    Gather {
        x: Var,
        index: Arc<[usize]>,
    },
    Concat {
        a: Var,
        b: Var,
    },
    ScaleChannels {
        x: Var,
        s: Var,
    },
    ScaleSamples {
        x: Var,
        factors: Vec<T>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        bias: Option<(Var, Arc<[usize]>)>,
        geom: AttentionGeom,
        scale: T,
        probs: Vec<T>,
    },
    Dice {
        logits: Var,
        labels: Arc<[u8]>,
        eps: T,
        probs: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        labels: Arc<[u8]>,
        probs: Vec<T>,
    },
}

/// Sentinel in gather indices: the output element is zero (used for padding).
pub const GATHER_ZERO: usize = usize::MAX;

/// Recording tape of tensor operations.
pub struct Graph<T: Scalar = f32> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// Every node handle in creation order.
    pub fn vars(&self) -> impl DoubleEndedIterator<Item = Var> {
        (0..self.nodes.len()).map(Var)
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is reported by [`Graph::backward`].
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Attention weights `[windows, heads, tq, tk]` saved by a windowed attention node.
    pub fn attention_probs(&self, v: Var) -> Option<(&AttentionGeom, &[T])> {
        match &self.nodes[v.0].op {
            Op::Attention { geom, probs, .. } => Some((geom, probs)),
            _ => None,
        }
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }
}
