//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is an append-only arena of nodes. Every operation on a [`Var`]
//! evaluates eagerly and records what is needed to propagate gradients back
//! to its parents. Node ids are assigned in creation order, which is a
//! topological order, so [`Graph::backward`] is a single reverse sweep.

mod ops;
mod tensor;

use std::cell::{Ref, RefCell};
use std::fmt;

use thiserror::Error;

pub use ops::{block_attention_forward, layer_norm_forward, matmul_forward, softmax_forward};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{op}: axis {axis} is empty or out of range for shape {shape:?}")]
    SingularAxis { op: &'static str, axis: usize, shape: Vec<usize> },
    #[error("shape {shape:?} does not match data length {len}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("rows have different lengths")]
    RaggedRows,
    #[error("backward needs a single-element output, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

/// Local gradient rule for an operation defined outside this module.
pub trait Backward {
    /// Given the parent values, the node output and the gradient of the loss
    /// with respect to that output, return one gradient per parent (`None`
    /// for parents that receive no gradient).
    fn backward(&self, parents: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>>;

    /// Distance of the current inputs from the nearest point where the
    /// operation is not differentiable.
    fn kink_margin(&self, _parents: &[&Tensor]) -> f64 {
        f64::INFINITY
    }
}

pub(crate) enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    DivOrZero(usize, usize),
    AddScalar(usize),
    MulScalar(usize, f64),
    MatMul(usize, usize),
    Transpose(usize),
    Concat { parts: Vec<usize>, axis: usize },
    Reshape(usize),
    Slice { src: usize, axis: usize, start: usize },
    BroadcastTo(usize),
    Relu(usize),
    Abs(usize),
    Softmax { src: usize, axis: usize },
    LayerNorm { src: usize, axis: usize, inv_std: Vec<f64> },
    Sum(usize),
    Mean(usize),
    BlockAttention { q: usize, k: usize, v: usize, block: usize, probs: Vec<f64> },
    Custom { parents: Vec<usize>, rule: Box<dyn Backward> },
}

impl Op {
    fn parents(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | DivOrZero(a, b) | MatMul(a, b) => {
                vec![*a, *b]
            }
            AddScalar(a) | MulScalar(a, _) | Transpose(a) | Reshape(a) | BroadcastTo(a)
            | Relu(a) | Abs(a) | Sum(a) | Mean(a) => vec![*a],
            Slice { src, .. } | Softmax { src, .. } | LayerNorm { src, .. } => vec![*src],
            Concat { parts, .. } => parts.clone(),
            BlockAttention { q, k, v, .. } => vec![*q, *k, *v],
            Custom { parents, .. } => parents.clone(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording arena for one forward/backward pass.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph").field("nodes", &self.len()).finish()
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.shape()).finish()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = op.parents().iter().any(|&p| nodes[p].requires_grad);
        nodes.push(Node { value, op, requires_grad });
        Var { graph: self, id: nodes.len() - 1 }
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var { graph: self, id: nodes.len() - 1 }
    }

    /// A trainable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var { graph: self, id: nodes.len() - 1 }
    }

    /// Records a node whose value was computed by the caller and whose local
    /// gradients are given by `rule`.
    pub fn custom<'g>(&'g self, parents: &[Var<'g>], value: Tensor, rule: Box<dyn Backward>) -> Var<'g> {
        let parents = parents.iter().map(|p| p.id).collect();
        self.push(value, Op::Custom { parents, rule })
    }

    /// Smallest distance of any recorded non-smooth operation (ReLU, abs,
    /// custom rules) from its kink. Finite-difference checks are only
    /// meaningful when this exceeds the step size.
    pub fn kink_margin(&self) -> f64 {
        let nodes = self.nodes.borrow();
        let mut margin = f64::INFINITY;
        for node in nodes.iter().filter(|n| n.requires_grad) {
            let m = match &node.op {
                Op::Relu(a) | Op::Abs(a) => {
                    nodes[*a].value.data().iter().fold(f64::INFINITY, |m, x| m.min(x.abs()))
                }
                Op::Custom { parents, rule } => {
                    let vals: Vec<&Tensor> = parents.iter().map(|&p| &nodes[p].value).collect();
                    rule.kink_margin(&vals)
                }
                _ => f64::INFINITY,
            };
            margin = margin.min(m);
        }
        margin
    }

    /// Reverse sweep from a single-element `loss`, seeded with 1.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let seed_shape = nodes[loss.id].value.shape().to_vec();
        if nodes[loss.id].value.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(seed_shape));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::full(&seed_shape, 1.0));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(grad) = grads[id].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(grad);
                continue;
            }
            let parent_ids = node.op.parents();
            let parent_vals: Vec<&Tensor> = parent_ids.iter().map(|&p| &nodes[p].value).collect();
            let local = ops::backward(&node.op, &parent_vals, &node.value, &grad);
            for (&p, g) in parent_ids.iter().zip(local) {
                let Some(g) = g else { continue };
                if !nodes[p].requires_grad {
                    continue;
                }
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients of one backward pass. Only leaves keep their gradient;
/// intermediate buffers are released during the sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros of `shape` when the loss does not depend
    /// on it.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Tensor {
        match self.get(var) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&var.shape()),
        }
    }
}

// arithmetic is fallible (shape checks), so these are methods rather than operator impls
#[allow(clippy::should_implement_trait)]
impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Ref<'g, Tensor> {
        Ref::map(self.graph.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    fn unary(self, f: impl FnOnce(&Tensor) -> Result<(Tensor, Op)>) -> Result<Var<'g>> {
        let (value, op) = {
            let v = self.value();
            f(&v)?
        };
        Ok(self.graph.push(value, op))
    }

    fn binary(
        self,
        other: Var<'g>,
        f: impl FnOnce(&Tensor, &Tensor) -> Result<Tensor>,
        op: Op,
    ) -> Result<Var<'g>> {
        let value = {
            let nodes = self.graph.nodes.borrow();
            f(&nodes[self.id].value, &nodes[other.id].value)?
        };
        Ok(self.graph.push(value, op))
    }

    pub fn add(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, |a, b| ops::broadcast_apply("add", a, b, |x, y| x + y), Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, |a, b| ops::broadcast_apply("sub", a, b, |x, y| x - y), Op::Sub(self.id, other.id))
    }

    pub fn mul(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, |a, b| ops::broadcast_apply("mul", a, b, |x, y| x * y), Op::Mul(self.id, other.id))
    }

    pub fn div(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, |a, b| ops::broadcast_apply("div", a, b, |x, y| x / y), Op::Div(self.id, other.id))
    }

    /// Division where a zero denominator yields 0 (with zero gradient).
    pub fn div_or_zero(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(
            other,
            |a, b| ops::broadcast_apply("div_or_zero", a, b, |x, y| if y == 0.0 { 0.0 } else { x / y }),
            Op::DivOrZero(self.id, other.id),
        )
    }

    pub fn add_scalar(self, c: f64) -> Result<Var<'g>> {
        self.unary(|a| Ok((a.map(|x| x + c), Op::AddScalar(self.id))))
    }

    pub fn mul_scalar(self, c: f64) -> Result<Var<'g>> {
        self.unary(|a| Ok((a.map(|x| x * c), Op::MulScalar(self.id, c))))
    }

    pub fn neg(self) -> Result<Var<'g>> {
        self.mul_scalar(-1.0)
    }

    pub fn square(self) -> Result<Var<'g>> {
        self.mul(self)
    }

    pub fn matmul(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, ops::matmul_forward, Op::MatMul(self.id, other.id))
    }

    pub fn transpose(self) -> Result<Var<'g>> {
        self.unary(|a| Ok((ops::transpose_forward(a)?, Op::Transpose(self.id))))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g>> {
        self.unary(|a| Ok((a.clone().reshaped(shape)?, Op::Reshape(self.id))))
    }

    /// Contiguous sub-range `start .. start + len` along `axis`.
    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'g>> {
        self.unary(|a| Ok((ops::slice_forward(a, axis, start, len)?, Op::Slice { src: self.id, axis, start })))
    }

    pub fn broadcast_to(self, shape: &[usize]) -> Result<Var<'g>> {
        self.unary(|a| Ok((ops::broadcast_to_forward(a, shape)?, Op::BroadcastTo(self.id))))
    }

    pub fn relu(self) -> Result<Var<'g>> {
        self.unary(|a| Ok((a.map(|x| x.max(0.0)), Op::Relu(self.id))))
    }

    pub fn abs(self) -> Result<Var<'g>> {
        self.unary(|a| Ok((a.map(f64::abs), Op::Abs(self.id))))
    }

    pub fn softmax(self, axis: usize) -> Result<Var<'g>> {
        self.unary(|a| Ok((ops::softmax_forward(a, axis)?, Op::Softmax { src: self.id, axis })))
    }

    /// Normalizes to zero mean and unit variance along `axis` (no affine).
    pub fn layer_norm(self, axis: usize, eps: f64) -> Result<Var<'g>> {
        self.unary(|a| {
            let (out, inv_std) = ops::layer_norm_forward(a, axis, eps)?;
            Ok((out, Op::LayerNorm { src: self.id, axis, inv_std }))
        })
    }

    pub fn sum(self) -> Result<Var<'g>> {
        self.unary(|a| Ok((Tensor::scalar(a.data().iter().sum()), Op::Sum(self.id))))
    }

    pub fn mean(self) -> Result<Var<'g>> {
        self.unary(|a| {
            if a.is_empty() {
                return Err(AutodiffError::SingularAxis { op: "mean", axis: 0, shape: a.shape().to_vec() });
            }
            Ok((Tensor::scalar(a.data().iter().sum::<f64>() / a.len() as f64), Op::Mean(self.id)))
        })
    }

    /// Concatenation of `parts` along `axis`.
    pub fn concat(parts: &[Var<'g>], axis: usize) -> Result<Var<'g>> {
        let graph = parts.first().expect("concat needs at least one part").graph;
        let value = {
            let nodes = graph.nodes.borrow();
            let vals: Vec<&Tensor> = parts.iter().map(|p| &nodes[p.id].value).collect();
            ops::concat_forward(&vals, axis)?
        };
        Ok(graph.push(value, Op::Concat { parts: parts.iter().map(|p| p.id).collect(), axis }))
    }

    /// Scaled dot-product attention applied independently to consecutive
    /// groups of `block` rows: for every group,
    /// `softmax(q kᵀ / sqrt(d_k)) v`.
    pub fn block_attention(q: Var<'g>, k: Var<'g>, v: Var<'g>, block: usize) -> Result<Var<'g>> {
        let graph = q.graph;
        let (value, probs) = {
            let nodes = graph.nodes.borrow();
            block_attention_forward(&nodes[q.id].value, &nodes[k.id].value, &nodes[v.id].value, block)?
        };
        Ok(graph.push(value, Op::BlockAttention { q: q.id, k: k.id, v: v.id, block, probs }))
    }
}
