use std::sync::atomic::{AtomicU64, Ordering};

use super::{ops, Real, Scalar, Tensor};
use crate::error::{Error, Result};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a tensor recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    pub(crate) index: usize,
}

/// Primitive that produced a node, with the tape indices of its inputs.
#[derive(Debug)]
pub(crate) enum Op<S> {
    Leaf,
    Conv1d { input: usize, kernel: usize, stride: usize },
    Conv3d { input: usize, kernel: usize, stride: [usize; 3] },
    MaxPool { input: usize, argmax: Vec<usize> },
    Dense { input: usize, weights: usize, bias: usize },
    AddBias { input: usize, bias: usize, inner: usize },
    Relu { input: usize },
    LogSoftmax { input: usize },
    Mean { input: usize },
    Std { input: usize, mean: S },
    L2Sq { a: usize, b: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { input: usize, factor: S },
    Offset { input: usize },
    Square { input: usize },
    Abs { input: usize },
    Exp { input: usize },
    Sum { input: usize },
    Pick { input: usize, index: usize },
    Reshape { input: usize },
    AddN { inputs: Vec<usize> },
}

#[derive(Debug)]
pub(crate) struct Node<S> {
    pub(crate) value: Tensor<S>,
    pub(crate) op: Op<S>,
}

/// Gradient tape. Primitives append nodes in execution order; `backward`
/// walks them in reverse.
#[derive(Debug)]
pub struct Graph<S: Scalar = Real> {
    id: u64,
    pub(crate) nodes: Vec<Node<S>>,
    backward_done: bool,
    kink_margin: Option<S>,
    near_kink: bool,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            backward_done: false,
            kink_margin: None,
            near_kink: false,
        }
    }

    /// Records a leaf, keeping the tensor's own `requires_grad` flag.
    pub fn leaf(&mut self, tensor: Tensor<S>) -> Var {
        let mut tensor = tensor;
        tensor.clear_grad();
        self.push_node(tensor, Op::Leaf)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, tensor: Tensor<S>) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    /// Records a non-trainable leaf.
    pub fn constant(&mut self, tensor: Tensor<S>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn value(&self, var: Var) -> &Tensor<S> {
        assert_eq!(var.graph, self.id, "tensor handle belongs to a different graph");
        &self.nodes[var.index].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.value(var).shape()
    }

    pub fn item(&self, var: Var) -> S {
        self.value(var).item()
    }

    pub fn grad(&self, var: Var) -> Option<&[S]> {
        self.value(var).grad()
    }

    /// Number of recorded primitives, leaves included.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// When set, nonsmooth primitives (relu, abs, maxpool, std) flag any
    /// trainable input that lies within `margin` of a kink.
    pub fn set_kink_margin(&mut self, margin: Option<S>) {
        self.kink_margin = margin;
    }

    pub fn near_kink(&self) -> bool {
        self.near_kink
    }

    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.check(loss)?;
        let value = &self.nodes[loss.index].value;
        if !value.is_scalar() {
            return Err(Error::NonScalarLoss(value.shape().to_vec()));
        }
        if !value.requires_grad() {
            return Err(Error::Detached);
        }
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        self.nodes[loss.index].value.grad = Some(vec![S::one()]);
        for i in (0..=loss.index).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            if !node.value.requires_grad {
                continue;
            }
            let Some(grad_out) = node.value.grad.as_deref() else {
                continue;
            };
            ops::backward_node(&node.op, &node.value, grad_out, before);
        }
        self.backward_done = true;
        Ok(())
    }

    /// Clears all gradients so `backward` may run again.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.value.clear_grad();
        }
        self.backward_done = false;
    }

    pub(crate) fn check(&self, var: Var) -> Result<()> {
        if var.graph != self.id || var.index >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(())
    }

    pub(crate) fn node(&self, var: Var) -> Result<&Tensor<S>> {
        self.check(var)?;
        Ok(&self.nodes[var.index].value)
    }

    pub(crate) fn push(&mut self, value: Tensor<S>, op: Op<S>, inputs: &[usize]) -> Var {
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].value.requires_grad);
        self.push_node(value.with_requires_grad(requires_grad), op)
    }

    fn push_node(&mut self, value: Tensor<S>, op: Op<S>) -> Var {
        self.nodes.push(Node { value, op });
        Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        }
    }

    pub(crate) fn kink_margin_for(&self, input: usize) -> Option<S> {
        if self.nodes[input].value.requires_grad {
            self.kink_margin
        } else {
            None
        }
    }

    pub(crate) fn flag_kink(&mut self) {
        self.near_kink = true;
    }
}
