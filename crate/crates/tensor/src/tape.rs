//! Reverse-mode differentiation over a linear record of forward ops.
//!
//! Every forward op appends one node holding its output value and whatever
//! it needs for its vector-Jacobian product. [`Tape::backward`] walks the
//! record once in reverse. Nodes that cannot reach a gradient-carrying leaf
//! are skipped entirely.

use std::cell::{Ref, RefCell};

use crate::error::{Result, TensorError};
use crate::{Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for an op defined outside this crate.
pub trait CustomBackward<S: Scalar> {
    fn name(&self) -> &'static str;

    /// Gradient for each input, in the order the inputs were recorded.
    /// `None` means the input receives no gradient from this op.
    fn backward(&self, inputs: &[&Tensor<S>], output: &Tensor<S>, grad: &[S]) -> Vec<Option<Vec<S>>>;
}

pub(crate) enum Op<S: Scalar> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulAdd(Var, Var, Var),
    Scale(Var, S),
    Offset(Var),
    AddBias(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Threshold(Var, S),
    Matmul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Bmm {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Gather {
        x: Var,
        src: Vec<usize>,
    },
    Reshape(Var),
    Narrow {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
        start: usize,
        take: usize,
    },
    Concat {
        parts: Vec<(Var, usize)>,
        outer: usize,
        inner: usize,
        total: usize,
    },
    GatherRows {
        x: Var,
        rows: Vec<usize>,
        width: usize,
    },
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    LogSoftmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    SumAll(Var),
    MeanAll(Var),
    SumAxis {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    L1Normalize {
        x: Var,
        cols: usize,
    },
    Conv1d {
        x: Var,
        k: Var,
        geom: crate::ops::Conv1dGeom,
    },
    DepthwiseConv1d {
        x: Var,
        k: Var,
        geom: crate::ops::Conv1dGeom,
    },
    Conv2d {
        x: Var,
        k: Var,
        bias: Option<Var>,
        geom: crate::ops::Conv2dGeom,
    },
    Norm {
        x: Var,
        gamma: Var,
        beta: Var,
        saved: crate::ops::NormSaved<S>,
    },
    RegionPool {
        x: Var,
        geom: crate::ops::RegionGeom,
    },
    BlockAverage {
        x: Var,
        rows: usize,
        cols: usize,
        block: usize,
    },
    Custom {
        inputs: Vec<Var>,
        rule: Box<dyn CustomBackward<S>>,
    },
}

impl<S: Scalar> Op<S> {
    pub(crate) fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => Vec::new(),
            Add(a, b) | Sub(a, b) | Mul(a, b) | AddBias(a, b) => vec![*a, *b],
            MulAdd(a, b, c) => vec![*a, *b, *c],
            Scale(x, _) | Offset(x) | Relu(x) | Sigmoid(x) | Tanh(x) | Exp(x) | Threshold(x, _) | Reshape(x) => {
                vec![*x]
            }
            SumAll(x) | MeanAll(x) => vec![*x],
            Matmul { a, b, .. } | Bmm { a, b, .. } => vec![*a, *b],
            Gather { x, .. }
            | Narrow { x, .. }
            | GatherRows { x, .. }
            | Softmax { x, .. }
            | LogSoftmax { x, .. }
            | SumAxis { x, .. }
            | L1Normalize { x, .. }
            | RegionPool { x, .. }
            | BlockAverage { x, .. } => vec![*x],
            Concat { parts, .. } => parts.iter().map(|(v, _)| *v).collect(),
            Conv1d { x, k, .. } | DepthwiseConv1d { x, k, .. } => vec![*x, *k],
            Conv2d { x, k, bias, .. } => {
                let mut v = vec![*x, *k];
                v.extend(bias.iter().copied());
                v
            }
            Norm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Custom { inputs, .. } => inputs.clone(),
        }
    }
}

pub(crate) struct Node<S: Scalar> {
    pub(crate) value: Tensor<S>,
    pub(crate) op: Op<S>,
    pub(crate) needs_grad: bool,
}

/// Ordered record of forward ops for one differentiation pass.
pub struct Tape<S: Scalar> {
    pub(crate) nodes: RefCell<Vec<Node<S>>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::with_capacity(256)),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records an input; it receives a gradient iff `t.requires_grad()`.
    pub fn leaf(&self, t: Tensor<S>) -> Result<Var> {
        if !t.is_finite() {
            return Err(TensorError::NonFinite { op: "leaf" });
        }
        let needs_grad = t.requires_grad();
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad,
        });
        Ok(Var(nodes.len() - 1))
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&self, mut t: Tensor<S>) -> Result<Var> {
        t.set_requires_grad(false);
        self.leaf(t)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor<S>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn tensor(&self, v: Var) -> Tensor<S> {
        let mut t = self.nodes.borrow()[v.0].value.clone();
        t.set_requires_grad(false);
        t
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> Result<S> {
        self.nodes.borrow()[v.0].value.item()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].needs_grad
    }

    pub(crate) fn push(&self, op_name: &'static str, value: Tensor<S>, op: Op<S>) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let mut nodes = self.nodes.borrow_mut();
        let needs_grad = op.inputs().iter().any(|v| nodes[v.0].needs_grad);
        nodes.push(Node { value, op, needs_grad });
        Ok(Var(nodes.len() - 1))
    }

    /// Records a value produced by caller code together with its backward rule.
    pub fn custom(&self, inputs: &[Var], output: Tensor<S>, rule: Box<dyn CustomBackward<S>>) -> Result<Var> {
        let name = rule.name();
        self.push(
            name,
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                rule,
            },
        )
    }

    /// Reverse accumulation from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(TensorError::NotScalar(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<S>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        let mut leaves: Vec<Option<Vec<S>>> = Vec::new();
        leaves.resize_with(loss.0 + 1, || None);
        if root.needs_grad {
            grads[loss.0] = Some(vec![S::one()]);
        }
        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Op::Leaf = node.op {
                leaves[i] = Some(g);
                continue;
            }
            crate::backward::propagate(&nodes, i, &g, &mut grads);
        }
        let shapes = nodes[..=loss.0].iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { leaves, shapes })
    }
}

/// Gradients of a loss with respect to each gradient-carrying leaf.
#[derive(Debug)]
pub struct Gradients<S> {
    leaves: Vec<Option<Vec<S>>>,
    shapes: Vec<Vec<usize>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient for `v`; zeros when the loss does not depend on it,
    /// `None` when `v` was recorded after the loss.
    pub fn get(&self, v: Var) -> Option<Tensor<S>> {
        let shape = self.shapes.get(v.0)?;
        match self.leaves.get(v.0)? {
            Some(g) => Some(Tensor::from_parts(shape.clone(), g.clone())),
            None => Some(Tensor::zeros(shape)),
        }
    }

    pub(crate) fn take_raw(&mut self, v: Var) -> Option<Vec<S>> {
        self.leaves.get_mut(v.0).and_then(Option::take)
    }
}
