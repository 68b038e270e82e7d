use num_traits::Float;

use super::same_shape;
use crate::error::{Result, TensorError};
use crate::tape::{Op, Tape, Var};
use crate::{Scalar, Tensor};

fn zip_with<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, f: impl Fn(S, S) -> S) -> Tensor<S> {
    Tensor::from_parts(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

pub(crate) fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

impl<S: Scalar> Tape<S> {
    fn binary(&self, name: &'static str, a: Var, b: Var, f: impl Fn(S, S) -> S, op: Op<S>) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
            same_shape(name, x, y)?;
            zip_with(x, y, f)
        };
        self.push(name, out, op)
    }

    fn unary(&self, name: &'static str, x: Var, f: impl Fn(S) -> S, op: Op<S>) -> Result<Var> {
        let out = self.nodes.borrow()[x.0].value.map(f);
        self.push(name, out, op)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `a ⊙ b + c`, each element rounded once (fused multiply-add).
    pub fn mul_add(&self, a: Var, b: Var, c: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let (x, y, z) = (&nodes[a.0].value, &nodes[b.0].value, &nodes[c.0].value);
            same_shape("mul_add", x, y)?;
            same_shape("mul_add", x, z)?;
            Tensor::from_parts(
                x.shape().to_vec(),
                x.data()
                    .iter()
                    .zip(y.data())
                    .zip(z.data())
                    .map(|((&p, &q), &r)| Float::mul_add(p, q, r))
                    .collect(),
            )
        };
        self.push("mul_add", out, Op::MulAdd(a, b, c))
    }

    pub fn scale(&self, x: Var, c: S) -> Result<Var> {
        self.unary("scale", x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&self, x: Var, c: S) -> Result<Var> {
        self.unary("add_scalar", x, |v| v + c, Op::Offset(x))
    }

    /// Adds `b` (shape `[n]`) to every length-`n` row of `x` (shape `[..., n]`).
    pub fn add_bias(&self, x: Var, b: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let (xv, bv) = (&nodes[x.0].value, &nodes[b.0].value);
            let n = *xv.shape().last().unwrap_or(&1);
            if bv.rank() != 1 || bv.numel() != n || xv.rank() == 0 {
                return Err(TensorError::Shape {
                    op: "add_bias",
                    lhs: xv.shape().to_vec(),
                    rhs: bv.shape().to_vec(),
                });
            }
            let bias = bv.data();
            Tensor::from_parts(
                xv.shape().to_vec(),
                xv.data()
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| v + bias[i % n])
                    .collect(),
            )
        };
        self.push("add_bias", out, Op::AddBias(x, b))
    }

    pub fn relu(&self, x: Var) -> Result<Var> {
        self.unary("relu", x, |v| v.max(S::zero()), Op::Relu(x))
    }

    pub fn sigmoid(&self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&self, x: Var) -> Result<Var> {
        self.unary("tanh", x, |v| v.tanh(), Op::Tanh(x))
    }

    pub fn exp(&self, x: Var) -> Result<Var> {
        self.unary("exp", x, |v| v.exp(), Op::Exp(x))
    }

    /// `x * sigmoid(x)`.
    pub fn swish(&self, x: Var) -> Result<Var> {
        let s = self.sigmoid(x)?;
        self.mul(x, s)
    }

    /// Keeps entries `>= tau` and zeroes the rest.
    pub fn threshold(&self, x: Var, tau: S) -> Result<Var> {
        self.unary(
            "threshold",
            x,
            |v| if v >= tau { v } else { S::zero() },
            Op::Threshold(x, tau),
        )
    }
}
