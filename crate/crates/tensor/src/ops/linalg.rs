use crate::error::{Result, TensorError};
use crate::kernels;
use crate::tape::{Op, Tape, Var};
use crate::{Scalar, Tensor};

impl<S: Scalar> Tape<S> {
    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (out, m, k, n) = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
            let (m, k, n) = kernels::matmul_dims(x.shape(), y.shape())?;
            let mut out = vec![S::zero(); m * n];
            kernels::matmul_into(x.data(), y.data(), &mut out, m, k, n);
            (Tensor::from_parts(vec![m, n], out), m, k, n)
        };
        self.push("matmul", out, Op::Matmul { a, b, m, k, n })
    }

    /// Batched product `[B,m,k] x [B,k,n] -> [B,m,n]`.
    pub fn bmm(&self, a: Var, b: Var) -> Result<Var> {
        let (out, batch, m, k, n) = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
            let (xs, ys) = (x.shape(), y.shape());
            if xs.len() != 3 || ys.len() != 3 || xs[0] != ys[0] || xs[2] != ys[1] {
                return Err(TensorError::Shape {
                    op: "bmm",
                    lhs: xs.to_vec(),
                    rhs: ys.to_vec(),
                });
            }
            let (batch, m, k, n) = (xs[0], xs[1], xs[2], ys[2]);
            let mut out = vec![S::zero(); batch * m * n];
            for bi in 0..batch {
                kernels::matmul_into(
                    &x.data()[bi * m * k..(bi + 1) * m * k],
                    &y.data()[bi * k * n..(bi + 1) * k * n],
                    &mut out[bi * m * n..(bi + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
            (Tensor::from_parts(vec![batch, m, n], out), batch, m, k, n)
        };
        self.push("bmm", out, Op::Bmm { a, b, batch, m, k, n })
    }

    /// Output element `i` is input element `src[i]`; backward scatters.
    pub(crate) fn gather_flat(&self, name: &'static str, x: Var, shape: Vec<usize>, src: Vec<usize>) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let data = nodes[x.0].value.data();
            Tensor::from_parts(shape, src.iter().map(|&s| data[s]).collect())
        };
        self.push(name, out, Op::Gather { x, src })
    }

    pub fn transpose(&self, x: Var) -> Result<Var> {
        let shape = self.shape(x);
        if shape.len() != 2 {
            return Err(TensorError::Dimension {
                op: "transpose",
                msg: format!("expected a matrix, got shape {shape:?}"),
            });
        }
        self.permute(x, &[1, 0])
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x);
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(TensorError::Dimension {
                op: "permute",
                msg: format!("{perm:?} is not a permutation of the axes of {shape:?}"),
            });
        }
        let out_shape = perm.iter().map(|&p| shape[p]).collect();
        let src = kernels::permute_index(&shape, perm);
        self.gather_flat("permute", x, out_shape, src)
    }
}
