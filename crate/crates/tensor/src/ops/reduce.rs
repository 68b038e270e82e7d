use crate::error::{dim_err, Result};
use crate::kernels;
use crate::tape::{Op, Tape, Var};
use crate::{Scalar, Tensor};

impl<S: Scalar> Tape<S> {
    /// Sum of all elements as a scalar.
    pub fn sum(&self, x: Var) -> Result<Var> {
        let s = self.nodes.borrow()[x.0].value.sum();
        self.push("sum", Tensor::scalar(s), Op::SumAll(x))
    }

    pub fn mean(&self, x: Var) -> Result<Var> {
        let s = {
            let nodes = self.nodes.borrow();
            let v = &nodes[x.0].value;
            v.sum() / S::from_len(v.numel())
        };
        self.push("mean", Tensor::scalar(s), Op::MeanAll(x))
    }

    /// Sums out `axis`, removing it from the shape.
    pub fn sum_axis(&self, x: Var, axis: usize) -> Result<Var> {
        let (out, outer, len, inner) = {
            let nodes = self.nodes.borrow();
            let v = &nodes[x.0].value;
            let (outer, len, inner) = kernels::split_axis("sum_axis", v.shape(), axis)?;
            let mut data = vec![S::zero(); outer * inner];
            for o in 0..outer {
                for j in 0..len {
                    let src = &v.data()[(o * len + j) * inner..(o * len + j + 1) * inner];
                    for (d, &s) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
            let mut shape = v.shape().to_vec();
            shape.remove(axis);
            (Tensor::from_parts(shape, data), outer, len, inner)
        };
        self.push("sum_axis", out, Op::SumAxis { x, outer, len, inner })
    }

    pub fn mean_axis(&self, x: Var, axis: usize) -> Result<Var> {
        let len = *self.shape(x).get(axis).unwrap_or(&1);
        let s = self.sum_axis(x, axis)?;
        self.scale(s, S::one() / S::from_len(len))
    }

    pub fn softmax(&self, x: Var, axis: usize) -> Result<Var> {
        let (out, outer, len, inner) = {
            let nodes = self.nodes.borrow();
            let v = &nodes[x.0].value;
            let (outer, len, inner) = kernels::split_axis("softmax", v.shape(), axis)?;
            let data = kernels::softmax(v.data(), outer, len, inner);
            (Tensor::from_parts(v.shape().to_vec(), data), outer, len, inner)
        };
        self.push("softmax", out, Op::Softmax { x, outer, len, inner })
    }

    pub fn log_softmax(&self, x: Var, axis: usize) -> Result<Var> {
        let (out, outer, len, inner) = {
            let nodes = self.nodes.borrow();
            let v = &nodes[x.0].value;
            let (outer, len, inner) = kernels::split_axis("log_softmax", v.shape(), axis)?;
            let data = kernels::log_softmax(v.data(), outer, len, inner);
            (Tensor::from_parts(v.shape().to_vec(), data), outer, len, inner)
        };
        self.push("log_softmax", out, Op::LogSoftmax { x, outer, len, inner })
    }

    /// Divides each row (last axis) by its L1 norm; all-zero rows stay zero.
    pub fn l1_normalize_rows(&self, x: Var) -> Result<Var> {
        let (out, cols) = {
            let nodes = self.nodes.borrow();
            let v = &nodes[x.0].value;
            let Some(&cols) = v.shape().last() else {
                return dim_err("l1_normalize_rows", "scalar input");
            };
            let mut data = v.data().to_vec();
            for row in data.chunks_mut(cols) {
                let norm: S = row.iter().map(|r| r.abs()).sum();
                if norm > S::zero() {
                    row.iter_mut().for_each(|r| *r /= norm);
                }
            }
            (Tensor::from_parts(v.shape().to_vec(), data), cols)
        };
        self.push("l1_normalize_rows", out, Op::L1Normalize { x, cols })
    }
}
