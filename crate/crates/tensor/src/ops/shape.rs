use crate::error::{dim_err, Result, TensorError};
use crate::kernels;
use crate::tape::{Op, Tape, Var};
use crate::{Scalar, Tensor};

impl<S: Scalar> Tape<S> {
    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.nodes.borrow()[x.0].value.reshape(shape)?;
        self.push("reshape", out, Op::Reshape(x))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn narrow(&self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let (out, outer, full, inner) = {
            let nodes = self.nodes.borrow();
            let v = &nodes[x.0].value;
            let (outer, full, inner) = kernels::split_axis("narrow", v.shape(), axis)?;
            if len == 0 || start + len > full {
                return dim_err("narrow", format!("range {start}..{} outside axis of length {full}", start + len));
            }
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = o * full * inner + start * inner;
                data.extend_from_slice(&v.data()[base..base + len * inner]);
            }
            let mut shape = v.shape().to_vec();
            shape[axis] = len;
            (Tensor::from_parts(shape, data), outer, full, inner)
        };
        self.push(
            "narrow",
            out,
            Op::Narrow {
                x,
                outer,
                len: full,
                inner,
                start,
                take: len,
            },
        )
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return dim_err("concat", "no inputs");
        }
        let (out, spans, outer, inner, total) = {
            let nodes = self.nodes.borrow();
            let first = nodes[parts[0].0].value.shape().to_vec();
            let (outer, _, inner) = kernels::split_axis("concat", &first, axis)?;
            let mut spans = Vec::with_capacity(parts.len());
            for p in parts {
                let s = nodes[p.0].value.shape();
                let compatible = s.len() == first.len()
                    && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
                if !compatible {
                    return Err(TensorError::Shape {
                        op: "concat",
                        lhs: first.clone(),
                        rhs: s.to_vec(),
                    });
                }
                spans.push((*p, s[axis]));
            }
            let total: usize = spans.iter().map(|s| s.1).sum();
            let mut data = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for (p, len) in &spans {
                    let d = nodes[p.0].value.data();
                    data.extend_from_slice(&d[o * len * inner..(o + 1) * len * inner]);
                }
            }
            let mut shape = first;
            shape[axis] = total;
            (Tensor::from_parts(shape, data), spans, outer, inner, total)
        };
        self.push(
            "concat",
            out,
            Op::Concat {
                parts: spans,
                outer,
                inner,
                total,
            },
        )
    }

    /// Selects rows (entries of axis 0) by index; indices may repeat.
    pub fn gather_rows(&self, x: Var, rows: &[usize]) -> Result<Var> {
        let (out, width) = {
            let nodes = self.nodes.borrow();
            let v = &nodes[x.0].value;
            if v.rank() == 0 || rows.is_empty() {
                return dim_err("gather_rows", "need a non-scalar input and at least one row");
            }
            let n = v.dim(0);
            let width = v.numel() / n;
            let mut data = Vec::with_capacity(rows.len() * width);
            for &r in rows {
                if r >= n {
                    return dim_err("gather_rows", format!("row {r} out of range for {n} rows"));
                }
                data.extend_from_slice(&v.data()[r * width..(r + 1) * width]);
            }
            let mut shape = v.shape().to_vec();
            shape[0] = rows.len();
            (Tensor::from_parts(shape, data), width)
        };
        self.push(
            "gather_rows",
            out,
            Op::GatherRows {
                x,
                rows: rows.to_vec(),
                width,
            },
        )
    }

    /// Row `i` of `x` as a `[1, ...]` tensor.
    pub fn row(&self, x: Var, i: usize) -> Result<Var> {
        self.narrow(x, 0, i, 1)
    }

    /// Repeats each row of `x` (`[T, d]`) `times` times consecutively,
    /// giving `[T * times, d]`: row `t * times + j` is row `t`.
    pub fn broadcast_rows(&self, x: Var, times: usize) -> Result<Var> {
        let n = self.shape(x).first().copied().unwrap_or(0);
        let rows: Vec<usize> = (0..n).flat_map(|t| std::iter::repeat(t).take(times)).collect();
        self.gather_rows(x, &rows)
    }
}
