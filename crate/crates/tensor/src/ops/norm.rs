use super::{NormKind, NormSaved};
use crate::error::{dim_err, Result, TensorError};
use crate::tape::{Op, Tape, Var};
use crate::{Scalar, Tensor};

/// Per-channel statistics of one training-mode batch-norm call.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<S> {
    pub mean: Vec<S>,
    /// Unbiased variance (biased when only one row is present).
    pub var: Vec<S>,
}

impl<S: Scalar> Tape<S> {
    fn norm_params(&self, op: &'static str, x: Var, gamma: Var, beta: Var, width: usize) -> Result<()> {
        let nodes = self.nodes.borrow();
        for p in [gamma, beta] {
            let s = nodes[p.0].value.shape();
            if s != [width] {
                return Err(TensorError::Shape {
                    op,
                    lhs: nodes[x.0].value.shape().to_vec(),
                    rhs: s.to_vec(),
                });
            }
        }
        Ok(())
    }

    /// Batch normalisation of `x [T, C]` over its rows.
    ///
    /// With `running = None` the batch statistics are used (training mode)
    /// and returned so the caller can fold them into running averages;
    /// otherwise the given `(mean, var)` are used.
    pub fn batch_norm(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<(&[S], &[S])>,
        eps: S,
    ) -> Result<(Var, Option<BatchStats<S>>)> {
        let shape = self.shape(x);
        if shape.len() != 2 {
            return dim_err("batch_norm", format!("expected [T, C], got {shape:?}"));
        }
        let (rows, cols) = (shape[0], shape[1]);
        self.norm_params("batch_norm", x, gamma, beta, cols)?;
        let (out, saved, stats) = {
            let nodes = self.nodes.borrow();
            let xd = nodes[x.0].value.data();
            let (g, b) = (nodes[gamma.0].value.data(), nodes[beta.0].value.data());
            let n = S::from_len(rows);
            let (mean, var, stats) = match running {
                Some((m, v)) => {
                    if m.len() != cols || v.len() != cols {
                        return dim_err("batch_norm", "running statistics width");
                    }
                    (m.to_vec(), v.to_vec(), None)
                }
                None => {
                    let mut mean = vec![S::zero(); cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            mean[c] += xd[r * cols + c];
                        }
                    }
                    mean.iter_mut().for_each(|m| *m /= n);
                    let mut var = vec![S::zero(); cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            let d = xd[r * cols + c] - mean[c];
                            var[c] += d * d;
                        }
                    }
                    var.iter_mut().for_each(|v| *v /= n);
                    let unbiased = if rows > 1 {
                        let k = n / (n - S::one());
                        var.iter().map(|&v| v * k).collect()
                    } else {
                        var.clone()
                    };
                    let stats = BatchStats {
                        mean: mean.clone(),
                        var: unbiased,
                    };
                    (mean, var, Some(stats))
                }
            };
            let invstd: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
            let mut xhat = vec![S::zero(); rows * cols];
            let mut data = vec![S::zero(); rows * cols];
            for r in 0..rows {
                for c in 0..cols {
                    let i = r * cols + c;
                    xhat[i] = (xd[i] - mean[c]) * invstd[c];
                    data[i] = g[c] * xhat[i] + b[c];
                }
            }
            let saved = NormSaved {
                kind: NormKind::Batch {
                    train: running.is_none(),
                },
                rows,
                cols,
                xhat,
                invstd,
            };
            (Tensor::from_parts(shape.clone(), data), saved, stats)
        };
        let v = self.push("batch_norm", out, Op::Norm { x, gamma, beta, saved })?;
        Ok((v, stats))
    }

    /// Layer normalisation over the last axis of `x [..., C]`.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: S) -> Result<Var> {
        let shape = self.shape(x);
        let Some(&cols) = shape.last() else {
            return dim_err("layer_norm", "scalar input");
        };
        self.norm_params("layer_norm", x, gamma, beta, cols)?;
        let (out, saved) = {
            let nodes = self.nodes.borrow();
            let xd = nodes[x.0].value.data();
            let (g, b) = (nodes[gamma.0].value.data(), nodes[beta.0].value.data());
            let rows = xd.len() / cols;
            let n = S::from_len(cols);
            let mut xhat = vec![S::zero(); xd.len()];
            let mut invstd = vec![S::zero(); rows];
            let mut data = vec![S::zero(); xd.len()];
            for r in 0..rows {
                let row = &xd[r * cols..(r + 1) * cols];
                let mean = row.iter().copied().sum::<S>() / n;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
                let inv = S::one() / (var + eps).sqrt();
                invstd[r] = inv;
                for c in 0..cols {
                    let i = r * cols + c;
                    xhat[i] = (row[c] - mean) * inv;
                    data[i] = g[c] * xhat[i] + b[c];
                }
            }
            let saved = NormSaved {
                kind: NormKind::Layer,
                rows,
                cols,
                xhat,
                invstd,
            };
            (Tensor::from_parts(shape.clone(), data), saved)
        };
        self.push("layer_norm", out, Op::Norm { x, gamma, beta, saved })
    }
}
