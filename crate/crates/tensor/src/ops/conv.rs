use super::{conv_out_len, Conv1dGeom, Conv2dGeom};
use crate::error::{dim_err, Result, TensorError};
use crate::tape::{Op, Tape, Var};
use crate::{Scalar, Tensor};

impl<S: Scalar> Tape<S> {
    /// Convolution over time: `x [T, Cin]`, `kernel [w, Cin, Cout]` gives
    /// `[floor((T + 2p - w) / stride) + 1, Cout]`. No bias.
    pub fn conv1d(&self, x: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let (out, geom) = {
            let nodes = self.nodes.borrow();
            let (xv, kv) = (&nodes[x.0].value, &nodes[kernel.0].value);
            if xv.rank() != 2 || kv.rank() != 3 || xv.dim(1) != kv.dim(1) {
                return Err(TensorError::Shape {
                    op: "conv1d",
                    lhs: xv.shape().to_vec(),
                    rhs: kv.shape().to_vec(),
                });
            }
            let (t_in, c_in, width, c_out) = (xv.dim(0), xv.dim(1), kv.dim(0), kv.dim(2));
            let Some(t_out) = conv_out_len(t_in, width, stride, padding) else {
                return dim_err(
                    "conv1d",
                    format!("kernel width {width} exceeds padded input length {} (stride {stride})", t_in + 2 * padding),
                );
            };
            let geom = Conv1dGeom {
                t_in,
                c_in,
                c_out,
                width,
                stride,
                padding,
                t_out,
            };
            let (xd, kd) = (xv.data(), kv.data());
            let mut data = vec![S::zero(); t_out * c_out];
            for t in 0..t_out {
                let orow = &mut data[t * c_out..(t + 1) * c_out];
                for j in 0..width {
                    let Some(src) = (t * stride + j).checked_sub(padding).filter(|&s| s < t_in) else {
                        continue;
                    };
                    for c in 0..c_in {
                        let xval = xd[src * c_in + c];
                        if xval == S::zero() {
                            continue;
                        }
                        let krow = &kd[(j * c_in + c) * c_out..][..c_out];
                        for (o, &kv) in orow.iter_mut().zip(krow) {
                            *o += xval * kv;
                        }
                    }
                }
            }
            (Tensor::from_parts(vec![t_out, c_out], data), geom)
        };
        self.push("conv1d", out, Op::Conv1d { x, k: kernel, geom })
    }

    /// Per-channel convolution over time with stride 1: `x [T, C]`,
    /// `kernel [w, C]`.
    pub fn depthwise_conv1d(&self, x: Var, kernel: Var, padding: usize) -> Result<Var> {
        let (out, geom) = {
            let nodes = self.nodes.borrow();
            let (xv, kv) = (&nodes[x.0].value, &nodes[kernel.0].value);
            if xv.rank() != 2 || kv.rank() != 2 || xv.dim(1) != kv.dim(1) {
                return Err(TensorError::Shape {
                    op: "depthwise_conv1d",
                    lhs: xv.shape().to_vec(),
                    rhs: kv.shape().to_vec(),
                });
            }
            let (t_in, c, width) = (xv.dim(0), xv.dim(1), kv.dim(0));
            let Some(t_out) = conv_out_len(t_in, width, 1, padding) else {
                return dim_err("depthwise_conv1d", format!("kernel width {width} exceeds padded input"));
            };
            let geom = Conv1dGeom {
                t_in,
                c_in: c,
                c_out: c,
                width,
                stride: 1,
                padding,
                t_out,
            };
            let (xd, kd) = (xv.data(), kv.data());
            let mut data = vec![S::zero(); t_out * c];
            for t in 0..t_out {
                for j in 0..width {
                    let Some(src) = (t + j).checked_sub(padding).filter(|&s| s < t_in) else {
                        continue;
                    };
                    for ch in 0..c {
                        data[t * c + ch] += xd[src * c + ch] * kd[j * c + ch];
                    }
                }
            }
            (Tensor::from_parts(vec![t_out, c], data), geom)
        };
        self.push("depthwise_conv1d", out, Op::DepthwiseConv1d { x, k: kernel, geom })
    }

    /// 2D convolution in NCHW layout: `x [N, Cin, H, W]`,
    /// `kernel [Cout, Cin, kh, kw]`, optional `bias [Cout]`.
    pub fn conv2d(&self, x: Var, kernel: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let (out, geom) = {
            let nodes = self.nodes.borrow();
            let (xv, kv) = (&nodes[x.0].value, &nodes[kernel.0].value);
            if xv.rank() != 4 || kv.rank() != 4 || xv.dim(1) != kv.dim(1) {
                return Err(TensorError::Shape {
                    op: "conv2d",
                    lhs: xv.shape().to_vec(),
                    rhs: kv.shape().to_vec(),
                });
            }
            let (batch, c_in, h, w) = (xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3));
            let (c_out, kh, kw) = (kv.dim(0), kv.dim(2), kv.dim(3));
            if let Some(b) = bias {
                let bv = &nodes[b.0].value;
                if bv.shape() != [c_out] {
                    return Err(TensorError::Shape {
                        op: "conv2d bias",
                        lhs: vec![c_out],
                        rhs: bv.shape().to_vec(),
                    });
                }
            }
            let (Some(h_out), Some(w_out)) = (
                conv_out_len(h, kh, stride, padding),
                conv_out_len(w, kw, stride, padding),
            ) else {
                return dim_err("conv2d", format!("kernel {kh}x{kw} exceeds padded input {h}x{w}"));
            };
            let geom = Conv2dGeom {
                batch,
                c_in,
                h,
                w,
                c_out,
                kh,
                kw,
                stride,
                padding,
                h_out,
                w_out,
            };
            let (xd, kd) = (xv.data(), kv.data());
            let plane_out = h_out * w_out;
            let mut data = vec![S::zero(); batch * c_out * plane_out];
            let taps = tap_table(&geom);
            for n in 0..batch {
                let cols = im2col(&xd[n * c_in * h * w..][..c_in * h * w], &geom, &taps);
                let out = &mut data[n * c_out * plane_out..][..c_out * plane_out];
                if let Some(b) = bias {
                    let bv = nodes[b.0].value.data();
                    for (co, plane) in out.chunks_exact_mut(plane_out).enumerate() {
                        plane.iter_mut().for_each(|p| *p = bv[co]);
                    }
                }
                gemm_acc(out, kd, &cols, c_out, c_in * kh * kw, plane_out);
            }
            (Tensor::from_parts(vec![batch, c_out, h_out, w_out], data), geom)
        };
        self.push("conv2d", out, Op::Conv2d { x, k: kernel, bias, geom })
    }
}

/// For every kernel tap and output pixel of one input plane, the input
/// pixel it reads, or `usize::MAX` where it falls in the padding.
pub(crate) fn tap_table(g: &Conv2dGeom) -> Vec<usize> {
    let plane_out = g.h_out * g.w_out;
    let mut table = vec![usize::MAX; g.kh * g.kw * plane_out];
    for ky in 0..g.kh {
        for kx in 0..g.kw {
            let row = &mut table[(ky * g.kw + kx) * plane_out..][..plane_out];
            for oy in 0..g.h_out {
                let Some(iy) = (oy * g.stride + ky).checked_sub(g.padding).filter(|&v| v < g.h) else {
                    continue;
                };
                for ox in 0..g.w_out {
                    if let Some(ix) = (ox * g.stride + kx).checked_sub(g.padding).filter(|&v| v < g.w) {
                        row[oy * g.w_out + ox] = iy * g.w + ix;
                    }
                }
            }
        }
    }
    table
}

/// Column matrix `[c_in * kh * kw, h_out * w_out]` of one `[c_in, h, w]` image.
pub(crate) fn im2col<S: Scalar>(src: &[S], g: &Conv2dGeom, taps: &[usize]) -> Vec<S> {
    let (plane_in, ksz_out) = (g.h * g.w, taps.len());
    let mut cols = vec![S::zero(); g.c_in * ksz_out];
    for ci in 0..g.c_in {
        let plane = &src[ci * plane_in..][..plane_in];
        for (c, &t) in cols[ci * ksz_out..][..ksz_out].iter_mut().zip(taps) {
            if t != usize::MAX {
                *c = plane[t];
            }
        }
    }
    cols
}

/// Scatters column gradients back onto a `[c_in, h, w]` image gradient.
pub(crate) fn col2im_add<S: Scalar>(cols: &[S], dst: &mut [S], g: &Conv2dGeom, taps: &[usize]) {
    let (plane_in, ksz_out) = (g.h * g.w, taps.len());
    for ci in 0..g.c_in {
        let plane = &mut dst[ci * plane_in..][..plane_in];
        for (&c, &t) in cols[ci * ksz_out..][..ksz_out].iter().zip(taps) {
            if t != usize::MAX {
                plane[t] += c;
            }
        }
    }
}

/// `out [m, n] += a [m, k] · b [k, n]`, all row-major.
pub(crate) fn gemm_acc<S: Scalar>(out: &mut [S], a: &[S], b: &[S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..][..n];
        for (p, &aik) in a[i * k..][..k].iter().enumerate() {
            for (o, &bv) in row.iter_mut().zip(&b[p * n..][..n]) {
                *o += aik * bv;
            }
        }
    }
}
