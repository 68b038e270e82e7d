//! Slice-level numeric kernels shared by plain tensors and the tape.

use crate::error::{Result, TensorError};
use crate::Scalar;

pub(crate) fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize)> {
    if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
        return Err(TensorError::Shape {
            op: "matmul",
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        });
    }
    Ok((a[0], a[1], b[1]))
}

/// `out[m,n] += a[m,k] * b[k,n]`
pub(crate) fn matmul_into<S: Scalar>(a: &[S], b: &[S], out: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == S::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// `out[m,k] += g[m,n] * b[k,n]^T`
pub(crate) fn matmul_bt_into<S: Scalar>(g: &[S], b: &[S], out: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = S::zero();
            for (&x, &y) in grow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * k + p] += acc;
        }
    }
}

/// `out[k,n] += a[m,k]^T * g[m,n]`
pub(crate) fn matmul_at_into<S: Scalar>(a: &[S], g: &[S], out: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == S::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += aip * gv;
            }
        }
    }
}

pub(crate) fn transpose<S: Scalar>(x: &[S], rows: usize, cols: usize) -> Vec<S> {
    let mut out = vec![S::zero(); x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

/// Splits a shape around `axis` into `(outer, len, inner)` extents.
pub(crate) fn split_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(TensorError::Dimension {
            op,
            msg: format!("axis {axis} out of range for shape {shape:?}"),
        });
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

pub(crate) fn softmax<S: Scalar>(x: &[S], outer: usize, len: usize, inner: usize) -> Vec<S> {
    let mut out = vec![S::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut max = S::neg_infinity();
            for j in 0..len {
                max = max.max(x[base + j * inner]);
            }
            let mut total = S::zero();
            for j in 0..len {
                let e = (x[base + j * inner] - max).exp();
                out[base + j * inner] = e;
                total += e;
            }
            for j in 0..len {
                out[base + j * inner] /= total;
            }
        }
    }
    out
}

pub(crate) fn log_softmax<S: Scalar>(x: &[S], outer: usize, len: usize, inner: usize) -> Vec<S> {
    let mut out = vec![S::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut max = S::neg_infinity();
            for j in 0..len {
                max = max.max(x[base + j * inner]);
            }
            let mut total = S::zero();
            for j in 0..len {
                total += (x[base + j * inner] - max).exp();
            }
            let lse = max + total.ln();
            for j in 0..len {
                out[base + j * inner] = x[base + j * inner] - lse;
            }
        }
    }
    out
}

/// Row-major strides for `shape`.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// For each output offset of `permute(x, perm)`, the source offset in `x`.
pub(crate) fn permute_index(shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let src_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let numel: usize = shape.iter().product();
    let mut idx = vec![0usize; out_shape.len()];
    let mut map = Vec::with_capacity(numel);
    for _ in 0..numel {
        let src: usize = idx
            .iter()
            .zip(perm)
            .map(|(&i, &p)| i * src_strides[p])
            .sum();
        map.push(src);
        for ax in (0..idx.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transposed_products_agree_with_plain_matmul() {
        // a: 2x3, b: 3x2
        let a = [1.0, 2.0, 0.0, -1.0, 0.5, 3.0];
        let b = [2.0, 1.0, 0.0, -2.0, 4.0, 1.0];
        let mut ab = [0.0; 4];
        matmul_into(&a, &b, &mut ab, 2, 3, 2);
        assert_eq!(ab, [2.0, -3.0, 10.0, 1.0]);

        let bt = transpose(&b, 3, 2);
        let mut via_bt = [0.0; 4];
        matmul_bt_into(&a, &bt, &mut via_bt, 2, 2, 3);
        assert_eq!(via_bt, ab);

        let at = transpose(&a, 2, 3);
        let mut via_at = [0.0; 4];
        matmul_at_into(&at, &b, &mut via_at, 3, 2, 2);
        assert_eq!(via_at, ab);
    }

    #[test]
    fn matmul_dims_rejects_inner_mismatch() {
        assert!(matmul_dims(&[2, 3], &[2, 3]).is_err());
        assert!(matmul_dims(&[2, 3, 1], &[3, 1]).is_err());
        assert_eq!(matmul_dims(&[2, 3], &[3, 5]).unwrap(), (2, 3, 5));
    }
}
