//! Vector-Jacobian products for every built-in op.

use crate::kernels;
use crate::ops::{NormKind, NormSaved};
use crate::tape::{Node, Op, Var};
use crate::Scalar;

/// Gradient buffer of `v`, allocated on first use; `None` when `v` does not
/// lead to any gradient-carrying leaf.
fn slot<'g, S: Scalar>(grads: &'g mut [Option<Vec<S>>], nodes: &[Node<S>], v: Var) -> Option<&'g mut Vec<S>> {
    let node = &nodes[v.0];
    if !node.needs_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![S::zero(); node.value.numel()]))
}

fn add_scaled<S: Scalar>(dst: &mut [S], src: &[S], k: S) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += k * s;
    }
}

pub(crate) fn propagate<S: Scalar>(nodes: &[Node<S>], i: usize, g: &[S], grads: &mut [Option<Vec<S>>]) {
    let out = &nodes[i].value;
    let val = |v: &Var| nodes[v.0].value.data();
    match &nodes[i].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if let Some(d) = slot(grads, nodes, *a) {
                add_scaled(d, g, S::one());
            }
            if let Some(d) = slot(grads, nodes, *b) {
                add_scaled(d, g, S::one());
            }
        }
        Op::Sub(a, b) => {
            if let Some(d) = slot(grads, nodes, *a) {
                add_scaled(d, g, S::one());
            }
            if let Some(d) = slot(grads, nodes, *b) {
                add_scaled(d, g, -S::one());
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(a), val(b));
            if let Some(d) = slot(grads, nodes, *a) {
                for ((d, &gi), &bi) in d.iter_mut().zip(g).zip(bv) {
                    *d += gi * bi;
                }
            }
            if let Some(d) = slot(grads, nodes, *b) {
                for ((d, &gi), &ai) in d.iter_mut().zip(g).zip(av) {
                    *d += gi * ai;
                }
            }
        }
        Op::MulAdd(a, b, c) => {
            let (av, bv) = (val(a), val(b));
            if let Some(d) = slot(grads, nodes, *a) {
                for ((d, &gi), &bi) in d.iter_mut().zip(g).zip(bv) {
                    *d += gi * bi;
                }
            }
            if let Some(d) = slot(grads, nodes, *b) {
                for ((d, &gi), &ai) in d.iter_mut().zip(g).zip(av) {
                    *d += gi * ai;
                }
            }
            if let Some(d) = slot(grads, nodes, *c) {
                add_scaled(d, g, S::one());
            }
        }
        Op::Scale(x, k) => {
            if let Some(d) = slot(grads, nodes, *x) {
                add_scaled(d, g, *k);
            }
        }
        Op::Offset(x) | Op::Reshape(x) => {
            if let Some(d) = slot(grads, nodes, *x) {
                add_scaled(d, g, S::one());
            }
        }
        Op::AddBias(x, b) => {
            if let Some(d) = slot(grads, nodes, *x) {
                add_scaled(d, g, S::one());
            }
            let n = nodes[b.0].value.numel();
            if let Some(d) = slot(grads, nodes, *b) {
                for row in g.chunks(n) {
                    add_scaled(d, row, S::one());
                }
            }
        }
        Op::Relu(x) => {
            let xv = val(x);
            if let Some(d) = slot(grads, nodes, *x) {
                for ((d, &gi), &xi) in d.iter_mut().zip(g).zip(xv) {
                    if xi > S::zero() {
                        *d += gi;
                    }
                }
            }
        }
        Op::Sigmoid(x) => {
            if let Some(d) = slot(grads, nodes, *x) {
                for ((d, &gi), &y) in d.iter_mut().zip(g).zip(out.data()) {
                    *d += gi * y * (S::one() - y);
                }
            }
        }
        Op::Tanh(x) => {
            if let Some(d) = slot(grads, nodes, *x) {
                for ((d, &gi), &y) in d.iter_mut().zip(g).zip(out.data()) {
                    *d += gi * (S::one() - y * y);
                }
            }
        }
        Op::Exp(x) => {
            if let Some(d) = slot(grads, nodes, *x) {
                for ((d, &gi), &y) in d.iter_mut().zip(g).zip(out.data()) {
                    *d += gi * y;
                }
            }
        }
        Op::Threshold(x, tau) => {
            let xv = val(x);
            if let Some(d) = slot(grads, nodes, *x) {
                for ((d, &gi), &xi) in d.iter_mut().zip(g).zip(xv) {
                    if xi >= *tau {
                        *d += gi;
                    }
                }
            }
        }
        Op::Matmul { a, b, m, k, n } => {
            let (av, bv) = (val(a), val(b));
            if let Some(d) = slot(grads, nodes, *a) {
                kernels::matmul_bt_into(g, bv, d, *m, *k, *n);
            }
            if let Some(d) = slot(grads, nodes, *b) {
                kernels::matmul_at_into(av, g, d, *m, *k, *n);
            }
        }
        Op::Bmm { a, b, batch, m, k, n } => {
            let (av, bv) = (val(a), val(b));
            let (sa, sb, sg) = (m * k, k * n, m * n);
            if let Some(d) = slot(grads, nodes, *a) {
                for bi in 0..*batch {
                    kernels::matmul_bt_into(
                        &g[bi * sg..][..sg],
                        &bv[bi * sb..][..sb],
                        &mut d[bi * sa..][..sa],
                        *m,
                        *k,
                        *n,
                    );
                }
            }
            if let Some(d) = slot(grads, nodes, *b) {
                for bi in 0..*batch {
                    kernels::matmul_at_into(
                        &av[bi * sa..][..sa],
                        &g[bi * sg..][..sg],
                        &mut d[bi * sb..][..sb],
                        *m,
                        *k,
                        *n,
                    );
                }
            }
        }
        Op::Gather { x, src } => {
            if let Some(d) = slot(grads, nodes, *x) {
                for (&s, &gi) in src.iter().zip(g) {
                    d[s] += gi;
                }
            }
        }
        Op::Narrow {
            x,
            outer,
            len,
            inner,
            start,
            take,
        } => {
            if let Some(d) = slot(grads, nodes, *x) {
                for o in 0..*outer {
                    let dst = &mut d[o * len * inner + start * inner..][..take * inner];
                    add_scaled(dst, &g[o * take * inner..][..take * inner], S::one());
                }
            }
        }
        Op::Concat {
            parts,
            outer,
            inner,
            total,
        } => {
            let mut offset = 0;
            for (p, len) in parts {
                if let Some(d) = slot(grads, nodes, *p) {
                    for o in 0..*outer {
                        let src = &g[(o * total + offset) * inner..][..len * inner];
                        add_scaled(&mut d[o * len * inner..][..len * inner], src, S::one());
                    }
                }
                offset += len;
            }
        }
        Op::GatherRows { x, rows, width } => {
            if let Some(d) = slot(grads, nodes, *x) {
                for (j, &r) in rows.iter().enumerate() {
                    add_scaled(&mut d[r * width..][..*width], &g[j * width..][..*width], S::one());
                }
            }
        }
        Op::Softmax { x, outer, len, inner } => {
            let y = out.data();
            if let Some(d) = slot(grads, nodes, *x) {
                for o in 0..*outer {
                    for i in 0..*inner {
                        let base = o * len * inner + i;
                        let dot: S = (0..*len).map(|j| g[base + j * inner] * y[base + j * inner]).sum();
                        for j in 0..*len {
                            let idx = base + j * inner;
                            d[idx] += y[idx] * (g[idx] - dot);
                        }
                    }
                }
            }
        }
        Op::LogSoftmax { x, outer, len, inner } => {
            let y = out.data();
            if let Some(d) = slot(grads, nodes, *x) {
                for o in 0..*outer {
                    for i in 0..*inner {
                        let base = o * len * inner + i;
                        let total: S = (0..*len).map(|j| g[base + j * inner]).sum();
                        for j in 0..*len {
                            let idx = base + j * inner;
                            d[idx] += g[idx] - y[idx].exp() * total;
                        }
                    }
                }
            }
        }
        Op::SumAll(x) => {
            if let Some(d) = slot(grads, nodes, *x) {
                d.iter_mut().for_each(|v| *v += g[0]);
            }
        }
        Op::MeanAll(x) => {
            if let Some(d) = slot(grads, nodes, *x) {
                let k = g[0] / S::from_len(d.len());
                d.iter_mut().for_each(|v| *v += k);
            }
        }
        Op::SumAxis { x, outer, len, inner } => {
            if let Some(d) = slot(grads, nodes, *x) {
                for o in 0..*outer {
                    let src = &g[o * inner..][..*inner];
                    for j in 0..*len {
                        add_scaled(&mut d[(o * len + j) * inner..][..*inner], src, S::one());
                    }
                }
            }
        }
        Op::L1Normalize { x, cols } => {
            let xv = val(x);
            if let Some(d) = slot(grads, nodes, *x) {
                for r in 0..xv.len() / cols {
                    let row = &xv[r * cols..][..*cols];
                    let gr = &g[r * cols..][..*cols];
                    let norm: S = row.iter().map(|v| v.abs()).sum();
                    if norm == S::zero() {
                        continue;
                    }
                    let dot: S = gr.iter().zip(row).map(|(&a, &b)| a * b).sum();
                    let k = dot / (norm * norm);
                    for c in 0..*cols {
                        let sign = if row[c] > S::zero() {
                            S::one()
                        } else if row[c] < S::zero() {
                            -S::one()
                        } else {
                            S::zero()
                        };
                        d[r * cols + c] += gr[c] / norm - sign * k;
                    }
                }
            }
        }
        Op::Conv1d { x, k, geom } => {
            let (xv, kv) = (val(x), val(k));
            let gm = *geom;
            let taps = |f: &mut dyn FnMut(usize, usize, usize)| {
                for t in 0..gm.t_out {
                    for j in 0..gm.width {
                        if let Some(src) = (t * gm.stride + j).checked_sub(gm.padding).filter(|&s| s < gm.t_in) {
                            f(t, j, src);
                        }
                    }
                }
            };
            if let Some(d) = slot(grads, nodes, *x) {
                taps(&mut |t, j, src| {
                    let grow = &g[t * gm.c_out..][..gm.c_out];
                    for c in 0..gm.c_in {
                        let krow = &kv[(j * gm.c_in + c) * gm.c_out..][..gm.c_out];
                        let dot: S = grow.iter().zip(krow).map(|(&a, &b)| a * b).sum();
                        d[src * gm.c_in + c] += dot;
                    }
                });
            }
            if let Some(d) = slot(grads, nodes, *k) {
                taps(&mut |t, j, src| {
                    let grow = &g[t * gm.c_out..][..gm.c_out];
                    for c in 0..gm.c_in {
                        let xval = xv[src * gm.c_in + c];
                        add_scaled(&mut d[(j * gm.c_in + c) * gm.c_out..][..gm.c_out], grow, xval);
                    }
                });
            }
        }
        Op::DepthwiseConv1d { x, k, geom } => {
            let (xv, kv) = (val(x), val(k));
            let c = geom.c_in;
            let pairs = (0..geom.t_out).flat_map(|t| {
                (0..geom.width).filter_map(move |j| {
                    (t + j)
                        .checked_sub(geom.padding)
                        .filter(|&s| s < geom.t_in)
                        .map(|s| (t, j, s))
                })
            });
            if let Some(d) = slot(grads, nodes, *x) {
                for (t, j, s) in pairs.clone() {
                    for ch in 0..c {
                        d[s * c + ch] += g[t * c + ch] * kv[j * c + ch];
                    }
                }
            }
            if let Some(d) = slot(grads, nodes, *k) {
                for (t, j, s) in pairs {
                    for ch in 0..c {
                        d[j * c + ch] += g[t * c + ch] * xv[s * c + ch];
                    }
                }
            }
        }
        Op::Conv2d { x, k, bias, geom } => {
            let (xv, kv) = (val(x), val(k));
            let gm = geom;
            let (plane_in, plane_out, ksz) = (gm.h * gm.w, gm.h_out * gm.w_out, gm.kh * gm.kw);
            if let Some(b) = bias {
                if let Some(d) = slot(grads, nodes, *b) {
                    for n in 0..gm.batch {
                        for co in 0..gm.c_out {
                            d[co] += g[(n * gm.c_out + co) * plane_out..][..plane_out].iter().copied().sum::<S>();
                        }
                    }
                }
            }
            let taps = crate::ops::tap_table(gm);
            let rows = gm.c_in * ksz;
            let per_n = |n: usize| &g[n * gm.c_out * plane_out..][..gm.c_out * plane_out];
            if let Some(d) = slot(grads, nodes, *k) {
                for n in 0..gm.batch {
                    let cols = crate::ops::im2col(&xv[n * gm.c_in * plane_in..][..gm.c_in * plane_in], gm, &taps);
                    // dK [c_out, rows] += g [c_out, P] · colsᵀ
                    for (co, gp) in per_n(n).chunks_exact(plane_out).enumerate() {
                        for (r, dk) in d[co * rows..][..rows].iter_mut().enumerate() {
                            *dk += gp.iter().zip(&cols[r * plane_out..][..plane_out]).map(|(&a, &b)| a * b).sum::<S>();
                        }
                    }
                }
            }
            if let Some(d) = slot(grads, nodes, *x) {
                for n in 0..gm.batch {
                    // dcols [rows, P] = Kᵀ · g
                    let mut dcols = vec![S::zero(); rows * plane_out];
                    for (co, gp) in per_n(n).chunks_exact(plane_out).enumerate() {
                        for (r, &k_r) in kv[co * rows..][..rows].iter().enumerate() {
                            for (o, &gv) in dcols[r * plane_out..][..plane_out].iter_mut().zip(gp) {
                                *o += k_r * gv;
                            }
                        }
                    }
                    crate::ops::col2im_add(&dcols, &mut d[n * gm.c_in * plane_in..][..gm.c_in * plane_in], gm, &taps);
                }
            }
        }
        Op::Norm { x, gamma, beta, saved } => norm_backward(nodes, grads, g, *x, *gamma, *beta, saved),
        Op::RegionPool { x, geom } => {
            if let Some(d) = slot(grads, nodes, *x) {
                let k = geom.grid * geom.grid;
                let (ch, cw) = (geom.h / geom.grid, geom.w / geom.grid);
                let inv = S::one() / S::from_len(ch * cw);
                for t in 0..geom.frames {
                    for c in 0..geom.channels {
                        let plane = &mut d[(t * geom.channels + c) * geom.h * geom.w..][..geom.h * geom.w];
                        for y in 0..geom.h {
                            for xx in 0..geom.w {
                                let region = (y / ch) * geom.grid + xx / cw;
                                plane[y * geom.w + xx] += inv * g[(t * k + region) * geom.channels + c];
                            }
                        }
                    }
                }
            }
        }
        Op::BlockAverage { x, rows, cols, block } => {
            if let Some(d) = slot(grads, nodes, *x) {
                for (start, end, w) in crate::ops::block_weights::<S>(*rows, *block) {
                    let mut gsum = vec![S::zero(); *cols];
                    for r in start..end {
                        add_scaled(&mut gsum, &g[r * cols..][..*cols], S::one());
                    }
                    for (r, &wr) in (start..end).zip(&w) {
                        add_scaled(&mut d[r * cols..][..*cols], &gsum, wr);
                    }
                }
            }
        }
        Op::Custom { inputs, rule } => {
            let values: Vec<_> = inputs.iter().map(|v| &nodes[v.0].value).collect();
            let deltas = rule.backward(&values, out, g);
            for (v, delta) in inputs.iter().zip(deltas) {
                if let (Some(delta), Some(d)) = (delta, slot(grads, nodes, *v)) {
                    add_scaled(d, &delta, S::one());
                }
            }
        }
    }
}

fn norm_backward<S: Scalar>(
    nodes: &[Node<S>],
    grads: &mut [Option<Vec<S>>],
    g: &[S],
    x: Var,
    gamma: Var,
    beta: Var,
    saved: &NormSaved<S>,
) {
    let (rows, cols) = (saved.rows, saved.cols);
    let xhat = &saved.xhat;
    if let Some(d) = slot(grads, nodes, beta) {
        for row in g.chunks(cols) {
            add_scaled(d, row, S::one());
        }
    }
    if let Some(d) = slot(grads, nodes, gamma) {
        for (grow, xrow) in g.chunks(cols).zip(xhat.chunks(cols)) {
            for c in 0..cols {
                d[c] += grow[c] * xrow[c];
            }
        }
    }
    let gam = nodes[gamma.0].value.data();
    let Some(d) = slot(grads, nodes, x) else { return };
    match saved.kind {
        NormKind::Batch { train: false } => {
            for r in 0..rows {
                for c in 0..cols {
                    let i = r * cols + c;
                    d[i] += g[i] * gam[c] * saved.invstd[c];
                }
            }
        }
        NormKind::Batch { train: true } => {
            let n = S::from_len(rows);
            for c in 0..cols {
                let mut sum = S::zero();
                let mut dot = S::zero();
                for r in 0..rows {
                    let i = r * cols + c;
                    let dxhat = g[i] * gam[c];
                    sum += dxhat;
                    dot += dxhat * xhat[i];
                }
                for r in 0..rows {
                    let i = r * cols + c;
                    let dxhat = g[i] * gam[c];
                    d[i] += saved.invstd[c] / n * (n * dxhat - sum - xhat[i] * dot);
                }
            }
        }
        NormKind::Layer => {
            let n = S::from_len(cols);
            for r in 0..rows {
                let mut sum = S::zero();
                let mut dot = S::zero();
                for c in 0..cols {
                    let i = r * cols + c;
                    let dxhat = g[i] * gam[c];
                    sum += dxhat;
                    dot += dxhat * xhat[i];
                }
                for c in 0..cols {
                    let i = r * cols + c;
                    let dxhat = g[i] * gam[c];
                    d[i] += saved.invstd[r] / n * (n * dxhat - sum - xhat[i] * dot);
                }
            }
        }
    }
}
