use num_traits::{FromPrimitive, Num};

use super::RegionGeom;
use crate::error::{dim_err, Result};
use crate::tape::{Op, Tape, Var};
use crate::{Scalar, Tensor};

/// Weight of each input row of a block in its (shared) output value. The
/// last block, when short, is padded by repeating its final row.
pub(crate) fn block_weights<S: Scalar>(rows: usize, block: usize) -> Vec<(usize, usize, Vec<S>)> {
    block_spans(rows, block)
        .map(|(start, end, pad)| {
            let inv = S::one() / S::from_len(block);
            let mut w = vec![inv; end - start];
            *w.last_mut().expect("non-empty block") += S::from_len(pad) * inv;
            (start, end, w)
        })
        .collect()
}

/// `(start, end, padding)` of each averaging block.
fn block_spans(rows: usize, block: usize) -> impl Iterator<Item = (usize, usize, usize)> {
    (0..rows).step_by(block.max(1)).map(move |start| {
        let end = (start + block).min(rows);
        (start, end, block - (end - start))
    })
}

/// Block average-and-repeat over a row-major `[rows, cols]` buffer, for any
/// field (floats or exact rationals).
///
/// Each mean is formed as `first + sum(x - first) / block`, so a block whose
/// rows are already identical maps to itself exactly.
pub fn block_average_repeat_values<T>(data: &[T], rows: usize, cols: usize, block: usize) -> Vec<T>
where
    T: Clone + Num + FromPrimitive,
{
    assert_eq!(data.len(), rows * cols, "block_average_repeat_values: buffer size");
    assert!(block > 0, "block_average_repeat_values: zero block");
    let mut out = data.to_vec();
    let denom = T::from_usize(block).expect("block size representable");
    for (start, end, pad) in block_spans(rows, block) {
        let pad_t = T::from_usize(pad).expect("padding representable");
        for c in 0..cols {
            let first = data[start * cols + c].clone();
            let mut dev = T::zero();
            for r in start + 1..end {
                dev = dev + (data[r * cols + c].clone() - first.clone());
            }
            dev = dev + pad_t.clone() * (data[(end - 1) * cols + c].clone() - first.clone());
            let mean = first + dev / denom.clone();
            for r in start..end {
                out[r * cols + c] = mean.clone();
            }
        }
    }
    out
}

impl<S: Scalar> Tape<S> {
    /// Replaces every contiguous run of `block` rows of `x` (`[S, C]`) by
    /// that run's mean, keeping the row count.
    pub fn block_average_repeat(&self, x: Var, block: usize) -> Result<Var> {
        let (out, rows, cols) = {
            let nodes = self.nodes.borrow();
            let v = &nodes[x.0].value;
            if v.rank() != 2 || block == 0 {
                return dim_err("block_average_repeat", format!("need [S, C] input and block > 0, got {:?}", v.shape()));
            }
            let (rows, cols) = (v.dim(0), v.dim(1));
            let data = block_average_repeat_values(v.data(), rows, cols, block);
            (Tensor::from_parts(vec![rows, cols], data), rows, cols)
        };
        self.push("block_average_repeat", out, Op::BlockAverage { x, rows, cols, block })
    }

    /// Mean-pools `[T, C, H, W]` over a `grid x grid` partition of each frame,
    /// giving `[T, grid^2, C]`; region `i` is cell `(i / grid, i % grid)`.
    pub fn region_pool(&self, x: Var, grid: usize) -> Result<Var> {
        let (out, geom) = {
            let nodes = self.nodes.borrow();
            let v = &nodes[x.0].value;
            if v.rank() != 4 || grid == 0 {
                return dim_err("region_pool", format!("need [T, C, H, W] input, got {:?}", v.shape()));
            }
            let s = v.shape();
            let geom = RegionGeom {
                frames: s[0],
                channels: s[1],
                h: s[2],
                w: s[3],
                grid,
            };
            if geom.h % grid != 0 || geom.w % grid != 0 {
                return dim_err(
                    "region_pool",
                    format!("spatial dims {}x{} not divisible by grid {grid}", geom.h, geom.w),
                );
            }
            let k = grid * grid;
            let mut data = vec![S::zero(); geom.frames * k * geom.channels];
            let (ch, cw) = (geom.h / grid, geom.w / grid);
            let inv = S::one() / S::from_len(ch * cw);
            for t in 0..geom.frames {
                for c in 0..geom.channels {
                    let plane = &v.data()[(t * geom.channels + c) * geom.h * geom.w..][..geom.h * geom.w];
                    for y in 0..geom.h {
                        for xx in 0..geom.w {
                            let region = (y / ch) * grid + xx / cw;
                            data[(t * k + region) * geom.channels + c] += plane[y * geom.w + xx];
                        }
                    }
                }
            }
            data.iter_mut().for_each(|d| *d *= inv);
            (Tensor::from_parts(vec![geom.frames, k, geom.channels], data), geom)
        };
        self.push("region_pool", out, Op::RegionPool { x, geom })
    }
}
