//! Forward ops recorded on a [`Tape`](crate::Tape).
//!
//! No broadcasting happens implicitly: binary elementwise ops need equal
//! shapes, and the only broadcasts are [`Tape::add_bias`](crate::Tape::add_bias)
//! and [`Tape::broadcast_rows`](crate::Tape::broadcast_rows).

mod conv;
pub(crate) use conv::{col2im_add, im2col, tap_table};
pub(crate) use pool::block_weights;
mod elementwise;
mod linalg;
mod norm;
mod pool;
mod reduce;
mod shape;

pub use norm::BatchStats;
pub use pool::block_average_repeat_values;

use crate::error::{Result, TensorError};
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv1dGeom {
    pub t_in: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub width: usize,
    pub stride: usize,
    pub padding: usize,
    pub t_out: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dGeom {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub h_out: usize,
    pub w_out: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RegionGeom {
    pub frames: usize,
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub grid: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum NormKind {
    /// Statistics per column; `train` selects batch statistics.
    Batch { train: bool },
    /// Statistics per row.
    Layer,
}

pub(crate) struct NormSaved<S> {
    pub(crate) kind: NormKind,
    pub(crate) rows: usize,
    pub(crate) cols: usize,
    pub(crate) xhat: Vec<S>,
    pub(crate) invstd: Vec<S>,
}

/// Output length of a strided, zero-padded convolution along one axis.
pub fn conv_out_len(len: usize, width: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    if stride == 0 || width == 0 || padded < width {
        return None;
    }
    Some((padded - width) / stride + 1)
}

pub(crate) fn same_shape<S: Scalar>(
    op: &'static str,
    a: &crate::Tensor<S>,
    b: &crate::Tensor<S>,
) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::Shape {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}
