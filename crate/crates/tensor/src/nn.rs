//! Parameterised layers built from tape ops.

use rand::Rng;

use crate::error::{Result, TensorError};
use crate::graph::Graph;
use crate::params::{BufferId, ParamId, ParamStore};
use crate::tape::Var;
use crate::{Scalar, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const LN_EPS: f64 = 1e-5;

/// Affine map `x W + b` over the last axis.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
    ) -> Self {
        let weight = store.add_uniform(format!("{name}.weight"), &[d_in, d_out], d_in, rng);
        let bias = bias.then(|| store.add_uniform(format!("{name}.bias"), &[d_out], d_in, rng));
        Self {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    pub fn forward<S: Scalar>(&self, g: &Graph<'_, S>, x: Var) -> Result<Var> {
        let w = g.param(self.weight)?;
        let b = self.bias.map(|b| g.param(b)).transpose()?;
        linear(g, x, w, b)
    }
}

/// `x [..., in] · W [in, out] (+ b [out])`.
pub fn linear<S: Scalar>(g: &crate::Tape<S>, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let shape = g.shape(x);
    let wshape = g.shape(w);
    let d_in = shape.last().copied().unwrap_or(0);
    if wshape.len() != 2 || wshape[0] != d_in {
        return Err(TensorError::Shape {
            op: "linear",
            lhs: shape,
            rhs: wshape,
        });
    }
    let rows = shape.iter().product::<usize>() / d_in.max(1);
    let flat = if shape.len() == 2 { x } else { g.reshape(x, &[rows, d_in])? };
    let mut y = g.matmul(flat, w)?;
    if let Some(b) = b {
        y = g.add_bias(y, b)?;
    }
    if shape.len() == 2 {
        Ok(y)
    } else {
        let mut out_shape = shape;
        *out_shape.last_mut().expect("rank >= 1") = wshape[1];
        g.reshape(y, &out_shape)
    }
}

/// Temporal convolution `[T, Cin] -> [T', Cout]` with bias.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub kernel: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        name: &str,
        c_in: usize,
        c_out: usize,
        width: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Self {
        let fan_in = width * c_in;
        let kernel = store.add_uniform(format!("{name}.kernel"), &[width, c_in, c_out], fan_in, rng);
        let bias = bias.then(|| store.add_uniform(format!("{name}.bias"), &[c_out], fan_in, rng));
        Self {
            kernel,
            bias,
            stride,
            padding,
        }
    }

    pub fn forward<S: Scalar>(&self, g: &Graph<'_, S>, x: Var) -> Result<Var> {
        let k = g.param(self.kernel)?;
        let y = g.conv1d(x, k, self.stride, self.padding)?;
        match self.bias {
            Some(b) => g.add_bias(y, g.param(b)?),
            None => Ok(y),
        }
    }
}

/// NCHW convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub kernel: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        name: &str,
        c_in: usize,
        c_out: usize,
        size: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        let fan_in = c_in * size * size;
        let kernel = store.add_uniform(format!("{name}.kernel"), &[c_out, c_in, size, size], fan_in, rng);
        let bias = Some(store.add_uniform(format!("{name}.bias"), &[c_out], fan_in, rng));
        Self {
            kernel,
            bias,
            stride,
            padding,
        }
    }

    pub fn forward<S: Scalar>(&self, g: &Graph<'_, S>, x: Var) -> Result<Var> {
        let k = g.param(self.kernel)?;
        let b = self.bias.map(|b| g.param(b)).transpose()?;
        g.conv2d(x, k, b, self.stride, self.padding)
    }
}

/// Batch normalisation over the rows of `[T, C]`, with running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
}

impl BatchNorm {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[channels])),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::ones(&[channels])),
        }
    }

    pub fn forward<S: Scalar>(&self, g: &Graph<'_, S>, x: Var) -> Result<Var> {
        let (gamma, beta) = (g.param(self.gamma)?, g.param(self.beta)?);
        let eps = S::lit(BN_EPS);
        if !g.is_training() {
            let running = (g.buffer(self.running_mean), g.buffer(self.running_var));
            return Ok(g.batch_norm(x, gamma, beta, Some(running), eps)?.0);
        }
        let (y, stats) = g.batch_norm(x, gamma, beta, None, eps)?;
        if let Some(stats) = stats {
            let m = S::lit(BN_MOMENTUM);
            let blend = |old: &[S], new: &[S]| -> Vec<S> {
                old.iter().zip(new).map(|(&o, &n)| (S::one() - m) * o + m * n).collect()
            };
            g.record_buffer_update(self.running_mean, blend(g.buffer(self.running_mean), &stats.mean));
            g.record_buffer_update(self.running_var, blend(g.buffer(self.running_var), &stats.var));
        }
        Ok(y)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, width: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[width])),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[width])),
        }
    }

    pub fn forward<S: Scalar>(&self, g: &Graph<'_, S>, x: Var) -> Result<Var> {
        g.layer_norm(x, g.param(self.gamma)?, g.param(self.beta)?, S::lit(LN_EPS))
    }
}
