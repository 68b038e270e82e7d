use adavsr_tensor::nn::Linear;
use adavsr_tensor::{Graph, ParamStore, Scalar, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};

/// Additive mask value for blocked positions. Finite so that the tape's
/// finiteness checks hold; `exp` of it underflows to exactly zero.
pub const MASKED: f64 = -1e9;

/// Sinusoidal position table `[len, width]`.
pub fn positional_encoding<S: Scalar>(len: usize, width: usize) -> Tensor<S> {
    Tensor::from_fn(&[len, width], |i| {
        let (pos, j) = (i / width, i % width);
        let rate = 10_000f64.powf(-((j - j % 2) as f64) / width as f64);
        let angle = pos as f64 * rate;
        S::lit(if j % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

/// `[len, len]` additive mask letting position `i` see only `j <= i`.
pub fn causal_mask<S: Scalar>(len: usize) -> Tensor<S> {
    Tensor::from_fn(&[len, len], |i| {
        if i % len > i / len {
            S::lit(MASKED)
        } else {
            S::zero()
        }
    })
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        name: &str,
        width: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::config(format!("width {width} is not divisible by {heads} heads")));
        }
        Ok(Self {
            q: Linear::new(store, rng, &format!("{name}.q"), width, width, true),
            k: Linear::new(store, rng, &format!("{name}.k"), width, width, true),
            v: Linear::new(store, rng, &format!("{name}.v"), width, width, true),
            out: Linear::new(store, rng, &format!("{name}.out"), width, width, true),
            heads,
        })
    }

    /// Queries from `x [Tq, d]`, keys and values from `memory [Tk, d]`.
    pub fn forward<S: Scalar>(&self, g: &Graph<'_, S>, x: Var, memory: Var, mask: Option<Var>) -> Result<Var> {
        let q = self.q.forward(g, x)?;
        let k = self.k.forward(g, memory)?;
        let v = self.v.forward(g, memory)?;
        let width = g.shape(q)[1];
        let dh = width / self.heads;
        let scale = S::from_len(dh).sqrt().recip();
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.narrow(q, 1, h * dh, dh)?;
            let kh = g.narrow(k, 1, h * dh, dh)?;
            let vh = g.narrow(v, 1, h * dh, dh)?;
            let mut scores = g.scale(g.matmul(qh, g.transpose(kh)?)?, scale)?;
            if let Some(m) = mask {
                scores = g.add(scores, m)?;
            }
            let w = g.softmax(scores, 1)?;
            heads.push(g.matmul(w, vh)?);
        }
        let joined = if heads.len() == 1 { heads[0] } else { g.concat(&heads, 1)? };
        Ok(self.out.forward(g, joined)?)
    }
}

/// Two-layer position-wise feed-forward with swish.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<S: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<S>, rng: &mut R, name: &str, width: usize, hidden: usize) -> Self {
        Self {
            up: Linear::new(store, rng, &format!("{name}.up"), width, hidden, true),
            down: Linear::new(store, rng, &format!("{name}.down"), hidden, width, true),
        }
    }

    pub fn forward<S: Scalar>(&self, g: &Graph<'_, S>, x: Var) -> Result<Var> {
        let h = g.swish(self.up.forward(g, x)?)?;
        Ok(self.down.forward(g, h)?)
    }
}
