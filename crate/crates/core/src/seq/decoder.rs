use adavsr_tensor::nn::{LayerNorm, Linear};
use adavsr_tensor::{Graph, ParamId, ParamStore, Scalar, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::attention::{causal_mask, positional_encoding, FeedForward, MultiHeadAttention};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub layers: usize,
    pub width: usize,
    pub heads: usize,
    pub ff: usize,
    pub vocab: usize,
}

#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub self_attn: (LayerNorm, MultiHeadAttention),
    pub cross_attn: (LayerNorm, MultiHeadAttention),
    pub ff: (LayerNorm, FeedForward),
}

impl DecoderLayer {
    fn forward<S: Scalar>(&self, g: &Graph<'_, S>, x: Var, memory: Var, mask: Var) -> Result<Var> {
        let n = self.self_attn.0.forward(g, x)?;
        let x = g.add(x, self.self_attn.1.forward(g, n, n, Some(mask))?)?;
        let n = self.cross_attn.0.forward(g, x)?;
        let x = g.add(x, self.cross_attn.1.forward(g, n, memory, None)?)?;
        let n = self.ff.0.forward(g, x)?;
        Ok(g.add(x, self.ff.1.forward(g, n)?)?)
    }
}

/// Pre-norm transformer decoder with causal self-attention and
/// cross-attention to the encoder output.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub embedding: ParamId,
    pub layers: Vec<DecoderLayer>,
    pub norm: LayerNorm,
    pub head: Linear,
    pub width: usize,
}

impl Decoder {
    pub fn new<S: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<S>, rng: &mut R, name: &str, cfg: &DecoderConfig) -> Result<Self> {
        if cfg.vocab < 2 {
            return Err(Error::config("decoder vocabulary needs at least two symbols"));
        }
        let w = cfg.width;
        let mut layers = Vec::with_capacity(cfg.layers);
        for i in 0..cfg.layers {
            let p = format!("{name}.layer{i}");
            layers.push(DecoderLayer {
                self_attn: (
                    LayerNorm::new(store, &format!("{p}.self_ln"), w),
                    MultiHeadAttention::new(store, rng, &format!("{p}.self"), w, cfg.heads)?,
                ),
                cross_attn: (
                    LayerNorm::new(store, &format!("{p}.cross_ln"), w),
                    MultiHeadAttention::new(store, rng, &format!("{p}.cross"), w, cfg.heads)?,
                ),
                ff: (
                    LayerNorm::new(store, &format!("{p}.ff_ln"), w),
                    FeedForward::new(store, rng, &format!("{p}.ff"), w, cfg.ff),
                ),
            });
        }
        Ok(Self {
            embedding: store.add_uniform(format!("{name}.embedding"), &[cfg.vocab, w], 1, rng),
            layers,
            norm: LayerNorm::new(store, &format!("{name}.norm"), w),
            head: Linear::new(store, rng, &format!("{name}.head"), w, cfg.vocab, true),
            width: w,
        })
    }

    /// Logits `[L, V]` for the shifted target `tokens` (length `L`).
    pub fn forward<S: Scalar>(&self, g: &Graph<'_, S>, memory: Var, tokens: &[usize]) -> Result<Var> {
        if tokens.is_empty() {
            return Err(Error::input("decoder input must hold at least one token"));
        }
        let len = tokens.len();
        let emb = g.gather_rows(g.param(self.embedding)?, tokens)?;
        let mut x = g.add(emb, g.constant(positional_encoding(len, self.width))?)?;
        let mask = g.constant(causal_mask(len))?;
        for layer in &self.layers {
            x = layer.forward(g, x, memory, mask)?;
        }
        let x = self.norm.forward(g, x)?;
        Ok(self.head.forward(g, x)?)
    }
}
