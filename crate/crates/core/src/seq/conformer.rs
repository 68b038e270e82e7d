use adavsr_tensor::nn::{LayerNorm, Linear};
use adavsr_tensor::{Graph, ParamId, ParamStore, Scalar, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::attention::{positional_encoding, FeedForward, MultiHeadAttention};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub width: usize,
    pub heads: usize,
    pub kernel: usize,
    pub ff: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.width % self.heads != 0 {
            return Err(Error::config(format!(
                "encoder width {} is not divisible by {} heads",
                self.width, self.heads
            )));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::config(format!("conv kernel {} must be odd", self.kernel)));
        }
        Ok(())
    }
}

/// Pointwise expansion, GLU, depthwise convolution, swish, pointwise.
#[derive(Clone, Debug)]
pub struct ConvModule {
    pub expand: Linear,
    pub depthwise: ParamId,
    pub project: Linear,
    pub width: usize,
}

impl ConvModule {
    pub fn new<S: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<S>, rng: &mut R, name: &str, width: usize, kernel: usize) -> Self {
        Self {
            expand: Linear::new(store, rng, &format!("{name}.expand"), width, 2 * width, true),
            depthwise: store.add_uniform(format!("{name}.depthwise"), &[kernel, width], kernel, rng),
            project: Linear::new(store, rng, &format!("{name}.project"), width, width, true),
            width,
        }
    }

    pub fn forward<S: Scalar>(&self, g: &Graph<'_, S>, x: Var) -> Result<Var> {
        let h = self.expand.forward(g, x)?;
        let value = g.narrow(h, 1, 0, self.width)?;
        let gate = g.sigmoid(g.narrow(h, 1, self.width, self.width)?)?;
        let h = g.mul(value, gate)?;
        let kernel = g.param(self.depthwise)?;
        let pad = g.shape(kernel)[0] / 2;
        let h = g.swish(g.depthwise_conv1d(h, kernel, pad)?)?;
        Ok(self.project.forward(g, h)?)
    }
}

#[derive(Clone, Debug)]
pub struct ConformerBlock {
    pub ff1: (LayerNorm, FeedForward),
    pub attn: (LayerNorm, MultiHeadAttention),
    pub conv: (LayerNorm, ConvModule),
    pub ff2: (LayerNorm, FeedForward),
    pub out: LayerNorm,
}

impl ConformerBlock {
    pub fn new<S: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<S>, rng: &mut R, name: &str, cfg: &EncoderConfig) -> Result<Self> {
        let ln = |store: &mut ParamStore<S>, n: &str| LayerNorm::new(store, &format!("{name}.{n}"), cfg.width);
        Ok(Self {
            ff1: (ln(store, "ff1_ln"), FeedForward::new(store, rng, &format!("{name}.ff1"), cfg.width, cfg.ff)),
            attn: (
                ln(store, "attn_ln"),
                MultiHeadAttention::new(store, rng, &format!("{name}.attn"), cfg.width, cfg.heads)?,
            ),
            conv: (ln(store, "conv_ln"), ConvModule::new(store, rng, &format!("{name}.conv"), cfg.width, cfg.kernel)),
            ff2: (ln(store, "ff2_ln"), FeedForward::new(store, rng, &format!("{name}.ff2"), cfg.width, cfg.ff)),
            out: ln(store, "out_ln"),
        })
    }

    pub fn forward<S: Scalar>(&self, g: &Graph<'_, S>, x: Var) -> Result<Var> {
        let half = S::lit(0.5);
        let h = self.ff1.1.forward(g, self.ff1.0.forward(g, x)?)?;
        let x = g.add(x, g.scale(h, half)?)?;
        let n = self.attn.0.forward(g, x)?;
        let x = g.add(x, self.attn.1.forward(g, n, n, None)?)?;
        let x = g.add(x, self.conv.1.forward(g, self.conv.0.forward(g, x)?)?)?;
        let h = self.ff2.1.forward(g, self.ff2.0.forward(g, x)?)?;
        let x = g.add(x, g.scale(h, half)?)?;
        Ok(self.out.forward(g, x)?)
    }
}

/// Sinusoidal positions followed by a stack of conformer blocks; shape
/// preserving `[T, width]`.
#[derive(Clone, Debug)]
pub struct ConformerEncoder {
    pub blocks: Vec<ConformerBlock>,
    pub width: usize,
}

impl ConformerEncoder {
    pub fn new<S: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<S>, rng: &mut R, name: &str, cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let blocks = (0..cfg.layers)
            .map(|i| ConformerBlock::new(store, rng, &format!("{name}.block{i}"), cfg))
            .collect::<Result<_>>()?;
        Ok(Self {
            blocks,
            width: cfg.width,
        })
    }

    pub fn forward<S: Scalar>(&self, g: &Graph<'_, S>, x: Var) -> Result<Var> {
        let t = g.shape(x)[0];
        let pe = g.constant(positional_encoding(t, self.width))?;
        let mut h = g.add(x, pe)?;
        for block in &self.blocks {
            h = block.forward(g, h)?;
        }
        Ok(h)
    }
}
