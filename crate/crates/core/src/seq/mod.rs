//! Back end: projection of the fused features, conformer encoder, CTC head,
//! attention decoder and the hybrid objective.

pub mod attention;
pub mod conformer;
pub mod ctc;
pub mod decoder;
pub mod loss;

use adavsr_tensor::nn::Linear;
use adavsr_tensor::{Graph, ParamStore, Scalar, Var};
use rand::Rng;

pub use conformer::{ConformerEncoder, EncoderConfig};
pub use ctc::{ctc_loss, ctc_nll, greedy_decode, required_frames, BLANK};
pub use decoder::{Decoder, DecoderConfig};
pub use loss::{attention_loss, combine, combined_loss, DEFAULT_LAMBDA, LABEL_SMOOTHING};

use crate::error::{Error, Result};

/// `[T, 2 D1] -> [T, D1] -> ReLU -> [T, D1 / 2]`.
#[derive(Clone, Debug)]
pub struct ProjectF0 {
    pub first: Linear,
    pub second: Linear,
}

impl ProjectF0 {
    pub fn new<S: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<S>, rng: &mut R, name: &str, d1: usize) -> Result<Self> {
        if d1 % 2 != 0 || d1 == 0 {
            return Err(Error::config(format!("D1 = {d1} must be even")));
        }
        Ok(Self {
            first: Linear::new(store, rng, &format!("{name}.first"), 2 * d1, d1, true),
            second: Linear::new(store, rng, &format!("{name}.second"), d1, d1 / 2, true),
        })
    }

    pub fn forward<S: Scalar>(&self, g: &Graph<'_, S>, fusion: Var) -> Result<Var> {
        let h = g.relu(self.first.forward(g, fusion)?)?;
        Ok(self.second.forward(g, h)?)
    }
}
