//! Visual-guided audio enhancement: cross-modal attention from audio queries
//! to pooled visual keys and values, a three-layer convolutional mask
//! generator, and the residual mask `f ⊙ m + f`.

use adavsr_tensor::nn::{BatchNorm, Conv1d};
use adavsr_tensor::{Graph, ParamId, ParamStore, Scalar, Tape, Var};
use rand::Rng;

use crate::error::{Error, Result};

/// Mean over the spatial axes of `[T, C, H, W]`, giving `[T, C]`.
pub fn spatial_mean<S: Scalar>(g: &Tape<S>, fv: Var) -> Result<Var> {
    let shape = g.shape(fv);
    if shape.len() != 4 {
        return Err(Error::input(format!("visual features must be [T, C, H, W], got {shape:?}")));
    }
    let flat = g.reshape(fv, &[shape[0], shape[1], shape[2] * shape[3]])?;
    Ok(g.mean_axis(flat, 2)?)
}

/// Attention output and the weights that produced it.
#[derive(Clone, Copy, Debug)]
pub struct Attended {
    /// `[T1, D1]`.
    pub context: Var,
    /// `[T1, T1]`, row `t` over visual frames.
    pub weights: Var,
}

/// `softmax((a Wq)(v Wk)ᵀ / √D1) (v Wv)` for audio `[T1, C1]` and pooled
/// visual `[T1, C1]`.
pub fn cross_modal_attention<S: Scalar>(g: &Tape<S>, audio: Var, visual: Var, wq: Var, wk: Var, wv: Var) -> Result<Attended> {
    let (sa, sv) = (g.shape(audio), g.shape(visual));
    if sa.len() != 2 || sv.len() != 2 || sa[0] != sv[0] {
        return Err(adavsr_tensor::TensorError::Shape {
            op: "cross_modal_attention",
            lhs: sa,
            rhs: sv,
        }
        .into());
    }
    let q = g.matmul(audio, wq)?;
    let k = g.matmul(visual, wk)?;
    let v = g.matmul(visual, wv)?;
    let d1 = g.shape(q)[1];
    let scores = g.matmul(q, g.transpose(k)?)?;
    let scores = g.scale(scores, S::from_len(d1).sqrt().recip())?;
    let weights = g.softmax(scores, 1)?;
    let context = g.matmul(weights, v)?;
    Ok(Attended { context, weights })
}

/// Three width-3 convolutions, each followed by batch norm:
/// `m0 = ReLU(BN(conv(x)))`, `m = σ(BN(conv(ReLU(BN(conv(m0))))))`.
#[derive(Clone, Debug)]
pub struct MaskGenerator {
    pub convs: [Conv1d; 3],
    pub norms: [BatchNorm; 3],
}

/// Mask generator output.
#[derive(Clone, Copy, Debug)]
pub struct NoiseMask {
    pub m0: Var,
    pub m: Var,
}

impl MaskGenerator {
    pub fn new<S: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<S>, rng: &mut R, name: &str, d1: usize) -> Self {
        let conv = |store: &mut ParamStore<S>, rng: &mut R, i: usize| {
            Conv1d::new(store, rng, &format!("{name}.conv{i}"), d1, d1, 3, 1, 1, true)
        };
        let convs = [conv(store, rng, 0), conv(store, rng, 1), conv(store, rng, 2)];
        let norms = [0, 1, 2].map(|i| BatchNorm::new(store, &format!("{name}.bn{i}"), d1));
        Self { convs, norms }
    }

    pub fn forward<S: Scalar>(&self, g: &Graph<'_, S>, context: Var) -> Result<NoiseMask> {
        let layer = |i: usize, x: Var| -> Result<Var> {
            let y = self.convs[i].forward(g, x)?;
            Ok(self.norms[i].forward(g, y)?)
        };
        let m0 = g.relu(layer(0, context)?)?;
        let h = g.relu(layer(1, m0)?)?;
        let m = g.sigmoid(layer(2, h)?)?;
        Ok(NoiseMask { m0, m })
    }
}

/// `f ⊙ m + f`, each element rounded once.
pub fn apply_mask<S: Scalar>(g: &Tape<S>, f: Var, m: Var) -> Result<Var> {
    Ok(g.mul_add(f, m, f)?)
}

#[derive(Clone, Debug)]
pub struct Cmnsm {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub mask: MaskGenerator,
}

/// Everything the module computes for one sample.
#[derive(Clone, Copy, Debug)]
pub struct CmnsmOutput {
    pub enhanced: Var,
    pub attention: Attended,
    pub mask: NoiseMask,
}

impl Cmnsm {
    pub fn new<S: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<S>, rng: &mut R, name: &str, c1: usize, d1: usize) -> Self {
        let mut w = |n: &str| store.add_uniform(format!("{name}.{n}"), &[c1, d1], c1, rng);
        let (wq, wk, wv) = (w("wq"), w("wk"), w("wv"));
        Self {
            wq,
            wk,
            wv,
            mask: MaskGenerator::new(store, rng, &format!("{name}.mask"), d1),
        }
    }

    /// `audio` is `[T1, C1]`; `visual` is the spatial feature map `[T1, C1, H1, W1]`.
    pub fn forward<S: Scalar>(&self, g: &Graph<'_, S>, audio: Var, visual: Var) -> Result<CmnsmOutput> {
        let pooled = spatial_mean(g, visual)?;
        let attention = cross_modal_attention(g, audio, pooled, g.param(self.wq)?, g.param(self.wk)?, g.param(self.wv)?)?;
        let mask = self.mask.forward(g, attention.context)?;
        let enhanced = apply_mask(g, audio, mask.m)?;
        Ok(CmnsmOutput {
            enhanced,
            attention,
            mask,
        })
    }
}
