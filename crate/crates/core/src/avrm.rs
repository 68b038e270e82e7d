//! Audio-guided visual refinement: additive attention over a √k × √k grid
//! of pooled regions in every frame, queried by the audio features.

use adavsr_tensor::nn::{linear, Linear};
use adavsr_tensor::{Graph, ParamId, ParamStore, Scalar, Tape, Var};
use rand::Rng;

use crate::error::{Error, Result};

/// Side length of the region grid for `k` regions.
pub fn grid_side(k: usize) -> Result<usize> {
    let side = (k as f64).sqrt().round() as usize;
    if side == 0 || side * side != k {
        return Err(Error::config(format!("region count {k} is not a positive perfect square")));
    }
    Ok(side)
}

/// `[T, C, H, W]` to `[T, k, C]`, region `i` being the mean of grid cell
/// `(i / √k, i % √k)`.
pub fn partition_regions<S: Scalar>(g: &Tape<S>, fv: Var, k: usize) -> Result<Var> {
    let side = grid_side(k)?;
    let shape = g.shape(fv);
    if shape.len() != 4 || shape[2] % side != 0 || shape[3] % side != 0 {
        return Err(Error::input(format!(
            "feature map {shape:?} cannot be split into a {side}x{side} grid"
        )));
    }
    Ok(g.region_pool(fv, side)?)
}

/// Region weights `[T, k]`: `softmax_i(tanh(R_i W1 + a W2) · w3)`.
pub fn region_attention<S: Scalar>(g: &Tape<S>, audio: Var, regions: Var, w1: Var, w2: Var, w3: Var) -> Result<Var> {
    let (sa, sr) = (g.shape(audio), g.shape(regions));
    if sa.len() != 2 || sr.len() != 3 || sa[0] != sr[0] {
        return Err(adavsr_tensor::TensorError::Shape {
            op: "region_attention",
            lhs: sa,
            rhs: sr,
        }
        .into());
    }
    let (t, k) = (sr[0], sr[1]);
    let d_att = g.shape(w1)[1];
    let r = linear(g, regions, w1, None)?;
    // the audio term is copied unchanged to all k rows of each frame
    let a = g.matmul(audio, w2)?;
    let a = g.reshape(g.broadcast_rows(a, k)?, &[t, k, d_att])?;
    let h = g.tanh(g.add(r, a)?)?;
    let w3 = g.reshape(w3, &[d_att, 1])?;
    let scores = g.reshape(linear(g, h, w3, None)?, &[t, k])?;
    Ok(g.softmax(scores, 1)?)
}

/// `Σ_i w_t^i R_t^i`, giving `[T, C]`.
pub fn weighted_regions<S: Scalar>(g: &Tape<S>, weights: Var, regions: Var) -> Result<Var> {
    let sr = g.shape(regions);
    let w = g.reshape(weights, &[sr[0], 1, sr[1]])?;
    let pooled = g.bmm(w, regions)?;
    Ok(g.reshape(pooled, &[sr[0], sr[2]])?)
}

#[derive(Clone, Debug)]
pub struct Avrm {
    pub w1: ParamId,
    pub w2: ParamId,
    pub w3: ParamId,
    pub proj: Linear,
    pub k: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct AvrmOutput {
    /// `[T1, D1]`.
    pub enhanced: Var,
    /// `[T1, k]`.
    pub weights: Var,
    /// Convex combination of regions before the projection, `[T1, C1]`.
    pub pooled: Var,
}

impl Avrm {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        name: &str,
        c1: usize,
        d1: usize,
        k: usize,
        d_att: usize,
    ) -> Self {
        Self {
            w1: store.add_uniform(format!("{name}.w1"), &[c1, d_att], c1, rng),
            w2: store.add_uniform(format!("{name}.w2"), &[c1, d_att], c1, rng),
            w3: store.add_uniform(format!("{name}.w3"), &[d_att], d_att, rng),
            proj: Linear::new(store, rng, &format!("{name}.proj"), c1, d1, true),
            k,
        }
    }

    pub fn forward<S: Scalar>(&self, g: &Graph<'_, S>, audio: Var, visual: Var) -> Result<AvrmOutput> {
        let regions = partition_regions(g, visual, self.k)?;
        let weights = region_attention(g, audio, regions, g.param(self.w1)?, g.param(self.w2)?, g.param(self.w3)?)?;
        let pooled = weighted_regions(g, weights, regions)?;
        let enhanced = self.proj.forward(g, pooled)?;
        Ok(AvrmOutput {
            enhanced,
            weights,
            pooled,
        })
    }
}
