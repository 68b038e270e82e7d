//! Threshold-based pair selection between the enhanced audio and visual
//! sequences: BiLSTM context, all-pair strengths, pruning, aggregation and
//! sum fusion.

use adavsr_tensor::nn::{LayerNorm, Linear};
use adavsr_tensor::{Graph, ParamId, ParamStore, Scalar, Tape, Tensor, Var};
use rand::Rng;

use crate::error::Result;

pub const DEFAULT_TAU: f64 = 0.095;

/// One LSTM direction with gate order input, forget, cell, output.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<S: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<S>, rng: &mut R, name: &str, input: usize, hidden: usize) -> Self {
        let w_ih = store.add_uniform(format!("{name}.w_ih"), &[input, 4 * hidden], hidden, rng);
        let w_hh = store.add_uniform(format!("{name}.w_hh"), &[hidden, 4 * hidden], hidden, rng);
        let bias = Tensor::from_fn(&[4 * hidden], |i| {
            if (hidden..2 * hidden).contains(&i) {
                S::one()
            } else {
                S::zero()
            }
        });
        let bias = store.add(format!("{name}.bias"), bias);
        Self { w_ih, w_hh, bias, hidden }
    }

    /// Hidden states `[T, H]` in input order, scanning backwards when `reverse`.
    pub fn run<S: Scalar>(&self, g: &Graph<'_, S>, x: Var, reverse: bool) -> Result<Var> {
        let t_len = g.shape(x)[0];
        let h_dim = self.hidden;
        let xw = g.add_bias(g.matmul(x, g.param(self.w_ih)?)?, g.param(self.bias)?)?;
        let w_hh = g.param(self.w_hh)?;
        let mut h = g.constant(Tensor::zeros(&[1, h_dim]))?;
        let mut c = h;
        let mut outs = vec![h; t_len];
        let order: Vec<usize> = if reverse { (0..t_len).rev().collect() } else { (0..t_len).collect() };
        for t in order {
            let gates = g.add(g.row(xw, t)?, g.matmul(h, w_hh)?)?;
            let gate = |i: usize| g.narrow(gates, 1, i * h_dim, h_dim);
            let i = g.sigmoid(gate(0)?)?;
            let f = g.sigmoid(gate(1)?)?;
            let cand = g.tanh(gate(2)?)?;
            let o = g.sigmoid(gate(3)?)?;
            c = g.add(g.mul(f, c)?, g.mul(i, cand)?)?;
            h = g.mul(o, g.tanh(c)?)?;
            outs[t] = h;
        }
        Ok(g.concat(&outs, 0)?)
    }
}

/// Forward and backward LSTMs concatenated per step: `[T, D] -> [T, 2H]`.
#[derive(Clone, Debug)]
pub struct BiLstm {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

impl BiLstm {
    pub fn new<S: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<S>, rng: &mut R, name: &str, input: usize, hidden: usize) -> Self {
        Self {
            forward: LstmCell::new(store, rng, &format!("{name}.fwd"), input, hidden),
            backward: LstmCell::new(store, rng, &format!("{name}.bwd"), input, hidden),
        }
    }

    pub fn run<S: Scalar>(&self, g: &Graph<'_, S>, x: Var) -> Result<Var> {
        let f = self.forward.run(g, x, false)?;
        let b = self.backward.run(g, x, true)?;
        Ok(g.concat(&[f, b], 1)?)
    }
}

/// `β^va = (v W1v)(a W1a)ᵀ / √width` and `β^av = (β^va)ᵀ`.
pub fn connection_strength<S: Scalar>(g: &Tape<S>, v: Var, a: Var, w1v: Var, w1a: Var) -> Result<(Var, Var)> {
    let pv = g.matmul(v, w1v)?;
    let pa = g.matmul(a, w1a)?;
    let width = g.shape(pv)[1];
    let raw = g.matmul(pv, g.transpose(pa)?)?;
    let beta_va = g.scale(raw, S::from_len(width).sqrt().recip())?;
    let beta_av = g.transpose(beta_va)?;
    Ok((beta_va, beta_av))
}

/// ReLU, row L1 normalisation, drop entries below `tau`, normalise again.
/// Rows with nothing left stay zero.
pub fn prune_normalize<S: Scalar>(g: &Tape<S>, beta: Var, tau: S) -> Result<Var> {
    let pos = g.relu(beta)?;
    let norm = g.l1_normalize_rows(pos)?;
    let kept = g.threshold(norm, tau)?;
    Ok(g.l1_normalize_rows(kept)?)
}

/// `a_psp = γ^av (v W2v) + a`, `v_psp = γ^va (a W2a) + v`.
#[allow(clippy::too_many_arguments)]
pub fn aggregate<S: Scalar>(
    g: &Tape<S>,
    a: Var,
    v: Var,
    gamma_va: Var,
    gamma_av: Var,
    w2v: Var,
    w2a: Var,
) -> Result<(Var, Var)> {
    let v_pos = g.matmul(gamma_av, g.matmul(v, w2v)?)?;
    let a_pos = g.matmul(gamma_va, g.matmul(a, w2a)?)?;
    Ok((g.add(v_pos, a)?, g.add(a_pos, v)?))
}

#[derive(Clone, Debug)]
pub struct Tbsm {
    pub norm_a: LayerNorm,
    pub norm_v: LayerNorm,
    pub lstm_a: BiLstm,
    pub lstm_v: BiLstm,
    pub w1v: ParamId,
    pub w1a: ParamId,
    pub w2v: ParamId,
    pub w2a: ParamId,
    pub fuse_a: Linear,
    pub fuse_v: Linear,
    pub tau: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct TbsmOutput {
    /// `[T1, 2 D1]`.
    pub fusion: Var,
    pub beta_va: Var,
    pub gamma_va: Var,
    pub gamma_av: Var,
}

impl Tbsm {
    pub fn new<S: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<S>, rng: &mut R, name: &str, d1: usize, tau: f64) -> Self {
        let w = 2 * d1;
        let (w1v, w1a) = (
            store.add_uniform(format!("{name}.w1v"), &[w, w], w, rng),
            store.add_uniform(format!("{name}.w1a"), &[w, w], w, rng),
        );
        // zero aggregation weights: training starts from the identity fallback
        let w2v = store.add(format!("{name}.w2v"), Tensor::zeros(&[w, w]));
        let w2a = store.add(format!("{name}.w2a"), Tensor::zeros(&[w, w]));
        Self {
            norm_a: LayerNorm::new(store, &format!("{name}.norm_a"), d1),
            norm_v: LayerNorm::new(store, &format!("{name}.norm_v"), d1),
            lstm_a: BiLstm::new(store, rng, &format!("{name}.lstm_a"), d1, d1),
            lstm_v: BiLstm::new(store, rng, &format!("{name}.lstm_v"), d1, d1),
            w1v,
            w1a,
            w2v,
            w2a,
            fuse_a: Linear::new(store, rng, &format!("{name}.fuse_a"), w, w, true),
            fuse_v: Linear::new(store, rng, &format!("{name}.fuse_v"), w, w, true),
            tau,
        }
    }

    pub fn forward<S: Scalar>(&self, g: &Graph<'_, S>, audio: Var, visual: Var) -> Result<TbsmOutput> {
        let a = self.lstm_a.run(g, self.norm_a.forward(g, audio)?)?;
        let v = self.lstm_v.run(g, self.norm_v.forward(g, visual)?)?;
        let (beta_va, beta_av) = connection_strength(g, v, a, g.param(self.w1v)?, g.param(self.w1a)?)?;
        let tau = S::lit(self.tau);
        let gamma_va = prune_normalize(g, beta_va, tau)?;
        let gamma_av = prune_normalize(g, beta_av, tau)?;
        let (a_psp, v_psp) = aggregate(g, a, v, gamma_va, gamma_av, g.param(self.w2v)?, g.param(self.w2a)?)?;
        let fusion = g.add(self.fuse_a.forward(g, a_psp)?, self.fuse_v.forward(g, v_psp)?)?;
        Ok(TbsmOutput {
            fusion,
            beta_va,
            gamma_va,
            gamma_av,
        })
    }
}
