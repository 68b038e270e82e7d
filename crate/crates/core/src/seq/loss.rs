use adavsr_tensor::{Scalar, Tape, Tensor, Var};

use crate::error::{Error, Result};

pub const LABEL_SMOOTHING: f64 = 0.1;
pub const DEFAULT_LAMBDA: f64 = 0.9;

/// Smoothed target distribution: `1 - ε` on the label, `ε / (V - 1)` elsewhere.
pub fn smoothed_targets<S: Scalar>(target: &[usize], vocab: usize, smoothing: f64) -> Tensor<S> {
    let off = if vocab > 1 { smoothing / (vocab - 1) as f64 } else { 0.0 };
    Tensor::from_fn(&[target.len(), vocab], |i| {
        let (l, v) = (i / vocab, i % vocab);
        S::lit(if v == target[l] { 1.0 - smoothing } else { off })
    })
}

/// Mean over tokens of `KL(q_l || softmax(logits_l))` with `q` the smoothed
/// one-hot target. Equals plain cross-entropy when `smoothing` is zero.
pub fn attention_loss<S: Scalar>(g: &Tape<S>, logits: Var, target: &[usize], smoothing: f64) -> Result<Var> {
    let shape = g.shape(logits);
    if shape.len() != 2 || shape[0] != target.len() || target.is_empty() {
        return Err(Error::input(format!(
            "logits {shape:?} do not match a target of {} tokens",
            target.len()
        )));
    }
    if !(0.0..1.0).contains(&smoothing) {
        return Err(Error::config(format!("label smoothing {smoothing} outside [0, 1)")));
    }
    let vocab = shape[1];
    if let Some(&bad) = target.iter().find(|&&y| y >= vocab) {
        return Err(Error::input(format!("target id {bad} outside vocabulary of {vocab}")));
    }
    let q = smoothed_targets::<S>(target, vocab, smoothing);
    // 0 log 0 = 0
    let neg_entropy: S = q.data().iter().filter(|&&p| p > S::zero()).map(|&p| p * p.ln()).sum();
    let log_p = g.log_softmax(logits, 1)?;
    let cross = g.sum(g.mul(g.constant(q)?, log_p)?)?;
    let inv_len = S::from_len(target.len()).recip();
    let kl = g.add_scalar(g.scale(cross, -S::one())?, neg_entropy)?;
    Ok(g.scale(kl, inv_len)?)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::config(format!("lambda {lambda} outside [0, 1]")));
    }
    Ok(())
}

/// `λ · att + (1 - λ) · ctc` on plain numbers.
pub fn combine(ctc: f64, att: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(lambda * att + (1.0 - lambda) * ctc)
}

/// Recorded `λ · att + (1 - λ) · ctc`.
pub fn combined_loss<S: Scalar>(g: &Tape<S>, ctc: Var, att: Var, lambda: f64) -> Result<Var> {
    check_lambda(lambda)?;
    let a = g.scale(att, S::lit(lambda))?;
    let c = g.scale(ctc, S::lit(1.0 - lambda))?;
    Ok(g.add(a, c)?)
}
