//! Connectionist temporal classification: log-space forward recursion for
//! the loss and the forward-backward posterior for its gradient.

use adavsr_tensor::{CustomBackward, Scalar, Tape, Tensor, TensorError, Var};

use crate::error::Result;

pub const BLANK: usize = 0;

fn log_add<S: Scalar>(a: S, b: S) -> S {
    if a == S::neg_infinity() {
        return b;
    }
    if b == S::neg_infinity() {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Frames needed to emit `target`: one per label plus a blank between
/// each pair of equal neighbours.
pub fn required_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Blank-interleaved label sequence `[b, y1, b, y2, ..., b]`.
fn extended(target: &[usize], blank: usize) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(blank);
    for &y in target {
        ext.push(y);
        ext.push(blank);
    }
    ext
}

/// Whether state `s` may be entered directly from `s - 2`.
fn can_skip(ext: &[usize], s: usize, blank: usize) -> bool {
    s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]
}

/// Log forward variables `alpha[t][s]` (emission at `t` included).
fn forward_vars<S: Scalar>(lp: &Tensor<S>, ext: &[usize], blank: usize) -> Vec<Vec<S>> {
    let (t_len, n) = (lp.dim(0), ext.len());
    let ninf = S::neg_infinity();
    let mut alpha = vec![vec![ninf; n]; t_len];
    alpha[0][0] = lp.at(&[0, ext[0]]);
    if n > 1 {
        alpha[0][1] = lp.at(&[0, ext[1]]);
    }
    for t in 1..t_len {
        for s in 0..n {
            let mut acc = alpha[t - 1][s];
            if s >= 1 {
                acc = log_add(acc, alpha[t - 1][s - 1]);
            }
            if can_skip(ext, s, blank) {
                acc = log_add(acc, alpha[t - 1][s - 2]);
            }
            if acc != ninf {
                alpha[t][s] = acc + lp.at(&[t, ext[s]]);
            }
        }
    }
    alpha
}

/// Log backward variables `beta[t][s]` (emission at `t` excluded).
fn backward_vars<S: Scalar>(lp: &Tensor<S>, ext: &[usize], blank: usize) -> Vec<Vec<S>> {
    let (t_len, n) = (lp.dim(0), ext.len());
    let ninf = S::neg_infinity();
    let mut beta = vec![vec![ninf; n]; t_len];
    beta[t_len - 1][n - 1] = S::zero();
    if n > 1 {
        beta[t_len - 1][n - 2] = S::zero();
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..n {
            let mut acc = ninf;
            for next in s..(s + 3).min(n) {
                let allowed = next <= s + 1 || can_skip(ext, next, blank);
                if allowed && beta[t + 1][next] != ninf {
                    acc = log_add(acc, beta[t + 1][next] + lp.at(&[t + 1, ext[next]]));
                }
            }
            beta[t][s] = acc;
        }
    }
    beta
}

fn total_log_prob<S: Scalar>(alpha: &[Vec<S>]) -> S {
    let last = alpha.last().expect("at least one frame");
    let n = last.len();
    if n > 1 {
        log_add(last[n - 1], last[n - 2])
    } else {
        last[0]
    }
}

/// `-log p(target | log_probs)` for `[T, V]` per-frame log-probabilities.
/// Infeasible targets give `+∞`.
pub fn ctc_nll<S: Scalar>(log_probs: &Tensor<S>, target: &[usize], blank: usize) -> S {
    if log_probs.rank() != 2 || required_frames(target) > log_probs.dim(0) {
        return S::infinity();
    }
    let ext = extended(target, blank);
    -total_log_prob(&forward_vars(log_probs, &ext, blank))
}

/// Gradient of [`ctc_nll`] with respect to each log-probability.
pub fn ctc_grad<S: Scalar>(log_probs: &Tensor<S>, target: &[usize], blank: usize) -> Vec<S> {
    let ext = extended(target, blank);
    let alpha = forward_vars(log_probs, &ext, blank);
    let beta = backward_vars(log_probs, &ext, blank);
    let log_p = total_log_prob(&alpha);
    let v = log_probs.dim(1);
    let mut grad = vec![S::zero(); log_probs.numel()];
    for t in 0..log_probs.dim(0) {
        for (s, &label) in ext.iter().enumerate() {
            let joint = alpha[t][s] + beta[t][s];
            if joint != S::neg_infinity() {
                grad[t * v + label] -= (joint - log_p).exp();
            }
        }
    }
    grad
}

struct CtcRule {
    target: Vec<usize>,
    blank: usize,
}

impl<S: Scalar> CustomBackward<S> for CtcRule {
    fn name(&self) -> &'static str {
        "ctc_loss"
    }

    fn backward(&self, inputs: &[&Tensor<S>], _output: &Tensor<S>, grad: &[S]) -> Vec<Option<Vec<S>>> {
        let upstream = grad[0];
        let g = ctc_grad(inputs[0], &self.target, self.blank);
        vec![Some(g.into_iter().map(|x| x * upstream).collect())]
    }
}

/// Recorded CTC loss over `log_probs [T, V]`.
pub fn ctc_loss<S: Scalar>(g: &Tape<S>, log_probs: Var, target: &[usize], blank: usize) -> Result<Var> {
    let value = {
        let lp = g.value(log_probs);
        if lp.rank() != 2 {
            return Err(TensorError::Dimension {
                op: "ctc_loss",
                msg: format!("log-probs must be [T, V], got {:?}", lp.shape()),
            }
            .into());
        }
        if let Some(&bad) = target.iter().find(|&&y| y >= lp.dim(1) || y == blank) {
            return Err(TensorError::Dimension {
                op: "ctc_loss",
                msg: format!("target id {bad} is blank or outside the vocabulary"),
            }
            .into());
        }
        let required = required_frames(target);
        if required > lp.dim(0) {
            return Err(TensorError::InfeasibleAlignment {
                required,
                frames: lp.dim(0),
            }
            .into());
        }
        ctc_nll(&lp, target, blank)
    };
    let rule = CtcRule {
        target: target.to_vec(),
        blank,
    };
    Ok(g.custom(&[log_probs], Tensor::scalar(value), Box::new(rule))?)
}

/// Per-frame argmax, repeats collapsed, blanks dropped.
pub fn greedy_decode<S: Scalar>(log_probs: &Tensor<S>, blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for t in 0..log_probs.dim(0) {
        let row = log_probs.row(t);
        let best = row
            .iter()
            .enumerate()
            .fold(0, |best, (i, &x)| if x > row[best] { i } else { best });
        if Some(best) != prev && best != blank {
            out.push(best);
        }
        prev = Some(best);
    }
    out
}
