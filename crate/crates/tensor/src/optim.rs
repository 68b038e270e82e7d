use crate::params::{ParamGrads, ParamStore};
use crate::Scalar;

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<S> {
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    step: u64,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(store: &ParamStore<S>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = |_| store.iter().map(|(_, _, t)| vec![S::zero(); t.numel()]).collect();
        Self {
            beta1: S::lit(beta1),
            beta2: S::lit(beta2),
            eps: S::lit(eps),
            step: 0,
            m: zeros(()),
            v: zeros(()),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update with learning rate `lr`; parameters without a gradient
    /// are left untouched.
    pub fn step(&mut self, store: &mut ParamStore<S>, grads: &ParamGrads<S>, lr: S) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = S::one() - self.beta1.powi(t);
        let c2 = S::one() - self.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            let p = store.get_mut(id).data_mut();
            for (((p, &gi), m), v) in p.iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (S::one() - self.beta1) * gi;
                *v = self.beta2 * *v + (S::one() - self.beta2) * gi * gi;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *p -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Noam schedule: `scale * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)`,
/// with `step` counted from 1.
pub fn noam_lr(scale: f64, d_model: usize, warmup: usize, step: u64) -> f64 {
    let step = step.max(1) as f64;
    let warmup = warmup.max(1) as f64;
    scale * (d_model as f64).powf(-0.5) * step.powf(-0.5).min(step * warmup.powf(-1.5))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noam_peaks_at_warmup() {
        let at = |s| noam_lr(1.0, 16, 100, s);
        assert!(at(50) < at(100));
        assert!(at(200) < at(100));
        assert!((at(100) - 0.25 * 0.1).abs() < 1e-15);
        assert_eq!(at(0), at(1));
    }
}
