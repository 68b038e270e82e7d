//! Central finite-difference verification of tape gradients.

use crate::error::Result;
use crate::graph::{Graph, Mode};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::{Scalar, Tensor};

/// Default step for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Outcome of a gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck<S> {
    /// `max |analytic - numeric| / (|analytic| + 1e-8)` over coordinates.
    pub max_rel_error: S,
    /// Description of the coordinate where the maximum occurred.
    pub worst: String,
    pub coordinates: usize,
}

impl<S: Scalar> GradCheck<S> {
    fn new() -> Self {
        Self {
            max_rel_error: S::zero(),
            worst: String::new(),
            coordinates: 0,
        }
    }

    fn observe(&mut self, analytic: S, numeric: S, at: impl FnOnce() -> String) {
        let err = (analytic - numeric).abs() / (analytic.abs() + S::lit(1e-8));
        self.coordinates += 1;
        if err > self.max_rel_error || self.worst.is_empty() {
            self.max_rel_error = self.max_rel_error.max(err);
            self.worst = format!("{} (analytic {:e}, numeric {:e})", at(), analytic.as_f64(), numeric.as_f64());
        }
    }
}

fn eval_scalar<S: Scalar>(f: &impl Fn(&Tape<S>, Var) -> Result<Var>, x: Tensor<S>) -> Result<S> {
    let tape = Tape::new();
    let v = tape.constant(x)?;
    let out = f(&tape, v)?;
    tape.item(out)
}

/// Compares the tape gradient of scalar `f` at `x` with central differences
/// of step `h`, coordinate by coordinate.
pub fn finite_diff_check<S, F>(f: F, x: &Tensor<S>, h: S) -> Result<GradCheck<S>>
where
    S: Scalar,
    F: Fn(&Tape<S>, Var) -> Result<Var>,
{
    let tape = Tape::new();
    let leaf = tape.leaf(x.clone().with_grad())?;
    let loss = f(&tape, leaf)?;
    let grads = tape.backward(loss)?;
    let analytic = grads.get(leaf).expect("leaf gradient");
    let mut report = GradCheck::new();
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval_scalar(&f, plus)? - eval_scalar(&f, minus)?) / (h + h);
        report.observe(analytic.data()[i], numeric, || format!("input[{i}]"));
    }
    Ok(report)
}

/// Gradient check of a parameterised scalar function with respect to the
/// parameters in `ids` (all parameters when `ids` is empty).
pub fn finite_diff_check_params<S, F>(
    store: &ParamStore<S>,
    ids: &[ParamId],
    mode: Mode,
    f: F,
    h: S,
) -> Result<GradCheck<S>>
where
    S: Scalar,
    F: Fn(&Graph<'_, S>) -> Result<Var>,
{
    let ids: Vec<ParamId> = if ids.is_empty() { store.ids().collect() } else { ids.to_vec() };
    let graph = Graph::new(store, mode).with_param_grads(true);
    let loss = f(&graph)?;
    let grads = graph.param_grads(loss)?;
    let value_at = |s: &ParamStore<S>| -> Result<S> {
        let g = Graph::new(s, mode).with_param_grads(false);
        let out = f(&g)?;
        g.item(out)
    };
    let mut report = GradCheck::new();
    let mut probe = store.clone();
    for &id in &ids {
        let zeros = Tensor::zeros(store.get(id).shape());
        let analytic = grads.get(id).unwrap_or(&zeros);
        for i in 0..store.get(id).numel() {
            let orig = store.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = orig + h;
            let up = value_at(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig - h;
            let down = value_at(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig;
            report.observe(analytic.data()[i], (up - down) / (h + h), || {
                format!("{}[{i}]", store.name(id))
            });
        }
    }
    Ok(report)
}
