//! A tape bound to a parameter store for one forward/backward pass.

use std::cell::RefCell;
use std::collections::HashMap;
use std::ops::Deref;

use crate::error::Result;
use crate::params::{BufferId, ParamGrads, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running-stat updates, gradients recorded.
    Train,
    /// Running statistics; no gradients.
    Eval,
}

pub struct Graph<'p, S: Scalar> {
    tape: Tape<S>,
    params: &'p ParamStore<S>,
    mode: Mode,
    record_grads: bool,
    leaves: RefCell<HashMap<ParamId, Var>>,
    stat_updates: RefCell<Vec<(BufferId, Vec<S>)>>,
}

impl<S: Scalar> Deref for Graph<'_, S> {
    type Target = Tape<S>;

    fn deref(&self) -> &Tape<S> {
        &self.tape
    }
}

impl<'p, S: Scalar> Graph<'p, S> {
    pub fn new(params: &'p ParamStore<S>, mode: Mode) -> Self {
        Self {
            tape: Tape::new(),
            params,
            mode,
            record_grads: mode == Mode::Train,
            leaves: RefCell::new(HashMap::new()),
            stat_updates: RefCell::new(Vec::new()),
        }
    }

    /// Overrides whether parameters carry gradients (e.g. gradient checks
    /// of eval-mode paths).
    pub fn with_param_grads(mut self, on: bool) -> Self {
        self.record_grads = on;
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_training(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn params(&self) -> &'p ParamStore<S> {
        self.params
    }

    pub fn tape(&self) -> &Tape<S> {
        &self.tape
    }

    /// Leaf for parameter `id`, recorded once per graph.
    pub fn param(&self, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.leaves.borrow().get(&id) {
            return Ok(v);
        }
        let mut t = self.params.get(id).clone();
        t.set_requires_grad(self.record_grads);
        let v = self.tape.leaf(t)?;
        self.leaves.borrow_mut().insert(id, v);
        Ok(v)
    }

    pub fn buffer(&self, id: BufferId) -> &'p [S] {
        self.params.buffer(id).data()
    }

    pub fn record_buffer_update(&self, id: BufferId, values: Vec<S>) {
        self.stat_updates.borrow_mut().push((id, values));
    }

    /// Running-statistic updates made during this pass, in call order.
    pub fn take_buffer_updates(&self) -> Vec<(BufferId, Vec<S>)> {
        std::mem::take(&mut self.stat_updates.borrow_mut())
    }

    /// Backward from `loss`, collected per parameter.
    pub fn param_grads(&self, loss: Var) -> Result<ParamGrads<S>> {
        let mut grads = self.tape.backward(loss)?;
        let mut out = ParamGrads::empty(self.params.len());
        for (&id, &v) in self.leaves.borrow().iter() {
            let shape = self.params.get(id).shape().to_vec();
            let data = grads.take_raw(v).unwrap_or_else(|| vec![S::zero(); self.params.get(id).numel()]);
            out.set(id, crate::Tensor::from_parts(shape, data));
        }
        Ok(out)
    }
}
