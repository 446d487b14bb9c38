use alloc::vec::Vec;

use super::params::{ParamId, ParamStore};
use super::tensor::Scalar;

/// RMSProp without momentum or weight decay.
///
/// `v ← α·v + (1−α)·g²`, `p ← p − lr·g / (√v + ε)`; gradients are zeroed after
/// each step.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsPropState<S = f32> {
    pub learning_rate: f64,
    pub alpha: f64,
    pub epsilon: f64,
    params: Vec<ParamId>,
    square_avg: Vec<Vec<S>>,
}

impl<S: Scalar> RmsPropState<S> {
    pub fn new(
        store: &ParamStore<S>,
        params: Vec<ParamId>,
        learning_rate: f64,
        alpha: f64,
        epsilon: f64,
    ) -> Self {
        let square_avg = params
            .iter()
            .map(|&id| alloc::vec![S::zero(); store.value(id).len()])
            .collect();
        Self {
            learning_rate,
            alpha,
            epsilon,
            params,
            square_avg,
        }
    }

    pub fn params(&self) -> &[ParamId] {
        &self.params
    }

    pub fn square_avg(&self, id: ParamId) -> Option<&[S]> {
        self.params
            .iter()
            .position(|&p| p == id)
            .map(|i| self.square_avg[i].as_slice())
    }

    pub fn step(&mut self, store: &mut ParamStore<S>) {
        let lr = S::of(self.learning_rate);
        let a = S::of(self.alpha);
        let one_minus_a = S::of(1.0 - self.alpha);
        let eps = S::of(self.epsilon);
        for (&id, v) in self.params.iter().zip(self.square_avg.iter_mut()) {
            let p = store.get_mut(id);
            let (values, grads) = (p.value.data_mut(), p.grad.data_mut());
            for ((w, g), vi) in values.iter_mut().zip(grads.iter_mut()).zip(v.iter_mut()) {
                *vi = a * *vi + one_minus_a * *g * *g;
                *w -= lr * *g / (vi.sqrt() + eps);
                *g = S::zero();
            }
        }
    }
}
