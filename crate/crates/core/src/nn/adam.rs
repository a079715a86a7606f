use alloc::vec::Vec;

use super::{ParamSet, Tensor};

/// Adam hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self { lr: 0.01, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates, one buffer per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn zeros(params: &ParamSet) -> Self {
        let m: Vec<Vec<f64>> = params.iter().map(|p| alloc::vec![0.0; p.tensor.len()]).collect();
        Self { v: m.clone(), m, step: 0 }
    }
}

impl Adam {
    /// One bias-corrected update of every parameter in place.
    pub fn step(&self, params: &mut ParamSet, grads: &[Tensor], state: &mut AdamState) {
        state.step += 1;
        let t = state.step as i32;
        let c1 = 1.0 - libm::pow(self.beta1, t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, t as f64);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
            for (((w, &gi), mi), vi) in p.tensor.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w -= self.lr * mhat / (libm::sqrt(vhat) + self.eps);
            }
        }
    }
}
