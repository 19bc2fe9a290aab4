use serde::{Deserialize, Serialize};

use super::ParamSet;
use crate::scalar::Scalar;

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: ParamSet<T>,
    pub v: ParamSet<T>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        Self { m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }
}

impl Adam {
    /// One bias-corrected update. Fails without touching anything when a
    /// gradient is not finite, naming the offending tensor.
    pub fn step<T: Scalar>(&self, params: &mut ParamSet<T>, grads: &ParamSet<T>, state: &mut AdamState<T>) -> Result<(), String> {
        if let Some(name) = grads.first_non_finite() {
            return Err(format!("non-finite gradient in {name} at step {}", state.t + 1));
        }
        state.t += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let bc1 = T::one() - T::of(self.beta1.powi(state.t as i32));
        let bc2 = T::one() - T::of(self.beta2.powi(state.t as i32));
        let (lr, eps) = (T::of(self.lr), T::of(self.epsilon));
        for (((p, g), m), v) in params.tensors.iter_mut().zip(&grads.tensors).zip(&mut state.m.tensors).zip(&mut state.v.tensors) {
            for (((pi, &gi), mi), vi) in p.data.iter_mut().zip(&g.data).zip(&mut m.data).zip(&mut v.data) {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *pi -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
