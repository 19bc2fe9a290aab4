//! Differentiable building blocks written out by hand: dense stacks, the MLP
//! probe with learned layer weighting, a bidirectional character LSTM,
//! cross-entropy, Adam, a training loop with early stopping, and
//! finite-difference gradient checks.
//!
//! Parameters live in a [`ParamSet`] of named tensors so the optimizer,
//! gradient checker and checkpoint code need not know the architecture.

mod adam;
mod checkpoint;
mod dense;
mod gradcheck;
mod lstm;
mod mlp;
mod train;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;
use crate::scalar::{log_softmax, Scalar};

pub use adam::{Adam, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, TensorEntry};
pub use dense::{Activation, DenseCache, DenseStack};
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use lstm::{CharInput, CharLstm, CharLstmConfig, CharVocab, MASK_ID, UNK_ID};
pub use mlp::{LayerMode, MlpConfig, MlpProbe, ProbeVariant};
pub use train::{evaluate, predict, train, EpochRecord, TrainConfig, TrainError, TrainReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(name: &str, shape: &[usize]) -> Self {
        Self { name: name.to_string(), shape: shape.to_vec(), data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Ordered collection of named parameter (or gradient) tensors.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamSet<T> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self { tensors: Vec::new() }
    }

    /// Add a zero tensor, returning its index.
    pub fn push(&mut self, name: &str, shape: &[usize]) -> usize {
        self.tensors.push(Tensor::zeros(name, shape));
        self.tensors.len() - 1
    }

    pub fn zeros_like(&self) -> Self {
        Self { tensors: self.tensors.iter().map(|t| Tensor::zeros(&t.name, &t.shape)).collect() }
    }

    pub fn fill_zero(&mut self) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Total number of scalars.
    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, tensor: usize) -> &[T] {
        &self.tensors[tensor].data
    }

    pub fn get_mut(&mut self, tensor: usize) -> &mut [T] {
        &mut self.tensors[tensor].data
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn scale(&mut self, factor: T) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.tensors.iter().find(|t| t.data.iter().any(|v| !v.is_finite())).map(|t| t.name.as_str())
    }

    /// Same tensors in another precision.
    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor { name: t.name.clone(), shape: t.shape.clone(), data: t.data.iter().map(|v| U::of(v.to_f64_lossy())).collect() })
                .collect(),
        }
    }

    /// Uniform values in `[-bound, bound]` for one tensor.
    pub fn init_uniform(&mut self, tensor: usize, bound: f64, rng: &mut Rng) {
        for v in &mut self.tensors[tensor].data {
            *v = T::of(rng.random_range(-bound..=bound));
        }
    }
}

/// A classifier trainable by [`train`]: pure forward in eval mode and
/// gradient accumulation for a single example.
pub trait Classifier<T: Scalar>: Clone + Send + Sync {
    type Input: Sync;

    fn params(&self) -> &ParamSet<T>;
    fn params_mut(&mut self) -> &mut ParamSet<T>;
    fn n_classes(&self) -> usize;

    /// Class log-probabilities. `dropout` is `Some` in train mode.
    fn forward(&self, input: &Self::Input, dropout: Option<&mut Rng>) -> Vec<T>;

    /// Loss of one example; adds its gradient into `grads`.
    fn accumulate_grad(&self, input: &Self::Input, label: usize, grads: &mut ParamSet<T>, dropout: Option<&mut Rng>) -> T;
}

/// Negative log-probability of `label`.
pub fn cross_entropy<T: Scalar>(log_probs: &[T], label: usize) -> T {
    -log_probs[label]
}

/// Gradient of cross-entropy with respect to the logits behind `log_probs`.
pub fn cross_entropy_grad<T: Scalar>(log_probs: &[T], label: usize) -> Vec<T> {
    let mut g: Vec<T> = log_probs.iter().map(|lp| lp.exp()).collect();
    g[label] -= T::one();
    g
}

pub(crate) fn log_probs<T: Scalar>(logits: &[T]) -> Vec<T> {
    log_softmax(logits)
}

/// Inverted dropout: a mask of `0` or `1/(1-p)`, or `None` when inactive.
pub fn dropout_mask<T: Scalar>(n: usize, p: f64, rng: Option<&mut Rng>) -> Option<Vec<T>> {
    let rng = rng?;
    if p <= 0.0 {
        return None;
    }
    let keep = T::of(1.0 / (1.0 - p));
    Some((0..n).map(|_| if rng.random::<f64>() < p { T::zero() } else { keep }).collect())
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `out = W·x + b`, `W` row-major `[rows × cols]`.
pub(crate) fn affine<T: Scalar>(w: &[T], b: &[T], x: &[T], out: &mut [T]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = b[r];
        for (wi, xi) in row.iter().zip(x) {
            acc += *wi * *xi;
        }
        *o = acc;
    }
}

/// `dW += g ⊗ x`, `db += g`, `dx += Wᵀ g`.
pub(crate) fn affine_backward<T: Scalar>(w: &[T], x: &[T], g: &[T], dw: &mut [T], db: &mut [T], dx: Option<&mut [T]>) {
    let cols = x.len();
    for (r, &gr) in g.iter().enumerate() {
        db[r] += gr;
        if gr == T::zero() {
            continue;
        }
        for (d, xi) in dw[r * cols..(r + 1) * cols].iter_mut().zip(x) {
            *d += gr * *xi;
        }
    }
    if let Some(dx) = dx {
        for (r, &gr) in g.iter().enumerate() {
            if gr == T::zero() {
                continue;
            }
            for (d, wi) in dx.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
                *d += gr * *wi;
            }
        }
    }
}

/// Xavier/Glorot uniform bound.
pub(crate) fn xavier(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn loss_of_perfect_and_uniform_predictions() {
        assert_eq!(cross_entropy(&[0.0f64, f64::NEG_INFINITY], 0), 0.0);
        let uniform = log_probs(&[0.3f64, 0.3]);
        assert_relative_eq!(cross_entropy(&uniform, 1), std::f64::consts::LN_2, epsilon = 1e-15);
    }

    #[test]
    fn dropout_expectation_is_identity() {
        let mut r = crate::rng::seeded(4);
        let n = 20_000;
        let m: Vec<f64> = dropout_mask(n, 0.2, Some(&mut r)).unwrap();
        let mean = m.iter().sum::<f64>() / n as f64;
        // Each entry has mean 1 and variance p/(1-p).
        let sigma = (0.2f64 / 0.8 / n as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * sigma, "mean {mean}");
        assert!(dropout_mask::<f64>(5, 0.2, None).is_none());
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(-1000.0f64), 0.0);
        assert_eq!(sigmoid(1000.0f64), 1.0);
        assert_relative_eq!(sigmoid(0.0f32), 0.5);
    }

    #[test]
    fn affine_matches_hand_product() {
        let w = [1.0, 2.0, 3.0, 4.0];
        let mut out = [0.0; 2];
        affine(&w, &[0.5, -0.5], &[1.0, 1.0], &mut out);
        assert_eq!(out, [3.5, 6.5]);
        let (mut dw, mut db, mut dx) = ([0.0; 4], [0.0; 2], [0.0; 2]);
        affine_backward(&w, &[1.0, 2.0], &[1.0, -1.0], &mut dw, &mut db, Some(&mut dx));
        assert_eq!(dw, [1.0, 2.0, -1.0, -2.0]);
        assert_eq!(db, [1.0, -1.0]);
        assert_eq!(dx, [-2.0, -2.0]);
    }
}
