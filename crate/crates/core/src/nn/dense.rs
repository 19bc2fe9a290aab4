use serde::{Deserialize, Serialize};

use super::{affine, affine_backward, dropout_mask, xavier, ParamSet};
use crate::rng::Rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Identity => x,
        }
    }

    fn derivative<T: Scalar>(self, pre: T) -> T {
        match self {
            Activation::Relu if pre <= T::zero() => T::zero(),
            _ => T::one(),
        }
    }
}

/// Feed-forward stack `sizes[0] → … → sizes[last]` with dropout in front of
/// every dense layer and `activation` after every layer but the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseStack {
    pub sizes: Vec<usize>,
    pub activation: Activation,
    pub dropout: f64,
    /// Index of the first weight tensor; layers occupy `(W, b)` pairs.
    first: usize,
}

#[derive(Debug, Clone)]
pub struct DenseCache<T> {
    /// Input of each dense layer, after dropout.
    pub inputs: Vec<Vec<T>>,
    pub masks: Vec<Option<Vec<T>>>,
    /// Pre-activation of each layer; the last entry holds the logits.
    pub pre: Vec<Vec<T>>,
}

impl<T: Scalar> DenseCache<T> {
    pub fn logits(&self) -> &[T] {
        self.pre.last().expect("stack has a layer")
    }

    /// Smallest |pre-activation| over hidden units, for keeping finite
    /// differences away from ReLU kinks.
    pub fn min_hidden_margin(&self) -> Option<T> {
        self.pre[..self.pre.len() - 1].iter().flatten().map(|v| v.abs()).reduce(T::min)
    }
}

impl DenseStack {
    pub fn register<T: Scalar>(params: &mut ParamSet<T>, prefix: &str, sizes: &[usize], activation: Activation, dropout: f64) -> Self {
        assert!(sizes.len() >= 2, "a dense stack needs input and output sizes");
        let first = params.tensors.len();
        for (i, w) in sizes.windows(2).enumerate() {
            params.push(&format!("{prefix}.{i}.weight"), &[w[1], w[0]]);
            params.push(&format!("{prefix}.{i}.bias"), &[w[1]]);
        }
        Self { sizes: sizes.to_vec(), activation, dropout, first }
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("non-empty sizes")
    }

    pub fn weight(&self, layer: usize) -> usize {
        self.first + 2 * layer
    }

    pub fn bias(&self, layer: usize) -> usize {
        self.first + 2 * layer + 1
    }

    /// Xavier-uniform weights, zero biases.
    pub fn init<T: Scalar>(&self, params: &mut ParamSet<T>, rng: &mut Rng) {
        for (i, w) in self.sizes.windows(2).enumerate() {
            params.init_uniform(self.weight(i), xavier(w[0], w[1]), rng);
            params.get_mut(self.bias(i)).iter_mut().for_each(|b| *b = T::zero());
        }
    }

    pub fn forward<T: Scalar>(&self, params: &ParamSet<T>, x: &[T], mut rng: Option<&mut Rng>) -> DenseCache<T> {
        assert_eq!(x.len(), self.input_dim(), "dense input width");
        let n = self.n_layers();
        let mut cache = DenseCache { inputs: Vec::with_capacity(n), masks: Vec::with_capacity(n), pre: Vec::with_capacity(n) };
        let mut h = x.to_vec();
        for i in 0..n {
            let mask = dropout_mask::<T>(h.len(), self.dropout, rng.as_deref_mut());
            if let Some(m) = &mask {
                h.iter_mut().zip(m).for_each(|(v, k)| *v *= *k);
            }
            let mut z = vec![T::zero(); self.sizes[i + 1]];
            affine(params.get(self.weight(i)), params.get(self.bias(i)), &h, &mut z);
            let next = if i + 1 < n { z.iter().map(|&v| self.activation.apply(v)).collect() } else { Vec::new() };
            cache.inputs.push(std::mem::replace(&mut h, next));
            cache.masks.push(mask);
            cache.pre.push(z);
        }
        cache
    }

    /// Backpropagate `dlogits`, accumulating parameter gradients; returns the
    /// gradient with respect to the stack input (before dropout).
    pub fn backward<T: Scalar>(&self, params: &ParamSet<T>, cache: &DenseCache<T>, dlogits: &[T], grads: &mut ParamSet<T>) -> Vec<T> {
        let mut g = dlogits.to_vec();
        for i in (0..self.n_layers()).rev() {
            let mut dx = vec![T::zero(); self.sizes[i]];
            let (wi, bi) = (self.weight(i), self.bias(i));
            // Split borrows: weights and biases are distinct tensors.
            let (lo, hi) = grads.tensors.split_at_mut(bi);
            affine_backward(params.get(wi), &cache.inputs[i], &g, &mut lo[wi].data, &mut hi[0].data, Some(&mut dx));
            if let Some(m) = &cache.masks[i] {
                dx.iter_mut().zip(m).for_each(|(d, k)| *d *= *k);
            }
            if i > 0 {
                dx.iter_mut().zip(&cache.pre[i - 1]).for_each(|(d, &p)| *d *= self.activation.derivative(p));
            }
            g = dx;
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_two_by_two() {
        // x=[1,2] → hidden relu(W0 x + b0) → W1 h + b1
        let mut p = ParamSet::<f64>::new();
        let s = DenseStack::register(&mut p, "h", &[2, 2, 2], Activation::Relu, 0.0);
        p.get_mut(s.weight(0)).copy_from_slice(&[1.0, -1.0, 0.5, 0.5]);
        p.get_mut(s.bias(0)).copy_from_slice(&[0.0, -1.0]);
        p.get_mut(s.weight(1)).copy_from_slice(&[2.0, 1.0, -1.0, 3.0]);
        p.get_mut(s.bias(1)).copy_from_slice(&[0.1, 0.2]);
        let c = s.forward(&p, &[1.0, 2.0], None);
        // pre0 = [1-2, 0.5+1-1] = [-1, 0.5]; h = [0, 0.5]
        assert_eq!(c.pre[0], vec![-1.0, 0.5]);
        // logits = [0.5+0.1, 1.5+0.2]
        assert_eq!(c.logits(), &[0.6, 1.7]);
        assert_eq!(c.min_hidden_margin(), Some(0.5));
    }

    #[test]
    fn dropout_only_in_train_mode() {
        let mut p = ParamSet::<f64>::new();
        let s = DenseStack::register(&mut p, "h", &[4, 3, 2], Activation::Relu, 0.5);
        s.init(&mut p, &mut crate::rng::seeded(1));
        let x = [0.3, -0.2, 0.9, 1.1];
        assert_eq!(s.forward(&p, &x, None).logits(), s.forward(&p, &x, None).logits());
        assert!(s.forward(&p, &x, None).masks.iter().all(Option::is_none));
        let mut r = crate::rng::seeded(2);
        assert!(s.forward(&p, &x, Some(&mut r)).masks.iter().all(Option::is_some));
    }
}
