use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{cross_entropy, cross_entropy_grad, log_probs, Activation, Classifier, DenseCache, DenseStack, ParamSet};
use crate::rng::{self, Rng};
use crate::scalar::{softmax, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeVariant {
    Mlp50,
    Mlp100,
    Mlp50x2,
    /// One 50-unit hidden layer without a non-linearity.
    LinearHidden,
    /// No hidden layer at all.
    LinearFlat,
}

impl ProbeVariant {
    pub const ALL: [ProbeVariant; 5] =
        [ProbeVariant::Mlp50, ProbeVariant::Mlp100, ProbeVariant::Mlp50x2, ProbeVariant::LinearHidden, ProbeVariant::LinearFlat];

    pub fn hidden_sizes(self) -> Vec<usize> {
        match self {
            ProbeVariant::Mlp50 | ProbeVariant::LinearHidden => vec![50],
            ProbeVariant::Mlp100 => vec![100],
            ProbeVariant::Mlp50x2 => vec![50, 50],
            ProbeVariant::LinearFlat => vec![],
        }
    }

    pub fn activation(self) -> Activation {
        match self {
            ProbeVariant::LinearHidden | ProbeVariant::LinearFlat => Activation::Identity,
            _ => Activation::Relu,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ProbeVariant::Mlp50 => "mlp50",
            ProbeVariant::Mlp100 => "mlp100",
            ProbeVariant::Mlp50x2 => "mlp50x2",
            ProbeVariant::LinearHidden => "linear_hidden",
            ProbeVariant::LinearFlat => "linear_flat",
        }
    }
}

impl fmt::Display for ProbeVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProbeVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        ProbeVariant::ALL.into_iter().find(|v| v.as_str() == s).ok_or_else(|| format!("unknown probe variant {s:?}"))
    }
}

/// How the `[n_layers × dim]` input is reduced before the dense stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LayerMode {
    /// Σᵢ softmax(layer_logits)ᵢ · xᵢ with learned logits.
    WeightedSum,
    Single(usize),
    Concat,
}

impl fmt::Display for LayerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerMode::WeightedSum => f.write_str("weighted_sum"),
            LayerMode::Single(k) => write!(f, "single:{k}"),
            LayerMode::Concat => f.write_str("concat"),
        }
    }
}

impl FromStr for LayerMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "weighted_sum" => Ok(LayerMode::WeightedSum),
            "concat" => Ok(LayerMode::Concat),
            _ => s
                .strip_prefix("single:")
                .and_then(|k| k.parse().ok())
                .map(LayerMode::Single)
                .ok_or_else(|| format!("unknown layer mode {s:?} (weighted_sum, concat, single:K)")),
        }
    }
}

impl Serialize for LayerMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LayerMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub variant: ProbeVariant,
    pub layer_mode: LayerMode,
    pub n_layers: usize,
    pub dim: usize,
    pub n_classes: usize,
    pub dropout: f64,
}

impl MlpConfig {
    pub fn new(variant: ProbeVariant, layer_mode: LayerMode, n_layers: usize, dim: usize, n_classes: usize) -> Self {
        Self { variant, layer_mode, n_layers, dim, n_classes, dropout: 0.2 }
    }

    pub fn validate(&self) -> Result<(), String> {
        if let LayerMode::Single(k) = self.layer_mode {
            if k >= self.n_layers {
                return Err(format!("single({k}) outside 0..{}", self.n_layers));
            }
        }
        if self.n_layers == 0 || self.dim == 0 || self.n_classes < 2 {
            return Err(format!("degenerate probe shape {}x{} → {}", self.n_layers, self.dim, self.n_classes));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    /// Width of the reduced input fed to the dense stack.
    pub fn reduced_dim(&self) -> usize {
        match self.layer_mode {
            LayerMode::Concat => self.n_layers * self.dim,
            _ => self.dim,
        }
    }
}

/// Probe over per-layer vectors of one word.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpProbe<T> {
    pub config: MlpConfig,
    params: ParamSet<T>,
    stack: DenseStack,
    layer_logits: Option<usize>,
}

pub struct MlpCache<T> {
    weights: Option<Vec<T>>,
    dense: DenseCache<T>,
}

impl<T: Scalar> MlpCache<T> {
    pub fn dense(&self) -> &DenseCache<T> {
        &self.dense
    }
}

impl<T: Scalar> MlpProbe<T> {
    pub fn new(config: MlpConfig, seed: u64) -> Result<Self, String> {
        config.validate()?;
        let mut params = ParamSet::new();
        let layer_logits = (config.layer_mode == LayerMode::WeightedSum).then(|| params.push("layer_logits", &[config.n_layers]));
        let mut sizes = vec![config.reduced_dim()];
        sizes.extend(config.variant.hidden_sizes());
        sizes.push(config.n_classes);
        let stack = DenseStack::register(&mut params, "dense", &sizes, config.variant.activation(), config.dropout);
        stack.init(&mut params, &mut rng::seeded(seed));
        Ok(Self { config, params, stack, layer_logits })
    }

    /// Rebuild from stored parameters, checking names and shapes.
    pub fn from_params(config: MlpConfig, params: ParamSet<T>) -> Result<Self, String> {
        let mut probe = Self::new(config, 0)?;
        if probe.params.tensors.len() != params.tensors.len()
            || probe.params.tensors.iter().zip(&params.tensors).any(|(a, b)| a.name != b.name || a.shape != b.shape)
        {
            return Err("stored tensors do not match the probe configuration".into());
        }
        probe.params = params;
        Ok(probe)
    }

    pub fn stack(&self) -> &DenseStack {
        &self.stack
    }

    /// Softmaxed layer weights (weighted-sum mode only).
    pub fn layer_weights(&self) -> Option<Vec<T>> {
        self.layer_logits.map(|i| softmax(self.params.get(i)))
    }

    pub fn set_layer_logits(&mut self, logits: &[T]) {
        let i = self.layer_logits.expect("weighted-sum probe");
        self.params.get_mut(i).copy_from_slice(logits);
    }

    fn check_input(&self, input: &[T]) {
        let want = self.config.n_layers * self.config.dim;
        assert_eq!(input.len(), want, "probe input must be n_layers × dim = {want}");
    }

    /// Reduce `[n_layers × dim]` to the dense-stack input.
    pub fn reduce(&self, input: &[T]) -> Vec<T> {
        self.check_input(input);
        let dim = self.config.dim;
        match self.config.layer_mode {
            LayerMode::Concat => input.to_vec(),
            LayerMode::Single(k) => input[k * dim..(k + 1) * dim].to_vec(),
            LayerMode::WeightedSum => {
                let w = self.layer_weights().expect("weighted-sum probe");
                let mut out = vec![T::zero(); dim];
                for (layer, &wl) in w.iter().enumerate() {
                    for (o, &x) in out.iter_mut().zip(&input[layer * dim..(layer + 1) * dim]) {
                        *o += wl * x;
                    }
                }
                out
            }
        }
    }

    pub fn forward_cached(&self, input: &[T], dropout: Option<&mut Rng>) -> MlpCache<T> {
        let reduced = self.reduce(input);
        MlpCache { weights: self.layer_weights(), dense: self.stack.forward(&self.params, &reduced, dropout) }
    }
}

impl<T: Scalar> Classifier<T> for MlpProbe<T> {
    type Input = Vec<T>;

    fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    fn forward(&self, input: &Vec<T>, dropout: Option<&mut Rng>) -> Vec<T> {
        log_probs(self.forward_cached(input, dropout).dense.logits())
    }

    fn accumulate_grad(&self, input: &Vec<T>, label: usize, grads: &mut ParamSet<T>, dropout: Option<&mut Rng>) -> T {
        let cache = self.forward_cached(input, dropout);
        let lp = log_probs(cache.dense.logits());
        let dreduced = self.stack.backward(&self.params, &cache.dense, &cross_entropy_grad(&lp, label), grads);
        if let (Some(li), Some(w)) = (self.layer_logits, &cache.weights) {
            // r = Σ wᵢ xᵢ: ∂L/∂wᵢ = g·xᵢ, then through the softmax.
            let dim = self.config.dim;
            let gw: Vec<T> = (0..self.config.n_layers)
                .map(|l| input[l * dim..(l + 1) * dim].iter().zip(&dreduced).map(|(&x, &g)| x * g).sum())
                .collect();
            let dot: T = w.iter().zip(&gw).map(|(&a, &b)| a * b).sum();
            for ((d, &wl), &g) in grads.get_mut(li).iter_mut().zip(w).zip(&gw) {
                *d += wl * (g - dot);
            }
        }
        cross_entropy(&lp, label)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn config(mode: LayerMode, variant: ProbeVariant) -> MlpConfig {
        MlpConfig::new(variant, mode, 3, 2, 2)
    }

    #[test]
    fn names_roundtrip() {
        for v in ProbeVariant::ALL {
            assert_eq!(v.to_string().parse::<ProbeVariant>().unwrap(), v);
        }
        for m in [LayerMode::WeightedSum, LayerMode::Single(4), LayerMode::Concat] {
            assert_eq!(m.to_string().parse::<LayerMode>().unwrap(), m);
            assert_eq!(serde_json::from_str::<LayerMode>(&serde_json::to_string(&m).unwrap()).unwrap(), m);
        }
        assert!("single:x".parse::<LayerMode>().is_err());
    }

    #[test]
    fn single_layer_out_of_range_rejected() {
        assert!(MlpProbe::<f64>::new(config(LayerMode::Single(3), ProbeVariant::Mlp50), 0).is_err());
        assert!(MlpProbe::<f64>::new(config(LayerMode::Single(2), ProbeVariant::Mlp50), 0).is_ok());
    }

    #[test]
    fn uniform_weights_over_identical_layers_return_the_layer() {
        let p = MlpProbe::<f64>::new(config(LayerMode::WeightedSum, ProbeVariant::Mlp50), 1).unwrap();
        let w = p.layer_weights().unwrap();
        assert_relative_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_eq!(p.reduce(&[0.25, -3.0, 0.25, -3.0, 0.25, -3.0]), vec![0.25, -3.0]);
    }

    #[test]
    fn zero_weights_give_softmax_of_output_bias() {
        let mut p = MlpProbe::<f64>::new(config(LayerMode::Concat, ProbeVariant::Mlp50x2), 1).unwrap();
        let out_bias = p.stack().bias(2);
        for t in &mut p.params_mut().tensors {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
        p.params_mut().get_mut(out_bias).copy_from_slice(&[1.0, -0.5]);
        let expect = softmax(&[1.0, -0.5]);
        for x in [[0.0; 6], [5.0, -1.0, 2.0, 8.0, 0.1, 3.0]] {
            let lp = p.forward(&x.to_vec(), None);
            assert_relative_eq!(lp[0].exp(), expect[0], epsilon = 1e-12);
            assert_relative_eq!(lp[1].exp(), expect[1], epsilon = 1e-12);
        }
    }

    #[test]
    fn log_probs_normalize() {
        let p = MlpProbe::<f32>::new(config(LayerMode::WeightedSum, ProbeVariant::Mlp100), 2).unwrap();
        let lp = p.forward(&vec![0.3, 1.0, -2.0, 0.4, 0.5, 0.6], None);
        assert!((lp.iter().map(|v| v.exp()).sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn single_ignores_other_layers_and_concat_widens() {
        let p = MlpProbe::<f64>::new(config(LayerMode::Single(1), ProbeVariant::LinearFlat), 3).unwrap();
        assert!(p.layer_weights().is_none());
        assert_eq!(p.forward(&vec![9.0, 9.0, 1.0, 2.0, 7.0, 7.0], None), p.forward(&vec![0.0, 0.0, 1.0, 2.0, 0.0, 0.0], None));
        let c = MlpProbe::<f64>::new(config(LayerMode::Concat, ProbeVariant::Mlp50), 3).unwrap();
        assert_eq!(c.stack().input_dim(), 6);
    }
}
