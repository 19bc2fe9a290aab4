use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{cross_entropy, Adam, AdamState, Classifier};
use crate::rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, batch_size: 128, max_epochs: 200, patience: 10, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [self.lr, self.beta1, self.beta2, self.epsilon].iter().all(|&v| v > 0.0)
            && self.batch_size > 0
            && self.max_epochs > 0
            && self.patience > 0;
        if !positive {
            return Err("training hyperparameters must be positive".into());
        }
        if self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return Err("Adam betas must lie in (0, 1)".into());
        }
        if self.patience >= self.max_epochs {
            return Err(format!("patience {} must be below max_epochs {}", self.patience, self.max_epochs));
        }
        Ok(())
    }

    pub fn adam(&self) -> Adam {
        Adam { lr: self.lr, beta1: self.beta1, beta2: self.beta2, epsilon: self.epsilon }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    /// 1-based epoch whose parameters were restored.
    pub best_epoch: usize,
    pub best_dev_accuracy: f64,
    pub best_dev_loss: f64,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged in epoch {epoch}: {detail}")]
    NonFinite { epoch: usize, detail: String },
    #[error("no {0} examples")]
    EmptyData(&'static str),
    #[error("invalid training config: {0}")]
    Config(String),
}

/// Arg-max class.
pub fn predict<T: Scalar, M: Classifier<T>>(model: &M, input: &M::Input) -> usize {
    let lp = model.forward(input, None);
    let mut best = 0;
    for (i, v) in lp.iter().enumerate() {
        if *v > lp[best] {
            best = i;
        }
    }
    best
}

/// Mean loss and accuracy in eval mode.
pub fn evaluate<T: Scalar, M: Classifier<T>>(model: &M, data: &[(M::Input, usize)]) -> (f64, f64) {
    if data.is_empty() {
        return (0.0, 0.0);
    }
    let (mut loss, mut correct) = (0.0, 0usize);
    for (x, y) in data {
        let lp = model.forward(x, None);
        loss += cross_entropy(&lp, *y).to_f64_lossy();
        let pred = (0..lp.len()).fold(0, |b, i| if lp[i] > lp[b] { i } else { b });
        correct += usize::from(pred == *y);
    }
    (loss / data.len() as f64, correct as f64 / data.len() as f64)
}

/// Minibatch Adam with early stopping.
///
/// Training stops once neither dev loss nor dev accuracy has improved for
/// `patience` epochs. The parameters of the best dev-accuracy epoch (ties
/// broken by lower dev loss) are restored before returning.
pub fn train<T: Scalar, M: Classifier<T>>(
    model: &mut M,
    train: &[(M::Input, usize)],
    dev: &[(M::Input, usize)],
    config: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    config.validate().map_err(TrainError::Config)?;
    if train.is_empty() {
        return Err(TrainError::EmptyData("training"));
    }
    if dev.is_empty() {
        return Err(TrainError::EmptyData("development"));
    }
    let adam = config.adam();
    let mut state = AdamState::new(model.params());
    let mut grads = model.params().zeros_like();
    let mut shuffle_rng = rng::seeded(rng::derive_str(config.seed, "shuffle"));
    let mut dropout_rng = rng::seeded(rng::derive_str(config.seed, "dropout"));
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut best_params = model.params().clone();
    let (mut best_acc, mut best_loss_at_acc) = (f64::NEG_INFINITY, f64::INFINITY);
    let (mut best_epoch, mut lowest_loss, mut highest_acc) = (0, f64::INFINITY, f64::NEG_INFINITY);
    let mut since_improvement = 0;
    let mut history = Vec::new();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.fill_zero();
            let mut batch_loss = T::zero();
            for &i in batch {
                let (x, y) = &train[i];
                batch_loss += model.accumulate_grad(x, *y, &mut grads, Some(&mut dropout_rng));
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::NonFinite { epoch, detail: "non-finite training loss".into() });
            }
            epoch_loss += batch_loss.to_f64_lossy();
            grads.scale(T::one() / T::of(batch.len() as f64));
            adam.step(model.params_mut(), &grads, &mut state).map_err(|detail| TrainError::NonFinite { epoch, detail })?;
        }
        if let Some(name) = model.params().first_non_finite() {
            return Err(TrainError::NonFinite { epoch, detail: format!("non-finite parameter in {name}") });
        }
        let (dev_loss, dev_accuracy) = evaluate(model, dev);
        history.push(EpochRecord { epoch, train_loss: epoch_loss / train.len() as f64, dev_loss, dev_accuracy });

        if dev_accuracy > best_acc || (dev_accuracy == best_acc && dev_loss < best_loss_at_acc) {
            (best_acc, best_loss_at_acc, best_epoch) = (dev_accuracy, dev_loss, epoch);
            best_params.clone_from(model.params());
        }
        let improved = dev_loss < lowest_loss || dev_accuracy > highest_acc;
        lowest_loss = lowest_loss.min(dev_loss);
        highest_acc = highest_acc.max(dev_accuracy);
        since_improvement = if improved { 0 } else { since_improvement + 1 };
        if since_improvement >= config.patience {
            break;
        }
    }
    *model.params_mut() = best_params;
    Ok(TrainReport {
        epochs_run: history.len(),
        best_epoch,
        best_dev_accuracy: best_acc,
        best_dev_loss: best_loss_at_acc,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LayerMode, MlpConfig, MlpProbe, ProbeVariant};
    use rand::Rng as _;

    /// Two Gaussian blobs on either side of a hyperplane, with a margin.
    fn separable(n: usize, seed: u64) -> Vec<(Vec<f32>, usize)> {
        let mut r = rng::seeded(seed);
        (0..n)
            .map(|i| {
                let y = i % 2;
                let sign = if y == 0 { -1.0 } else { 1.0 };
                let x: Vec<f32> = (0..4).map(|d| if d == 0 { sign * (1.0 + r.random::<f32>()) } else { r.random::<f32>() - 0.5 }).collect();
                (x, y)
            })
            .collect()
    }

    fn probe(seed: u64) -> MlpProbe<f32> {
        let mut c = MlpConfig::new(ProbeVariant::Mlp50, LayerMode::WeightedSum, 2, 2, 2);
        c.dropout = 0.0;
        MlpProbe::new(c, seed).unwrap()
    }

    #[test]
    fn separable_loss_falls_below_a_hundredth() {
        let data = separable(64, 1);
        let mut m = probe(3);
        let config = TrainConfig { lr: 0.01, batch_size: 16, max_epochs: 200, patience: 199, ..TrainConfig::default() };
        let report = train(&mut m, &data, &data, &config).unwrap();
        let (loss, acc) = evaluate(&m, &data);
        assert_eq!(acc, 1.0);
        assert!(loss < 0.01, "final dev loss {loss}");
        assert!(report.history.last().unwrap().train_loss < report.history[0].train_loss);
    }

    #[test]
    fn deterministic_given_seed() {
        let data = separable(40, 2);
        let config = TrainConfig { batch_size: 8, max_epochs: 15, patience: 5, seed: 9, ..TrainConfig::default() };
        let (mut a, mut b) = (probe(1), probe(1));
        let ra = train(&mut a, &data, &data, &config).unwrap();
        let rb = train(&mut b, &data, &data, &config).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a, b);
    }

    #[test]
    fn restores_best_dev_epoch() {
        let data = separable(40, 5);
        let mut m = probe(2);
        let config = TrainConfig { batch_size: 8, max_epochs: 30, patience: 3, ..TrainConfig::default() };
        let report = train(&mut m, &data[..20], &data[20..], &config).unwrap();
        let (loss, acc) = evaluate(&m, &data[20..]);
        assert_eq!(acc, report.best_dev_accuracy);
        assert_eq!(loss, report.best_dev_loss);
        assert!(report.history.iter().all(|e| e.dev_accuracy <= report.best_dev_accuracy));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { patience: 200, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { lr: 0.0, ..TrainConfig::default() }.validate().is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let mut data = separable(8, 1);
        data[0].0[0] = f32::NAN;
        let mut m = probe(0);
        let config = TrainConfig { batch_size: 4, max_epochs: 3, patience: 2, ..TrainConfig::default() };
        assert!(matches!(train(&mut m, &data, &data, &config), Err(TrainError::NonFinite { epoch: 1, .. })));
    }
}
