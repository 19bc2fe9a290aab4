use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::{cross_entropy, Classifier};
use crate::rng;

/// Differences below this are treated as agreement.
const FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub n_checked: usize,
    /// Tensor name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

fn batch_loss<M: Classifier<f64>>(model: &M, batch: &[(M::Input, usize)]) -> f64 {
    batch.iter().map(|(x, y)| cross_entropy(&model.forward(x, None), *y)).sum::<f64>() / batch.len() as f64
}

/// Compare analytic gradients of the mean eval-mode batch loss with central
/// differences on up to `n_samples` randomly chosen parameters.
pub fn grad_check<M: Classifier<f64>>(model: &M, batch: &[(M::Input, usize)], epsilon: f64, n_samples: usize, seed: u64) -> GradCheckReport {
    let mut grads = model.params().zeros_like();
    for (x, y) in batch {
        model.accumulate_grad(x, *y, &mut grads, None);
    }
    grads.scale(1.0 / batch.len() as f64);

    let locations: Vec<(usize, usize)> =
        model.params().tensors.iter().enumerate().flat_map(|(t, tensor)| (0..tensor.len()).map(move |i| (t, i))).collect();
    let n = n_samples.min(locations.len());
    let picked = sample(&mut rng::seeded(seed), locations.len(), n);

    let mut probe = model.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, n_checked: n, worst: None };
    for k in picked {
        let (t, i) = locations[k];
        let original = probe.params().get(t)[i];
        probe.params_mut().get_mut(t)[i] = original + epsilon;
        let plus = batch_loss(&probe, batch);
        probe.params_mut().get_mut(t)[i] = original - epsilon;
        let minus = batch_loss(&probe, batch);
        probe.params_mut().get_mut(t)[i] = original;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let err = relative_error(grads.get(t)[i], numeric);
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((model.params().tensors[t].name.clone(), i));
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_is_symmetric_and_floored() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert_eq!(relative_error(2.0, 1.0), relative_error(1.0, 2.0));
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!(relative_error(1e-14, 0.0) < 1.0);
    }
}
