//! Analytic gradients against central finite differences in double precision.

use morphoprobe_core::embedding::SubwordPooling;
use morphoprobe_core::nn::{grad_check, CharLstm, CharLstmConfig, CharVocab, LayerMode, MlpConfig, MlpProbe, ProbeVariant};
use morphoprobe_core::perturb::CharSequence;
use morphoprobe_core::rng;
use rand::Rng as _;

fn random_batch(n: usize, width: usize, classes: usize, seed: u64) -> Vec<(Vec<f64>, usize)> {
    let mut r = rng::seeded(seed);
    (0..n).map(|i| ((0..width).map(|_| r.random_range(-1.0..1.0)).collect(), i % classes)).collect()
}

fn mlp(variant: ProbeVariant, mode: LayerMode, seed: u64) -> MlpProbe<f64> {
    MlpProbe::new(MlpConfig::new(variant, mode, 4, 6, 3), seed).unwrap()
}

#[test]
fn linear_probes_agree_to_one_in_a_million() {
    for (variant, mode) in [
        (ProbeVariant::LinearFlat, LayerMode::WeightedSum),
        (ProbeVariant::LinearFlat, LayerMode::Concat),
        (ProbeVariant::LinearHidden, LayerMode::WeightedSum),
        (ProbeVariant::LinearHidden, LayerMode::Single(2)),
    ] {
        let mut probe = mlp(variant, mode, 11);
        if mode == LayerMode::WeightedSum {
            probe.set_layer_logits(&[0.3, -0.7, 1.1, 0.0]);
        }
        let batch = random_batch(8, 24, 3, 2);
        let report = grad_check(&probe, &batch, 1e-5, 400, 3);
        assert!(report.max_rel_error < 1e-6, "{variant} {mode}: {report:?}");
    }
}

/// Smallest |hidden pre-activation| over the batch.
fn relu_margin(probe: &MlpProbe<f64>, batch: &[(Vec<f64>, usize)]) -> f64 {
    batch.iter().filter_map(|(x, _)| probe.forward_cached(x, None).dense().min_hidden_margin()).fold(f64::INFINITY, f64::min)
}

#[test]
fn relu_probes_agree_to_one_in_ten_thousand_away_from_kinks() {
    let eps = 1e-5;
    for variant in [ProbeVariant::Mlp50, ProbeVariant::Mlp100, ProbeVariant::Mlp50x2] {
        let mut probe = mlp(variant, LayerMode::WeightedSum, 5);
        probe.set_layer_logits(&[0.2, 0.1, -0.4, 0.9]);
        // Keep only examples whose hidden units all sit well away from zero,
        // so a ±eps nudge to any parameter cannot cross a kink.
        let batch: Vec<_> = random_batch(400, 24, 3, 7)
            .into_iter()
            .filter(|ex| relu_margin(&probe, std::slice::from_ref(ex)) > 1e-3)
            .take(6)
            .collect();
        assert!(!batch.is_empty(), "{variant}: no kink-free examples");
        assert!(relu_margin(&probe, &batch) > 1e-3);
        let report = grad_check(&probe, &batch, eps, 500, 4);
        assert!(report.max_rel_error < 1e-4, "{variant}: {report:?}");
    }
}

#[test]
fn bilstm_on_ten_characters_agrees_to_one_in_ten_thousand() {
    let text = "ab cad bec";
    assert_eq!(text.chars().count(), 10);
    let vocab = CharVocab::new("abcde ".chars());
    let mut config = CharLstmConfig::new(vocab.clone(), 3);
    config.head_hidden = 12;
    (config.emb_dim, config.hidden) = (6, 5);
    let model = CharLstm::<f64>::new(config, 21);
    let seq = CharSequence { chars: text.chars().collect(), target_span: (3, 6) };
    let batch: Vec<_> = [(SubwordPooling::First, 0), (SubwordPooling::Last, 2)]
        .into_iter()
        .map(|(pool, y)| (vocab.encode(&seq, pool), y))
        .collect();
    let report = grad_check(&model, &batch, 1e-5, 600, 8);
    assert!(report.max_rel_error < 1e-4, "{report:?}");
    assert_eq!(report.n_checked, 600);
}

#[test]
fn full_size_bilstm_on_all_parameters_of_the_recurrent_layers() {
    // Default widths; a larger sample of parameters.
    let vocab = CharVocab::new("xyz ".chars());
    let model = CharLstm::<f64>::new(CharLstmConfig::new(vocab.clone(), 2), 4);
    let seq = CharSequence { chars: "xyzzy yx z".chars().collect(), target_span: (6, 8) };
    let batch = vec![(vocab.encode(&seq, SubwordPooling::Last), 1)];
    let report = grad_check(&model, &batch, 1e-5, 2000, 1);
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}
