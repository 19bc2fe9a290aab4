//! Effect sizes, significance tests, correlation matrices, consensus
//! clustering and small diagnostics over experiment results.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, StudentsT};
use thiserror::Error;

use crate::rng::{self, Rng};
use crate::sampler::TaskDataset;
use crate::ud::SentenceRecord;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("effect undefined: unperturbed accuracy is {0}")]
    UndefinedEffect(f64),
    #[error("need at least {need} observations, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("k-means needs at least one row")]
    NoRows,
}

/// Relative accuracy drop `1 − Acc_perturbed/Acc_unperturbed`. Negative when
/// the perturbation helps.
pub fn effect(acc_unperturbed: f64, acc_perturbed: f64) -> Result<f64, StatsError> {
    if acc_unperturbed <= 0.0 {
        return Err(StatsError::UndefinedEffect(acc_unperturbed));
    }
    Ok(1.0 - acc_perturbed / acc_unperturbed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRecord {
    pub model_id: String,
    pub task: String,
    pub perturbation: String,
    pub acc_unperturbed: f64,
    pub acc_perturbed: f64,
    pub effect: f64,
}

impl EffectRecord {
    pub fn new(model_id: &str, task: &str, perturbation: &str, acc_unperturbed: f64, acc_perturbed: f64) -> Result<Self, StatsError> {
        Ok(Self {
            model_id: model_id.into(),
            task: task.into(),
            perturbation: perturbation.into(),
            acc_unperturbed,
            acc_perturbed,
            effect: effect(acc_unperturbed, acc_perturbed)?,
        })
    }
}

/// Two-sided paired t-test on `(a, b)` pairs. All-zero differences give 1,
/// a constant non-zero difference gives 0.
pub fn paired_t_test(pairs: &[(f64, f64)]) -> Result<f64, StatsError> {
    let n = pairs.len();
    if n < 2 {
        return Err(StatsError::TooFew { need: 2, got: n });
    }
    let d: Vec<f64> = pairs.iter().map(|(a, b)| a - b).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Ok(if mean == 0.0 { 1.0 } else { 0.0 });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive degrees of freedom");
    // The upper tail directly, to keep precision for large |t|.
    Ok((2.0 * dist.sf(t.abs())).min(1.0))
}

/// Bonferroni correction over `m` comparisons.
pub fn bonferroni(p: f64, m: usize) -> f64 {
    (p * m as f64).min(1.0)
}

/// Exact two-sided binomial sign test against p = 1/2.
pub fn sign_test(successes: u64, trials: u64) -> f64 {
    assert!(successes <= trials, "{successes} successes in {trials} trials");
    if trials == 0 {
        return 1.0;
    }
    let dist = Binomial::new(0.5, trials).expect("valid binomial");
    let k = successes.min(trials - successes);
    (2.0 * dist.cdf(k)).min(1.0)
}

/// Pearson correlation; `None` below 3 points or for a constant column.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len();
    if n < 3 || n != b.len() {
        return None;
    }
    let (ma, mb) = (a.iter().sum::<f64>() / n as f64, b.iter().sum::<f64>() / n as f64);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Correlations between effect columns. `None` cells are undefined (fewer
/// than 3 common tasks or zero variance).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

type Column = BTreeMap<String, f64>;

fn effect_columns(records: &[EffectRecord], model: &str) -> BTreeMap<String, Column> {
    let mut cols: BTreeMap<String, Column> = BTreeMap::new();
    for r in records.iter().filter(|r| r.model_id == model) {
        cols.entry(r.perturbation.clone()).or_default().insert(r.task.clone(), r.effect);
    }
    cols
}

fn correlate(a: &Column, b: &Column) -> Option<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) = a.iter().filter_map(|(t, &v)| b.get(t).map(|&w| (v, w))).unzip();
    pearson(&x, &y)
}

/// Perturbation × perturbation correlation of effects across tasks, with
/// rows from `model_a` and columns from `model_b` (equal for the
/// within-model matrix).
pub fn pearson_matrix(records: &[EffectRecord], model_a: &str, model_b: &str) -> CorrelationMatrix {
    let (ca, cb) = (effect_columns(records, model_a), effect_columns(records, model_b));
    let values = ca.values().map(|a| cb.values().map(|b| correlate(a, b)).collect()).collect();
    CorrelationMatrix { rows: ca.keys().cloned().collect(), cols: cb.keys().cloned().collect(), values }
}

/// Replace missing entries with their column mean. Fully observed columns
/// are returned unchanged; an all-missing column becomes zeros.
pub fn impute_column_means(matrix: &[Vec<Option<f64>>]) -> Vec<Vec<f64>> {
    let n_cols = matrix.first().map_or(0, Vec::len);
    let means: Vec<f64> = (0..n_cols)
        .map(|j| {
            let seen: Vec<f64> = matrix.iter().filter_map(|r| r[j]).collect();
            if seen.is_empty() { 0.0 } else { seen.iter().sum::<f64>() / seen.len() as f64 }
        })
        .collect();
    matrix.iter().map(|r| r.iter().zip(&means).map(|(v, m)| v.unwrap_or(*m)).collect()).collect()
}

/// Scale each column to zero mean and unit variance (constant columns → 0).
pub fn standardize(data: &mut [Vec<f64>]) {
    let n = data.len() as f64;
    let n_cols = data.first().map_or(0, Vec::len);
    for j in 0..n_cols {
        let mean = data.iter().map(|r| r[j]).sum::<f64>() / n;
        let sd = (data.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n).sqrt();
        for r in data.iter_mut() {
            r[j] = if sd > 0.0 { (r[j] - mean) / sd } else { 0.0 };
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// k-means++ seeding followed by Lloyd iterations until no centroid moves
/// more than `tol` or `max_iter` is reached. Returns cluster assignments.
pub fn kmeans(data: &[Vec<f64>], k: usize, max_iter: usize, tol: f64, rng: &mut Rng) -> Result<Vec<usize>, StatsError> {
    let n = data.len();
    if n == 0 {
        return Err(StatsError::NoRows);
    }
    let k = k.clamp(1, n);
    let mut centroids = vec![data[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = data.iter().map(|x| sq_dist(x, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total == 0.0 {
            rng.random_range(0..n)
        } else {
            let mut r = rng.random::<f64>() * total;
            d2.iter().position(|&w| {
                r -= w;
                r < 0.0
            })
            .unwrap_or(n - 1)
        };
        centroids.push(data[next].clone());
        for (d, x) in d2.iter_mut().zip(data) {
            *d = d.min(sq_dist(x, centroids.last().expect("just pushed")));
        }
    }
    let nearest = |x: &[f64], cs: &[Vec<f64>]| (0..cs.len()).fold(0, |b, c| if sq_dist(x, &cs[c]) < sq_dist(x, &cs[b]) { c } else { b });
    let mut assign: Vec<usize> = data.iter().map(|x| nearest(x, &centroids)).collect();
    for _ in 0..max_iter {
        let dim = data[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (x, &a) in data.iter().zip(&assign) {
            counts[a] += 1;
            sums[a].iter_mut().zip(x).for_each(|(s, v)| *s += v);
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            // An emptied cluster keeps its previous centroid.
            if counts[c] > 0 {
                let new: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
                shift = shift.max(sq_dist(&new, &centroids[c]).sqrt());
                centroids[c] = new;
            }
        }
        assign = data.iter().map(|x| nearest(x, &centroids)).collect();
        if shift <= tol {
            break;
        }
    }
    Ok(assign)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub runs: usize,
    pub k_min: usize,
    pub k_max: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub standardize: bool,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self { runs: 100, k_min: 3, k_max: 8, max_iter: 100, tol: 1e-6, standardize: false, seed: 0 }
    }
}

/// How often each pair of rows fell into the same cluster over `runs` runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CooccurrenceMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u32>>,
    pub runs: u32,
}

/// Repeated k-means with `K ~ Uniform{k_min..=k_max}` per run. `K` larger
/// than the number of rows is redrawn from the feasible range.
pub fn consensus_cluster(labels: &[String], features: &[Vec<Option<f64>>], config: &ClusterConfig) -> Result<CooccurrenceMatrix, StatsError> {
    let n = labels.len();
    if n == 0 {
        return Err(StatsError::NoRows);
    }
    let mut data = impute_column_means(features);
    if config.standardize {
        standardize(&mut data);
    }
    let assignments: Vec<Vec<usize>> = (0..config.runs)
        .into_par_iter()
        .map(|run| {
            let mut r = rng::seeded(rng::derive(config.seed, run as u64));
            let hi = config.k_max.min(n);
            let lo = config.k_min.min(hi);
            let k = r.random_range(lo..=hi);
            kmeans(&data, k, config.max_iter, config.tol, &mut r)
        })
        .collect::<Result<_, _>>()?;
    let mut counts = vec![vec![0u32; n]; n];
    for a in &assignments {
        for i in 0..n {
            for j in 0..n {
                counts[i][j] += u32::from(a[i] == a[j]);
            }
        }
    }
    Ok(CooccurrenceMatrix { labels: labels.to_vec(), counts, runs: config.runs as u32 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerWeightDiagnostics {
    /// Natural-log entropy.
    pub entropy: f64,
    /// The same entropy in bits (13 uniform layers: 3.70).
    pub entropy_bits: f64,
    /// Largest over smallest weight; infinite when a weight is zero.
    pub max_min_ratio: f64,
}

pub fn layer_weight_diagnostics(weights: &[f64]) -> LayerWeightDiagnostics {
    let entropy = -weights.iter().filter(|&&w| w > 0.0).map(|w| w * w.ln()).sum::<f64>();
    let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = weights.iter().copied().fold(f64::INFINITY, f64::min);
    let max_min_ratio = if min > 0.0 { max / min } else { f64::INFINITY };
    let entropy = entropy.max(0.0);
    LayerWeightDiagnostics { entropy, entropy_bits: entropy / std::f64::consts::LN_2, max_min_ratio }
}

/// 1 when the only predicted value is gold, 1/d when gold is one of `d`
/// distinct predicted values, 0 when gold is absent.
pub fn partial_credit_score<S: AsRef<str>>(predicted: &[S], gold: &str) -> f64 {
    let distinct: BTreeSet<&str> = predicted.iter().map(AsRef::as_ref).collect();
    if distinct.contains(gold) {
        1.0 / distinct.len() as f64
    } else {
        0.0
    }
}

/// Score an external analyzer: its predicted values of `feature` for every
/// form (pooled over all occurrences in `predictions`) are compared with the
/// gold label of each test instance by partial credit. Returns the mean.
pub fn score_external(predictions: &[SentenceRecord], dataset: &TaskDataset) -> f64 {
    let feature = &dataset.spec.feature;
    let mut by_form: HashMap<&str, Vec<&str>> = HashMap::new();
    for tok in predictions.iter().flat_map(|s| &s.tokens) {
        if let Some(v) = tok.feats.get(feature) {
            by_form.entry(tok.form.as_str()).or_default().push(v);
        }
    }
    if dataset.test.is_empty() {
        return 0.0;
    }
    let total: f64 = dataset
        .test
        .iter()
        .map(|inst| by_form.get(inst.target_form()).map_or(0.0, |vals| partial_credit_score(vals, &inst.label)))
        .sum();
    total / dataset.test.len() as f64
}

/// Accuracy on test of always predicting the most frequent training label
/// (ties go to the alphabetically first label).
pub fn majority_baseline(dataset: &TaskDataset) -> f64 {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for i in &dataset.train {
        *counts.entry(&i.label).or_default() += 1;
    }
    let Some(best) = counts.iter().fold(None, |b: Option<(&str, usize)>, (&l, &c)| match b {
        Some((_, bc)) if bc >= c => b,
        _ => Some((l, c)),
    }) else {
        return 0.0;
    };
    if dataset.test.is_empty() {
        return 0.0;
    }
    dataset.test.iter().filter(|i| i.label == best.0).count() as f64 / dataset.test.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{ProbingInstance, TaskSpec};
    use approx::assert_relative_eq;

    #[test]
    fn effect_examples() {
        assert_eq!(effect(0.8, 0.8).unwrap(), 0.0);
        assert_relative_eq!(effect(0.8, 0.6).unwrap(), 0.25, epsilon = 1e-15);
        assert!(effect(0.5, 0.6).unwrap() < 0.0);
        assert_eq!(effect(0.0, 0.3), Err(StatsError::UndefinedEffect(0.0)));
    }

    #[test]
    fn t_test_edge_cases() {
        assert_eq!(paired_t_test(&[(0.5, 0.5), (0.7, 0.7)]).unwrap(), 1.0);
        assert_eq!(paired_t_test(&[(1.5, 0.5), (2.5, 1.5), (4.0, 3.0)]).unwrap(), 0.0);
        assert!(paired_t_test(&[(0.6, 0.5)]).is_err());
        assert_eq!(bonferroni(0.01, 14), 0.14);
        assert_eq!(bonferroni(0.1, 14), 1.0);
    }

    #[test]
    fn sign_test_edge_cases() {
        assert_eq!(sign_test(5, 10), 1.0);
        assert_relative_eq!(sign_test(0, 1), 1.0, max_relative = 1e-12);
        assert_relative_eq!(sign_test(10, 10), 2.0 * 0.5f64.powi(10), max_relative = 1e-12);
        assert_eq!(sign_test(3, 17), sign_test(14, 17));
    }

    #[test]
    fn pearson_basics() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_relative_eq!(pearson(&a, &a).unwrap(), 1.0);
        assert_relative_eq!(pearson(&a, &[4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert_eq!(pearson(&a, &[1.0; 4]), None);
        assert_eq!(pearson(&a[..2], &a[..2]), None);
    }

    #[test]
    fn imputation_keeps_observed_columns() {
        let m = vec![vec![Some(1.0), None], vec![Some(3.0), Some(4.0)], vec![Some(5.0), Some(8.0)]];
        let out = impute_column_means(&m);
        assert_eq!(out.iter().map(|r| r[0]).collect::<Vec<_>>(), vec![1.0, 3.0, 5.0]);
        assert_eq!(out[0][1], 6.0);
    }

    #[test]
    fn layer_weights() {
        let d = layer_weight_diagnostics(&[1.0 / 13.0; 13]);
        assert_relative_eq!(d.entropy, 13f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(d.max_min_ratio, 1.0);
        let one_hot = layer_weight_diagnostics(&[0.0, 1.0, 0.0]);
        assert_eq!(one_hot.entropy, 0.0);
        assert_eq!(one_hot.max_min_ratio, f64::INFINITY);
    }

    #[test]
    fn partial_credit() {
        assert_eq!(partial_credit_score(&["Nom"], "Nom"), 1.0);
        assert_eq!(partial_credit_score(&["Nom", "Acc", "Nom"], "Nom"), 0.5);
        assert_eq!(partial_credit_score(&["Acc"], "Nom"), 0.0);
    }

    fn dataset(train: &[&str], test: &[&str]) -> TaskDataset {
        let inst = |l: &&str| ProbingInstance { words: vec!["w".into(); 3], target_index: 1, label: l.to_string() };
        TaskDataset {
            spec: TaskSpec::new("xx", "NOUN", "Case"),
            train: train.iter().map(inst).collect(),
            dev: vec![],
            test: test.iter().map(inst).collect(),
            labels: vec![],
        }
    }

    #[test]
    fn majority() {
        assert_eq!(majority_baseline(&dataset(&["a", "b"], &["a", "b"])), 0.5);
        assert_eq!(majority_baseline(&dataset(&["a", "a", "a", "b"], &["a", "a", "a", "b"])), 0.75);
    }

    #[test]
    fn kmeans_singletons_and_identical_rows() {
        let labels: Vec<String> = (0..4).map(|i| format!("l{i}")).collect();
        let rows: Vec<Vec<Option<f64>>> = (0..4).map(|i| vec![Some(i as f64 * 10.0)]).collect();
        let c = ClusterConfig { runs: 1, k_min: 4, k_max: 4, ..ClusterConfig::default() };
        let m = consensus_cluster(&labels, &rows, &c).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(m.counts[i][j], u32::from(i == j));
            }
        }
        let same: Vec<Vec<Option<f64>>> = vec![vec![Some(1.0), Some(2.0)]; 4];
        let m = consensus_cluster(&labels, &same, &ClusterConfig { runs: 10, ..ClusterConfig::default() }).unwrap();
        assert!(m.counts.iter().flatten().all(|&c| c == 10));
    }
}
