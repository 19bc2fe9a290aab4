//! Coalition accuracy tables for the Shapley attribution.
//!
//! Two coalitions that mask the same words in every instance of a dataset
//! produce the same experiment, so coalitions are grouped by the content
//! of their perturbed dataset and each group is run once.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    char_features, embedding_features, prepare_lstm, prepare_mlp, run_suite, seed_of, train_seed, Encoder, ExperimentResult, ExperimentSpec,
    Job, Journal, Prepared, RunError,
};
use crate::embedding::SubwordPooling;
use crate::nn::{evaluate, CharLstm, Classifier};
use crate::perturb::{perturb_dataset, Coalition, PerturbedDataset};
use crate::sampler::TaskDataset;
use crate::shapley::{CoalitionTable, N_COALITIONS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapleyMode {
    /// Train a fresh probe on every coalition's masked data.
    Retrain,
    /// Train once on unmasked data and mask only at test time.
    FixedProbe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoalitionGroup {
    pub fingerprint: String,
    /// Ascending; the first one stands for the group.
    pub coalitions: Vec<Coalition>,
}

fn perturbed_fingerprint(p: &PerturbedDataset) -> String {
    let mut h = Sha256::new();
    for split in [&p.train, &p.dev, &p.test] {
        for inst in split {
            h.update(serde_json::to_vec(&(&inst.words, &inst.masked, inst.target_index, &inst.label)).expect("instance serializes"));
        }
        h.update(b"|");
    }
    hex::encode(h.finalize())
}

/// Group all 512 coalitions by the perturbed dataset they induce.
pub fn coalition_groups(dataset: &TaskDataset, seed: u64) -> Vec<CoalitionGroup> {
    let mut groups: BTreeMap<String, Vec<Coalition>> = BTreeMap::new();
    for c in Coalition::all() {
        groups.entry(perturbed_fingerprint(&perturb_dataset(dataset, c.into(), seed))).or_default().push(c);
    }
    let mut out: Vec<CoalitionGroup> = groups.into_iter().map(|(fingerprint, coalitions)| CoalitionGroup { fingerprint, coalitions }).collect();
    out.sort_by_key(|g| g.coalitions[0]);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyRun {
    pub mode: ShapleyMode,
    pub table: CoalitionTable,
    pub groups: Vec<CoalitionGroup>,
    /// Accuracy of each group, in group order.
    pub group_accuracies: Vec<f64>,
    /// Per-group experiments (retrain mode only).
    pub results: Vec<ExperimentResult>,
}

fn fill_table(dataset: &TaskDataset, model_id: &str, groups: &[CoalitionGroup], accs: &[f64]) -> Result<CoalitionTable, RunError> {
    let mut table = vec![f64::NAN; N_COALITIONS];
    for (g, &acc) in groups.iter().zip(accs) {
        for c in &g.coalitions {
            table[c.0 as usize] = acc;
        }
    }
    CoalitionTable::new(&dataset.spec.name(), model_id, table).map_err(|e| RunError::Spec(e.to_string()))
}

/// Accuracy of every coalition of `base` on `dataset`.
pub fn shapley_table(
    dataset: &Arc<TaskDataset>,
    encoder: &Encoder,
    base: &ExperimentSpec,
    mode: ShapleyMode,
    journal: Option<&Journal>,
    workers: usize,
) -> Result<ShapleyRun, RunError> {
    base.validate()?;
    super::check_encoder(base, encoder)?;
    let groups = coalition_groups(dataset, base.base_seed);
    log::info!("{}: 512 coalitions in {} distinct maskings", dataset.spec.name(), groups.len());
    let (accs, results) = match mode {
        ShapleyMode::Retrain => {
            let jobs: Vec<Job> = groups.iter().map(|g| Job::new(base.with_masking(g.coalitions[0]), dataset.clone())).collect();
            let encoders = BTreeMap::from([(base.model_id.clone(), encoder.clone())]);
            let mut results = Vec::with_capacity(jobs.len());
            for row in run_suite(&jobs, &encoders, journal, workers) {
                match row.result {
                    Some(r) => results.push(r),
                    None => return Err(RunError::Spec(format!("coalition {}: {}", row.masking, row.error.unwrap_or_default()))),
                }
            }
            (results.iter().map(|r| r.mean_test_accuracy).collect(), results)
        }
        ShapleyMode::FixedProbe => (fixed_probe(dataset, encoder, base, &groups)?, Vec::new()),
    };
    let table = fill_table(dataset, &base.model_id, &groups, &accs)?;
    Ok(ShapleyRun { mode, table, groups, group_accuracies: accs, results })
}

fn test_only(dataset: &TaskDataset, coalition: Coalition, seed: u64) -> PerturbedDataset {
    let mut p = perturb_dataset(dataset, coalition.into(), seed);
    p.train.clear();
    p.dev.clear();
    p
}

fn fixed_probe(dataset: &TaskDataset, encoder: &Encoder, base: &ExperimentSpec, groups: &[CoalitionGroup]) -> Result<Vec<f64>, RunError> {
    let unmasked = perturb_dataset(dataset, crate::perturb::Masking::NONE, base.base_seed);
    match encoder {
        Encoder::Embeddings(p) => {
            let prepared = prepare_mlp(base, dataset, p.as_ref(), &unmasked)?;
            fixed_probe_with(base, dataset, prepared, groups, |c, pooling| {
                let mut f = embedding_features(p.as_ref(), dataset, &test_only(dataset, c, base.base_seed), &[pooling])?;
                Ok(f.remove(&pooling).expect("requested pooling").test)
            })
        }
        Encoder::CharLstm => {
            let prepared: Prepared<CharLstm<f32>> = prepare_lstm(base, dataset, &unmasked)?;
            let vocab = serde_json::from_value::<crate::nn::CharLstmConfig>(prepared.config.clone()).expect("own config").vocab;
            fixed_probe_with(base, dataset, prepared, groups, |c, pooling| {
                let (_, mut f) = char_features(dataset, &test_only(dataset, c, base.base_seed), &[pooling], Some(&vocab))?;
                Ok(f.remove(&pooling).expect("requested pooling").test)
            })
        }
    }
}

fn fixed_probe_with<M: Classifier<f32>>(
    base: &ExperimentSpec,
    dataset: &TaskDataset,
    prepared: Prepared<M>,
    groups: &[CoalitionGroup],
    test_features: impl Fn(Coalition, SubwordPooling) -> Result<Vec<(M::Input, usize)>, RunError>,
) -> Result<Vec<f64>, RunError>
where
    M::Input: Clone,
{
    let subset = super::subsample_indices(dataset, base.train_fraction, base.base_seed)?;
    let mut models = Vec::new();
    let mut failures = Vec::new();
    for i in 0..base.n_seeds {
        match train_seed(&*prepared.make, &prepared.feats, subset.as_deref(), &base.train, seed_of(base.base_seed, i))? {
            Ok(t) => models.push((t.model, t.pooling)),
            Err(why) => failures.push(why),
        }
    }
    if models.is_empty() {
        return Err(RunError::AllDiverged(failures));
    }
    let mut cache: BTreeMap<(Coalition, SubwordPooling), Vec<(M::Input, usize)>> = BTreeMap::new();
    let mut accs = Vec::with_capacity(groups.len());
    for g in groups {
        let c = g.coalitions[0];
        let mut total = 0.0;
        for (model, pooling) in &models {
            if !cache.contains_key(&(c, *pooling)) {
                cache.insert((c, *pooling), test_features(c, *pooling)?);
            }
            total += evaluate(model, &cache[&(c, *pooling)]).1;
        }
        accs.push(total / models.len() as f64);
        cache.retain(|k, _| k.0 == c);
    }
    Ok(accs)
}
