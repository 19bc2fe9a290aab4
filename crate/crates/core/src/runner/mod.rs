//! Training and evaluation of probes over seeds, maskings, layer modes and
//! training-set sizes, with a resumable suite runner.

mod journal;
mod shapley_run;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use journal::{Journal, JournalRecord, JournalStatus};
pub use shapley_run::{coalition_groups, shapley_table, CoalitionGroup, ShapleyMode, ShapleyRun};

use crate::embedding::{
    pool_subwords, EmbedError, EmbeddingProvider, EmbeddingRequest, RandomControl, RandomMode, RequestId, SubwordPooling,
};
use crate::nn::{
    evaluate, save_checkpoint, train, CharInput, CharLstm, CharLstmConfig, CharVocab, Classifier, LayerMode, MlpConfig, MlpProbe,
    ProbeVariant, TrainConfig, TrainError,
};
use crate::perturb::{char_mask, perturb_dataset, Masking, PerturbError, PerturbedDataset, PerturbedInstance};
use crate::rng;
use crate::sampler::{allocate_quotas, TaskDataset};
use crate::ud::Split;

/// Model id of the character-LSTM baseline, which needs no embeddings.
pub const CHAR_LSTM_ID: &str = "chlstm";
/// Imbalance cap kept when subsampling the training split.
pub const SUBSAMPLE_MAX_IMBALANCE: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingChoice {
    First,
    Last,
    /// Train with both and keep the better one on dev, per seed.
    Auto,
}

impl PoolingChoice {
    fn candidates(self) -> &'static [SubwordPooling] {
        match self {
            PoolingChoice::First => &[SubwordPooling::First],
            PoolingChoice::Last => &[SubwordPooling::Last],
            PoolingChoice::Auto => &SubwordPooling::BOTH,
        }
    }
}

impl std::str::FromStr for PoolingChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "first" => Ok(PoolingChoice::First),
            "last" => Ok(PoolingChoice::Last),
            "auto" => Ok(PoolingChoice::Auto),
            _ => Err(format!("unknown pooling {s:?} (first, last, auto)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// Task name, e.g. `de_NOUN_Case`.
    pub task: String,
    pub model_id: String,
    pub variant: ProbeVariant,
    pub layer_mode: LayerMode,
    pub pooling: PoolingChoice,
    /// Applied to train, dev and test alike.
    pub masking: Masking,
    pub train_fraction: f64,
    pub n_seeds: usize,
    pub base_seed: u64,
    pub train: TrainConfig,
}

impl ExperimentSpec {
    pub fn new(task: &str, model_id: &str) -> Self {
        Self {
            task: task.into(),
            model_id: model_id.into(),
            variant: ProbeVariant::Mlp50,
            layer_mode: LayerMode::WeightedSum,
            pooling: PoolingChoice::Auto,
            masking: Masking::NONE,
            train_fraction: 1.0,
            n_seeds: 10,
            base_seed: 0,
            train: TrainConfig::default(),
        }
    }

    pub fn with_masking(&self, masking: impl Into<Masking>) -> Self {
        Self { masking: masking.into(), ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: String| Err(RunError::Spec(m));
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return bad(format!("train_fraction {} outside (0, 1]", self.train_fraction));
        }
        if self.n_seeds == 0 {
            return bad("n_seeds must be positive".into());
        }
        self.train.validate().map_err(RunError::Spec)
    }

    /// Key of this experiment on `dataset` in the journal.
    pub fn hash(&self, dataset: &TaskDataset) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("spec serializes"));
        h.update(b"\n");
        h.update(dataset_fingerprint(dataset));
        hex::encode(h.finalize())
    }
}

/// SHA-256 of a dataset's canonical JSON.
pub fn dataset_fingerprint(dataset: &TaskDataset) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(dataset).expect("dataset serializes")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub pooling: SubwordPooling,
    pub dev_accuracy: f64,
    pub test_accuracy: f64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    /// Why the seed was dropped, if it diverged.
    pub diverged: Option<String>,
    /// Softmaxed layer weights of a weighted-sum probe.
    pub layer_weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub spec_hash: String,
    pub n_train: usize,
    pub seeds: Vec<SeedResult>,
    /// Over non-diverged seeds.
    pub mean_test_accuracy: f64,
    pub std_test_accuracy: f64,
    pub mean_dev_accuracy: f64,
    pub warnings: Vec<String>,
    /// Not serialized, so result artifacts are byte-reproducible.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl ExperimentResult {
    pub fn kept_seeds(&self) -> impl Iterator<Item = &SeedResult> {
        self.seeds.iter().filter(|s| s.diverged.is_none())
    }

    /// Element-wise mean of the layer weights over kept seeds.
    pub fn mean_layer_weights(&self) -> Option<Vec<f64>> {
        let all: Vec<&Vec<f64>> = self.kept_seeds().filter_map(|s| s.layer_weights.as_ref()).collect();
        let first = all.first()?;
        Some((0..first.len()).map(|i| all.iter().map(|w| w[i]).sum::<f64>() / all.len() as f64).collect())
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{} embeddings missing, e.g. {}", .0.len(), .0.first().map(|id| id.to_hex()).unwrap_or_default())]
    MissingEmbeddings(Vec<RequestId>),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Perturb(#[from] PerturbError),
    #[error("invalid experiment: {0}")]
    Spec(String),
    #[error("training subset: {0}")]
    TrainFraction(String),
    #[error("every seed diverged: {}", .0.join("; "))]
    AllDiverged(Vec<String>),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("journal {path}: {source}")]
    Journal {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Where the probe's inputs come from.
#[derive(Clone)]
pub enum Encoder {
    Embeddings(Arc<dyn EmbeddingProvider>),
    CharLstm,
}

impl Encoder {
    pub fn model_id(&self) -> &str {
        match self {
            Encoder::Embeddings(p) => &p.info().model_id,
            Encoder::CharLstm => CHAR_LSTM_ID,
        }
    }
}

impl std::fmt::Debug for Encoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Encoder({})", self.model_id())
    }
}

type Examples<X> = Vec<(X, usize)>;

/// Train/dev/test examples for one pooling.
struct Splits<X> {
    train: Examples<X>,
    dev: Examples<X>,
    test: Examples<X>,
}

fn label_ids(dataset: &TaskDataset, split: &[PerturbedInstance]) -> Result<Vec<usize>, RunError> {
    split
        .iter()
        .map(|i| dataset.label_index(&i.label).ok_or_else(|| RunError::Spec(format!("label {:?} not in the label set", i.label))))
        .collect()
}

/// Indices of the training subset for `fraction`, class proportions kept
/// within the imbalance cap. `None` means the whole split.
pub fn subsample_indices(dataset: &TaskDataset, fraction: f64, seed: u64) -> Result<Option<Vec<usize>>, RunError> {
    let n = dataset.train.len();
    let want = (fraction * n as f64).round() as usize;
    if want >= n {
        return Ok(None);
    }
    let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, inst) in dataset.train.iter().enumerate() {
        by_label.entry(&inst.label).or_default().push(i);
    }
    let avail: Vec<usize> = by_label.values().map(Vec::len).collect();
    let quotas = allocate_quotas(&avail, want, SUBSAMPLE_MAX_IMBALANCE).ok_or_else(|| {
        RunError::TrainFraction(format!("{want} of {n} training samples cannot cover {} classes within the imbalance cap", avail.len()))
    })?;
    let mut r = rng::seeded(rng::derive_str(seed, "subsample"));
    let mut picked: Vec<usize> = Vec::with_capacity(want);
    for (mut idx, q) in by_label.into_values().zip(quotas) {
        idx.shuffle(&mut r);
        picked.extend_from_slice(&idx[..q]);
    }
    picked.sort_unstable();
    Ok(Some(picked))
}

fn select<X: Clone>(examples: Examples<X>, subset: Option<&[usize]>) -> Examples<X> {
    match subset {
        None => examples,
        Some(idx) => idx.iter().map(|&i| examples[i].clone()).collect(),
    }
}

/// Pooled embedding features for both subword poolings, embedding each
/// request once.
fn embedding_features(
    provider: &dyn EmbeddingProvider,
    dataset: &TaskDataset,
    perturbed: &PerturbedDataset,
    poolings: &[SubwordPooling],
) -> Result<BTreeMap<SubwordPooling, Splits<Vec<f32>>>, RunError> {
    let model_id = &provider.info().model_id;
    let mut missing = Vec::new();
    let mut per_split: Vec<BTreeMap<SubwordPooling, Examples<Vec<f32>>>> = Vec::new();
    for split in [Split::Train, Split::Dev, Split::Test] {
        let instances = perturbed.split(split);
        let labels = label_ids(dataset, instances)?;
        let mut out: BTreeMap<SubwordPooling, Examples<Vec<f32>>> = poolings.iter().map(|&p| (p, Vec::new())).collect();
        for (inst, y) in instances.iter().zip(labels) {
            let request = EmbeddingRequest::from_perturbed(inst, model_id);
            match provider.embed(&request) {
                Ok(e) => {
                    for (&p, rows) in out.iter_mut() {
                        rows.push((pool_subwords(&e, inst.target_index, p)?, y));
                    }
                }
                Err(EmbedError::NotFound(id)) => missing.push(id),
                Err(e) => return Err(e.into()),
            }
        }
        per_split.push(out);
    }
    if !missing.is_empty() {
        missing.sort();
        missing.dedup();
        return Err(RunError::MissingEmbeddings(missing));
    }
    let mut test = per_split.pop().unwrap();
    let mut dev = per_split.pop().unwrap();
    let mut train = per_split.pop().unwrap();
    Ok(poolings
        .iter()
        .map(|p| (*p, Splits { train: train.remove(p).unwrap(), dev: dev.remove(p).unwrap(), test: test.remove(p).unwrap() }))
        .collect())
}

fn char_features(
    dataset: &TaskDataset,
    perturbed: &PerturbedDataset,
    poolings: &[SubwordPooling],
    vocab: Option<&CharVocab>,
) -> Result<(CharVocab, BTreeMap<SubwordPooling, Splits<CharInput>>), RunError> {
    let mut seqs = Vec::new();
    for split in [Split::Train, Split::Dev, Split::Test] {
        let instances = perturbed.split(split);
        let labels = label_ids(dataset, instances)?;
        let s: Vec<_> = instances.iter().map(char_mask).collect::<Result<_, _>>()?;
        seqs.push(s.into_iter().zip(labels).collect::<Vec<_>>());
    }
    let vocab = vocab.cloned().unwrap_or_else(|| CharVocab::from_sequences(seqs[0].iter().map(|(s, _)| s)));
    let enc = |k: usize, p: SubwordPooling| seqs[k].iter().map(|(s, y)| (vocab.encode(s, p), *y)).collect();
    let feats = poolings.iter().map(|&p| (p, Splits { train: enc(0, p), dev: enc(1, p), test: enc(2, p) })).collect();
    Ok((vocab, feats))
}

/// One trained candidate of one seed.
struct Trained<M> {
    model: M,
    pooling: SubwordPooling,
    dev_accuracy: f64,
    dev_loss: f64,
    test_accuracy: f64,
    epochs_run: usize,
    best_epoch: usize,
}

/// Train every pooling candidate and keep the best on dev: higher
/// accuracy, then lower loss, then last-subword pooling.
fn train_seed<M: Classifier<f32>>(
    make: &dyn Fn(u64) -> Result<M, RunError>,
    feats: &BTreeMap<SubwordPooling, Splits<M::Input>>,
    subset: Option<&[usize]>,
    config: &TrainConfig,
    seed: u64,
) -> Result<Result<Trained<M>, String>, RunError>
where
    M::Input: Clone,
{
    let mut best: Option<Trained<M>> = None;
    let mut failures = Vec::new();
    // Iterate Last first so that full ties keep it.
    for (&pooling, data) in feats.iter().rev() {
        let mut model = make(seed)?;
        let train_set = select(data.train.clone(), subset);
        let report = match train(&mut model, &train_set, &data.dev, &TrainConfig { seed, ..config.clone() }) {
            Ok(r) => r,
            Err(TrainError::NonFinite { epoch, detail }) => {
                failures.push(format!("{pooling} pooling diverged in epoch {epoch}: {detail}"));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let (dev_loss, dev_accuracy) = evaluate(&model, &data.dev);
        let (_, test_accuracy) = evaluate(&model, &data.test);
        let better = best.as_ref().is_none_or(|b| dev_accuracy > b.dev_accuracy || (dev_accuracy == b.dev_accuracy && dev_loss < b.dev_loss));
        if better {
            best = Some(Trained {
                model,
                pooling,
                dev_accuracy,
                dev_loss,
                test_accuracy,
                epochs_run: report.epochs_run,
                best_epoch: report.best_epoch,
            });
        }
    }
    Ok(best.ok_or_else(|| failures.join("; ")))
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

/// Seed of the `i`-th run of an experiment.
pub fn seed_of(base_seed: u64, i: usize) -> u64 {
    rng::derive(base_seed, i as u64)
}

struct Prepared<M: Classifier<f32>> {
    make: Box<dyn Fn(u64) -> Result<M, RunError> + Send + Sync>,
    feats: BTreeMap<SubwordPooling, Splits<M::Input>>,
    kind: &'static str,
    config: serde_json::Value,
}

fn prepare_mlp(spec: &ExperimentSpec, dataset: &TaskDataset, provider: &dyn EmbeddingProvider, perturbed: &PerturbedDataset) -> Result<Prepared<MlpProbe<f32>>, RunError> {
    let info = provider.info();
    let config = MlpConfig::new(spec.variant, spec.layer_mode, info.n_layers, info.dim, dataset.labels.len());
    config.validate().map_err(RunError::Spec)?;
    let feats = embedding_features(provider, dataset, perturbed, spec.pooling.candidates())?;
    let json = serde_json::to_value(&config).expect("config serializes");
    Ok(Prepared {
        make: Box::new(move |seed| MlpProbe::new(config.clone(), seed).map_err(RunError::Spec)),
        feats,
        kind: "mlp",
        config: json,
    })
}

fn prepare_lstm(spec: &ExperimentSpec, dataset: &TaskDataset, perturbed: &PerturbedDataset) -> Result<Prepared<CharLstm<f32>>, RunError> {
    let (vocab, feats) = char_features(dataset, perturbed, spec.pooling.candidates(), None)?;
    let config = CharLstmConfig::new(vocab, dataset.labels.len());
    let json = serde_json::to_value(&config).expect("config serializes");
    Ok(Prepared { make: Box::new(move |seed| Ok(CharLstm::new(config.clone(), seed))), feats, kind: "char_lstm", config: json })
}

fn run_prepared<M: Classifier<f32>>(
    spec: &ExperimentSpec,
    dataset: &TaskDataset,
    prepared: Prepared<M>,
    layer_weights: impl Fn(&M) -> Option<Vec<f64>>,
    checkpoints: Option<&Path>,
    started: Instant,
) -> Result<ExperimentResult, RunError>
where
    M::Input: Clone,
{
    let subset = subsample_indices(dataset, spec.train_fraction, spec.base_seed)?;
    let n_train = subset.as_ref().map_or(dataset.train.len(), Vec::len);
    let mut seeds = Vec::with_capacity(spec.n_seeds);
    let mut warnings = Vec::new();
    for i in 0..spec.n_seeds {
        let seed = seed_of(spec.base_seed, i);
        match train_seed(&*prepared.make, &prepared.feats, subset.as_deref(), &spec.train, seed)? {
            Ok(t) => {
                if let Some(dir) = checkpoints {
                    std::fs::create_dir_all(dir).map_err(|e| RunError::Checkpoint(format!("{}: {e}", dir.display())))?;
                    let mut config = prepared.config.clone();
                    config["pooling"] = serde_json::json!(t.pooling);
                    save_checkpoint(&dir.join(format!("seed{i}")), prepared.kind, config, t.model.params())
                        .map_err(|e| RunError::Checkpoint(e.to_string()))?;
                }
                seeds.push(SeedResult {
                    seed,
                    pooling: t.pooling,
                    dev_accuracy: t.dev_accuracy,
                    test_accuracy: t.test_accuracy,
                    epochs_run: t.epochs_run,
                    best_epoch: t.best_epoch,
                    diverged: None,
                    layer_weights: layer_weights(&t.model),
                });
            }
            Err(why) => {
                log::warn!("{} seed {i} excluded: {why}", spec.task);
                warnings.push(format!("seed {i} excluded: {why}"));
                seeds.push(SeedResult {
                    seed,
                    pooling: SubwordPooling::Last,
                    dev_accuracy: f64::NAN,
                    test_accuracy: f64::NAN,
                    epochs_run: 0,
                    best_epoch: 0,
                    diverged: Some(why),
                    layer_weights: None,
                });
            }
        }
    }
    let kept: Vec<&SeedResult> = seeds.iter().filter(|s| s.diverged.is_none()).collect();
    if kept.is_empty() {
        return Err(RunError::AllDiverged(warnings));
    }
    let (mean_test_accuracy, std_test_accuracy) = mean_std(&kept.iter().map(|s| s.test_accuracy).collect::<Vec<_>>());
    let (mean_dev_accuracy, _) = mean_std(&kept.iter().map(|s| s.dev_accuracy).collect::<Vec<_>>());
    Ok(ExperimentResult {
        spec: spec.clone(),
        spec_hash: spec.hash(dataset),
        n_train,
        seeds,
        mean_test_accuracy,
        std_test_accuracy,
        mean_dev_accuracy,
        warnings,
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

fn check_encoder(spec: &ExperimentSpec, encoder: &Encoder) -> Result<(), RunError> {
    if spec.model_id != encoder.model_id() {
        return Err(RunError::Spec(format!("experiment names model {:?} but the encoder is {:?}", spec.model_id, encoder.model_id())));
    }
    Ok(())
}

/// Train `n_seeds` probes on `dataset` under `spec.masking` and report
/// test accuracy at the best dev epoch.
pub fn run_experiment(spec: &ExperimentSpec, dataset: &TaskDataset, encoder: &Encoder) -> Result<ExperimentResult, RunError> {
    run_experiment_with(spec, dataset, encoder, None)
}

/// As [`run_experiment`], also writing one checkpoint per kept seed.
pub fn run_experiment_with(spec: &ExperimentSpec, dataset: &TaskDataset, encoder: &Encoder, checkpoints: Option<&Path>) -> Result<ExperimentResult, RunError> {
    let started = Instant::now();
    spec.validate()?;
    check_encoder(spec, encoder)?;
    let perturbed = perturb_dataset(dataset, spec.masking, spec.base_seed);
    match encoder {
        Encoder::Embeddings(p) => {
            let prepared = prepare_mlp(spec, dataset, p.as_ref(), &perturbed)?;
            run_prepared(spec, dataset, prepared, |m| m.layer_weights().map(|w| w.iter().map(|&v| f64::from(v)).collect()), checkpoints, started)
        }
        Encoder::CharLstm => {
            let prepared = prepare_lstm(spec, dataset, &perturbed)?;
            run_prepared(spec, dataset, prepared, |_| None, checkpoints, started)
        }
    }
}

/// One unit of suite work.
#[derive(Debug, Clone)]
pub struct Job {
    pub spec: ExperimentSpec,
    pub dataset: Arc<TaskDataset>,
    /// Where to save per-seed probe weights, if anywhere.
    pub checkpoints: Option<PathBuf>,
}

impl Job {
    pub fn new(spec: ExperimentSpec, dataset: Arc<TaskDataset>) -> Self {
        Self { spec, dataset, checkpoints: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub spec_hash: String,
    pub task: String,
    pub model_id: String,
    pub masking: String,
    pub result: Option<ExperimentResult>,
    pub error: Option<String>,
}

/// Worker count from `MORPHOPROBE_WORKERS`, else the number of CPUs.
pub fn worker_count() -> usize {
    std::env::var("MORPHOPROBE_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Run every job, reusing finished results from `journal`. Failures are
/// recorded in their row and do not stop the suite. Rows follow job order.
pub fn run_suite(jobs: &[Job], encoders: &BTreeMap<String, Encoder>, journal: Option<&Journal>, workers: usize) -> Vec<SuiteRow> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build().expect("thread pool");
    pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let spec_hash = job.spec.hash(&job.dataset);
                let row = |result: Result<ExperimentResult, String>| SuiteRow {
                    spec_hash: spec_hash.clone(),
                    task: job.spec.task.clone(),
                    model_id: job.spec.model_id.clone(),
                    masking: job.spec.masking.label(),
                    error: result.as_ref().err().cloned(),
                    result: result.ok(),
                };
                if let Some(done) = journal.and_then(|j| j.finished(&spec_hash)) {
                    return row(Ok(done));
                }
                let Some(encoder) = encoders.get(&job.spec.model_id) else {
                    return row(Err(format!("no encoder registered for model {:?}", job.spec.model_id)));
                };
                if let Some(j) = journal {
                    if let Err(e) = j.start(&spec_hash) {
                        return row(Err(e.to_string()));
                    }
                }
                let outcome = run_experiment_with(&job.spec, &job.dataset, encoder, job.checkpoints.as_deref()).map_err(|e| e.to_string());
                if let Some(j) = journal {
                    if let Err(e) = j.finish(&spec_hash, &outcome) {
                        return row(Err(e.to_string()));
                    }
                }
                row(outcome)
            })
            .collect()
    })
}

/// Accuracy at each training fraction.
pub fn train_size_ablation(dataset: &TaskDataset, encoder: &Encoder, base: &ExperimentSpec, fractions: &[f64]) -> Result<Vec<ExperimentResult>, RunError> {
    fractions.iter().map(|&f| run_experiment(&ExperimentSpec { train_fraction: f, ..base.clone() }, dataset, encoder)).collect()
}

/// Every single layer, the concatenation and the learned weighted sum.
pub fn layer_ablation(dataset: &TaskDataset, provider: Arc<dyn EmbeddingProvider>, base: &ExperimentSpec) -> Result<Vec<ExperimentResult>, RunError> {
    let n_layers = provider.info().n_layers;
    let encoder = Encoder::Embeddings(provider);
    let modes = (0..n_layers).map(LayerMode::Single).chain([LayerMode::Concat, LayerMode::WeightedSum]);
    modes.map(|layer_mode| run_experiment(&ExperimentSpec { layer_mode, ..base.clone() }, dataset, &encoder)).collect()
}

/// Probe a randomly initialized stand-in for `base.model_id`'s shape.
pub fn random_control(dataset: &TaskDataset, control: RandomControl, base: &ExperimentSpec) -> Result<ExperimentResult, RunError> {
    let model_id = control.info().model_id.clone();
    let encoder = Encoder::Embeddings(Arc::new(control));
    run_experiment(&ExperimentSpec { model_id, ..base.clone() }, dataset, &encoder)
}

/// Model id used for a random control of `model_id`.
pub fn random_model_id(model_id: &str, mode: RandomMode) -> String {
    match mode {
        RandomMode::FullyRandom => format!("{model_id}+fully_random"),
        RandomMode::RandomLayers => format!("{model_id}+random_layers"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::ModelInfo;
    use crate::perturb::Perturbation;
    use crate::synthetic::{generate, SyntheticConfig, SyntheticKind};

    fn quick() -> TrainConfig {
        TrainConfig { batch_size: 16, max_epochs: 40, patience: 5, lr: 3e-3, ..TrainConfig::default() }
    }

    fn random_encoder() -> Encoder {
        let info = ModelInfo { model_id: "rnd".into(), n_layers: 3, dim: 16, tokenizer: "pieces3".into() };
        Encoder::Embeddings(Arc::new(RandomControl::new(info, RandomMode::FullyRandom, 1)))
    }

    #[test]
    fn subsample_sizes_and_errors() {
        let d = generate(SyntheticKind::Suffix, &SyntheticConfig { n_train: 2000, ..SyntheticConfig::default() });
        let idx = subsample_indices(&d, 0.05, 1).unwrap().unwrap();
        assert_eq!(idx.len(), 100);
        assert_eq!(subsample_indices(&d, 1.0, 1).unwrap(), None);
        assert!(matches!(subsample_indices(&d, 0.001, 1), Err(RunError::TrainFraction(_))));
    }

    #[test]
    fn suffix_language_with_random_vectors() {
        let d = generate(SyntheticKind::Suffix, &SyntheticConfig::default());
        let spec = ExperimentSpec { n_seeds: 2, train: quick(), ..ExperimentSpec::new(&d.spec.name(), "rnd") };
        let enc = random_encoder();
        let r = run_experiment(&spec, &d, &enc).unwrap();
        assert!(r.mean_test_accuracy >= 0.95, "{r:?}");
        assert!(r.kept_seeds().all(|s| s.pooling == SubwordPooling::Last));
        let again = run_experiment(&spec, &d, &enc).unwrap();
        assert_eq!(r.seeds, again.seeds);
        let targ = run_experiment(&spec.with_masking(Perturbation::Targ), &d, &enc).unwrap();
        assert!(targ.mean_test_accuracy < 0.5, "{targ:?}");
    }

    #[test]
    fn wrong_encoder_is_rejected() {
        let d = generate(SyntheticKind::Suffix, &SyntheticConfig::default());
        let spec = ExperimentSpec::new("t", "other");
        assert!(matches!(run_experiment(&spec, &d, &random_encoder()), Err(RunError::Spec(_))));
    }
}
