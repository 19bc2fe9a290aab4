//! Probing-task construction from a merged UD corpus.
//!
//! A task is a ⟨language, POS, feature⟩ triple. Instances are sentences with
//! one marked target word whose feature value is the label. Sampling keeps
//! the UD split provenance, bounds sentence length, drops rare classes,
//! caps class imbalance per split and keeps target surface forms disjoint
//! across splits.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;
use crate::ud::{Corpus, Split};

pub const DEFAULT_POS: [&str; 4] = ["ADJ", "NOUN", "PROPN", "VERB"];

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskSpec {
    pub language: String,
    pub upos: String,
    pub feature: String,
}

impl TaskSpec {
    pub fn new(language: &str, upos: &str, feature: &str) -> Self {
        Self { language: language.into(), upos: upos.into(), feature: feature.into() }
    }

    /// Stable name such as `en_NOUN_Number`.
    pub fn name(&self) -> String {
        format!("{}_{}_{}", self.language, self.upos, self.feature)
    }
}

impl std::fmt::Display for TaskSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "⟨{}, {}, {}⟩", self.language, self.upos, self.feature)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbingInstance {
    pub words: Vec<String>,
    #[serde(rename = "target")]
    pub target_index: usize,
    pub label: String,
}

impl ProbingInstance {
    pub fn target_form(&self) -> &str {
        &self.words[self.target_index]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub max_imbalance: f64,
    pub min_class_count: usize,
    pub min_sentences: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_dev: 200,
            n_test: 200,
            max_imbalance: 3.0,
            min_class_count: 200,
            min_sentences: 500,
            min_len: 3,
            max_len: 40,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    /// 100/20/20 split sizes for the bundled fixture treebank.
    pub fn desk() -> Self {
        Self { n_train: 100, n_dev: 20, n_test: 20, min_class_count: 20, min_sentences: 50, ..Self::default() }
    }

    /// Multiply every count threshold by `scale` (desk-scale fixtures).
    pub fn scaled(&self, scale: f64) -> Self {
        let s = |n: usize| ((n as f64 * scale).round() as usize).max(1);
        Self {
            n_train: s(self.n_train),
            n_dev: s(self.n_dev),
            n_test: s(self.n_test),
            min_class_count: s(self.min_class_count),
            min_sentences: s(self.min_sentences),
            ..self.clone()
        }
    }

    pub fn split_size(&self, split: Split) -> usize {
        match split {
            Split::Train => self.n_train,
            Split::Dev => self.n_dev,
            Split::Test => self.n_test,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n_train == 0 || self.n_dev == 0 || self.n_test == 0 {
            return Err("split sizes must be positive".into());
        }
        if self.max_imbalance.is_nan() || self.max_imbalance < 1.0 {
            return Err("max_imbalance must be at least 1".into());
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err("sentence length bounds must satisfy 1 <= min_len <= max_len".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDataset {
    pub spec: TaskSpec,
    pub train: Vec<ProbingInstance>,
    pub dev: Vec<ProbingInstance>,
    pub test: Vec<ProbingInstance>,
    /// Sorted label set.
    pub labels: Vec<String>,
}

impl TaskDataset {
    pub fn split(&self, split: Split) -> &[ProbingInstance] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn split_mut(&mut self, split: Split) -> &mut Vec<ProbingInstance> {
        match split {
            Split::Train => &mut self.train,
            Split::Dev => &mut self.dev,
            Split::Test => &mut self.test,
        }
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.binary_search_by(|l| l.as_str().cmp(label)).ok()
    }
}

/// Candidate task with its class frequency table (all splits, all lengths).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub spec: TaskSpec,
    pub class_counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionReason {
    InsufficientSentences,
    TooFewClasses,
    CountsUnattainable,
}

impl RejectionReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectionReason::InsufficientSentences => "insufficient_sentences",
            RejectionReason::TooFewClasses => "too_few_classes",
            RejectionReason::CountsUnattainable => "counts_unattainable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[error("task rejected ({}): {detail}", reason.as_str())]
pub struct Rejection {
    pub reason: RejectionReason,
    pub detail: String,
}

fn reject(reason: RejectionReason, detail: impl Into<String>) -> Rejection {
    Rejection { reason, detail: detail.into() }
}

/// One candidate per attested ⟨POS, feature⟩ combination.
pub fn enumerate_candidates(corpus: &Corpus, pos_set: &[&str], feature_set: &[&str]) -> Vec<Candidate> {
    let mut tables: BTreeMap<(String, String), BTreeMap<String, usize>> = BTreeMap::new();
    for tok in corpus.sentences.iter().flat_map(|s| &s.tokens) {
        if !pos_set.contains(&tok.upos.as_str()) {
            continue;
        }
        for (name, value) in &tok.feats {
            if feature_set.contains(&name.as_str()) {
                *tables
                    .entry((tok.upos.clone(), name.clone()))
                    .or_default()
                    .entry(value.clone())
                    .or_default() += 1;
            }
        }
    }
    tables
        .into_iter()
        .map(|((upos, feature), class_counts)| Candidate {
            spec: TaskSpec::new(&corpus.language, &upos, &feature),
            class_counts,
        })
        .collect()
}

/// Split `total` over classes with availabilities `avail`, proportionally to
/// availability capped at `max_ratio` times the scarcest class, such that no
/// class exceeds its availability and largest/smallest ≤ `max_ratio`.
/// Returns `None` when no such allocation exists.
pub fn allocate_quotas(avail: &[usize], total: usize, max_ratio: f64) -> Option<Vec<usize>> {
    let k = avail.len();
    if k == 0 || total < k {
        return None;
    }
    let min_avail = *avail.iter().min()?;
    if min_avail == 0 {
        return None;
    }
    // Any feasible allocation has q_min <= min_avail, so q_k <= ratio * min_avail.
    let cap = |a: usize| (a as f64).min(max_ratio * min_avail as f64).floor() as usize;
    let capped: Vec<usize> = avail.iter().map(|&a| cap(a).max(1)).collect();
    let capped_sum: usize = capped.iter().sum();
    if capped_sum < total {
        return None;
    }
    // Largest-remainder proportional allocation.
    let mut quotas: Vec<usize> = capped.iter().map(|&c| c * total / capped_sum).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse((capped[i] * total) % capped_sum), i));
    let mut assigned: usize = quotas.iter().sum();
    for &i in order.iter().cycle() {
        if assigned == total {
            break;
        }
        if quotas[i] < capped[i] {
            quotas[i] += 1;
            assigned += 1;
        }
    }
    // Rounding can leave the smallest class a unit short of the ratio.
    let ok = |q: &[usize]| {
        let (lo, hi) = (*q.iter().min().unwrap(), *q.iter().max().unwrap());
        lo > 0 && hi as f64 <= max_ratio * lo as f64
    };
    let mut guard = 0;
    while !ok(&quotas) {
        let hi = (0..k).max_by_key(|&i| (quotas[i], std::cmp::Reverse(i)))?;
        let lo = (0..k).filter(|&i| quotas[i] < avail[i]).min_by_key(|&i| (quotas[i], i))?;
        if hi == lo {
            return None;
        }
        quotas[hi] -= 1;
        quotas[lo] += 1;
        guard += 1;
        if guard > total {
            return None;
        }
    }
    Some(quotas)
}

struct Eligible {
    words: Vec<String>,
    target_index: usize,
    label: String,
}

/// Sample a task dataset, or explain why the task is impossible.
pub fn sample_task(corpus: &Corpus, spec: &TaskSpec, config: &SamplerConfig) -> Result<TaskDataset, Rejection> {
    config.validate().map_err(|e| reject(RejectionReason::CountsUnattainable, e))?;
    if corpus.len() < config.min_sentences {
        return Err(reject(
            RejectionReason::InsufficientSentences,
            format!("{} sentences, need {}", corpus.len(), config.min_sentences),
        ));
    }

    let mut totals: BTreeMap<&str, usize> = BTreeMap::new();
    for tok in corpus.sentences.iter().flat_map(|s| &s.tokens) {
        if tok.upos == spec.upos {
            if let Some(v) = tok.feats.get(&spec.feature) {
                *totals.entry(v.as_str()).or_default() += 1;
            }
        }
    }
    let labels: Vec<String> = totals
        .iter()
        .filter(|(_, &n)| n >= config.min_class_count)
        .map(|(v, _)| v.to_string())
        .collect();
    if labels.len() < 2 {
        return Err(reject(
            RejectionReason::TooFewClasses,
            format!("{} class(es) with at least {} occurrences", labels.len(), config.min_class_count),
        ));
    }

    let mut rng = rng::seeded(config.seed);
    // One eligible target per sentence, drawn uniformly among matching tokens.
    let mut eligible: BTreeMap<Split, Vec<Eligible>> = BTreeMap::new();
    for sentence in &corpus.sentences {
        if sentence.len() < config.min_len || sentence.len() > config.max_len {
            continue;
        }
        let matches: Vec<(usize, &str)> = sentence
            .tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| t.upos == spec.upos)
            .filter_map(|(i, t)| t.feats.get(&spec.feature).map(|v| (i, v.as_str())))
            .filter(|(_, v)| labels.binary_search_by(|l| l.as_str().cmp(v)).is_ok())
            .collect();
        if matches.is_empty() {
            continue;
        }
        let (target_index, label) = matches[rng.random_range(0..matches.len())];
        eligible.entry(sentence.split).or_default().push(Eligible {
            words: sentence.forms(),
            target_index,
            label: label.to_string(),
        });
    }

    let mut claimed: BTreeSet<String> = BTreeSet::new();
    let mut dataset = TaskDataset {
        spec: spec.clone(),
        train: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
        labels: labels.clone(),
    };
    for split in [Split::Test, Split::Dev, Split::Train] {
        let pool = eligible.remove(&split).unwrap_or_default();
        let mut by_class: Vec<Vec<Eligible>> = labels.iter().map(|_| Vec::new()).collect();
        for e in pool {
            if claimed.contains(&e.words[e.target_index]) {
                continue;
            }
            let class = labels.binary_search(&e.label).expect("label filtered above");
            by_class[class].push(e);
        }
        let avail: Vec<usize> = by_class.iter().map(Vec::len).collect();
        let quotas = allocate_quotas(&avail, config.split_size(split), config.max_imbalance).ok_or_else(|| {
            reject(
                RejectionReason::CountsUnattainable,
                format!(
                    "{split}: need {} instances with imbalance <= {}, available per class {:?}",
                    config.split_size(split),
                    config.max_imbalance,
                    labels.iter().zip(&avail).collect::<Vec<_>>()
                ),
            )
        })?;
        let mut chosen = Vec::with_capacity(config.split_size(split));
        for (mut pool, quota) in by_class.into_iter().zip(quotas) {
            pool.shuffle(&mut rng);
            pool.truncate(quota);
            chosen.extend(pool);
        }
        chosen.shuffle(&mut rng);
        for e in &chosen {
            claimed.insert(e.words[e.target_index].clone());
        }
        *dataset.split_mut(split) = chosen
            .into_iter()
            .map(|e| ProbingInstance { words: e.words, target_index: e.target_index, label: e.label })
            .collect();
    }
    Ok(dataset)
}

/// A broken dataset invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    SplitSize { split: Split, expected: usize, actual: usize },
    Imbalance { split: Split, largest: usize, smallest: usize },
    SharedTargetForm { form: String, splits: Vec<Split> },
    SentenceLength { split: Split, index: usize, length: usize },
    TargetOutOfRange { split: Split, index: usize },
    UnknownLabel { split: Split, index: usize, label: String },
    TooFewLabels { count: usize },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::SplitSize { split, expected, actual } => write!(f, "{split}: {actual} instances, expected {expected}"),
            Violation::Imbalance { split, largest, smallest } => {
                write!(f, "{split}: class imbalance {largest}:{smallest}")
            }
            Violation::SharedTargetForm { form, splits } => write!(f, "target form {form:?} shared by {splits:?}"),
            Violation::SentenceLength { split, index, length } => write!(f, "{split}[{index}]: length {length}"),
            Violation::TargetOutOfRange { split, index } => write!(f, "{split}[{index}]: target out of range"),
            Violation::UnknownLabel { split, index, label } => write!(f, "{split}[{index}]: unknown label {label:?}"),
            Violation::TooFewLabels { count } => write!(f, "{count} labels"),
        }
    }
}

/// Check every dataset invariant; empty iff the dataset is valid.
pub fn validate_dataset(dataset: &TaskDataset, config: &SamplerConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    if dataset.labels.len() < 2 {
        out.push(Violation::TooFewLabels { count: dataset.labels.len() });
    }
    let mut form_splits: BTreeMap<&str, BTreeSet<Split>> = BTreeMap::new();
    for split in Split::ALL {
        let instances = dataset.split(split);
        if instances.len() != config.split_size(split) {
            out.push(Violation::SplitSize { split, expected: config.split_size(split), actual: instances.len() });
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for (index, inst) in instances.iter().enumerate() {
            let length = inst.words.len();
            if length < config.min_len || length > config.max_len {
                out.push(Violation::SentenceLength { split, index, length });
            }
            if inst.target_index >= length {
                out.push(Violation::TargetOutOfRange { split, index });
                continue;
            }
            if dataset.label_index(&inst.label).is_none() {
                out.push(Violation::UnknownLabel { split, index, label: inst.label.clone() });
            }
            *counts.entry(&inst.label).or_default() += 1;
            form_splits.entry(inst.target_form()).or_default().insert(split);
        }
        if let (Some(&largest), Some(&smallest)) = (counts.values().max(), counts.values().min()) {
            if largest as f64 > config.max_imbalance * smallest as f64 {
                out.push(Violation::Imbalance { split, largest, smallest });
            }
        }
    }
    for (form, splits) in form_splits {
        if splits.len() > 1 {
            out.push(Violation::SharedTargetForm { form: form.to_string(), splits: splits.into_iter().collect() });
        }
    }
    out
}

#[derive(Debug, Error)]
pub enum TaskIoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Json {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// Task manifest written next to the instance files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskManifest {
    pub spec: TaskSpec,
    pub labels: Vec<String>,
    pub seed: u64,
    pub config: SamplerConfig,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const INSTANCES_FILE: &str = "instances.jsonl";

/// Write `dir/manifest.json` and `dir/{train,dev,test}/instances.jsonl`.
pub fn write_task(dir: &Path, dataset: &TaskDataset, config: &SamplerConfig) -> Result<(), TaskIoError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| TaskIoError::Io { path, source }
    };
    for split in Split::ALL {
        let split_dir = dir.join(split.as_str());
        fs::create_dir_all(&split_dir).map_err(io(&split_dir))?;
        let path = split_dir.join(INSTANCES_FILE);
        let mut buf = Vec::new();
        for inst in dataset.split(split) {
            serde_json::to_writer(&mut buf, inst).expect("instances serialize");
            buf.push(b'\n');
        }
        fs::write(&path, buf).map_err(io(&path))?;
    }
    let manifest = TaskManifest {
        spec: dataset.spec.clone(),
        labels: dataset.labels.clone(),
        seed: config.seed,
        config: config.clone(),
    };
    let path = dir.join(MANIFEST_FILE);
    let mut f = fs::File::create(&path).map_err(io(&path))?;
    serde_json::to_writer_pretty(&mut f, &manifest).expect("manifest serializes");
    f.write_all(b"\n").map_err(io(&path))?;
    Ok(())
}

/// Read a task directory written by [`write_task`].
pub fn read_task(dir: &Path) -> Result<(TaskDataset, TaskManifest), TaskIoError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|source| TaskIoError::Io { path: path.display().to_string(), source })?;
    let manifest: TaskManifest = serde_json::from_str(&text)
        .map_err(|source| TaskIoError::Json { path: path.display().to_string(), line: 1, source })?;
    let mut dataset = TaskDataset {
        spec: manifest.spec.clone(),
        train: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
        labels: manifest.labels.clone(),
    };
    for split in Split::ALL {
        let path = dir.join(split.as_str()).join(INSTANCES_FILE);
        let file = fs::File::open(&path).map_err(|source| TaskIoError::Io { path: path.display().to_string(), source })?;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| TaskIoError::Io { path: path.display().to_string(), source })?;
            if line.trim().is_empty() {
                continue;
            }
            let inst = serde_json::from_str(&line)
                .map_err(|source| TaskIoError::Json { path: path.display().to_string(), line: i + 1, source })?;
            dataset.split_mut(split).push(inst);
        }
    }
    Ok((dataset, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ud::{SentenceRecord, TokenRecord};

    fn token(i: usize, form: &str, upos: &str, feats: &[(&str, &str)]) -> TokenRecord {
        TokenRecord {
            index: i,
            form: form.into(),
            lemma: form.into(),
            upos: upos.into(),
            xpos: "_".into(),
            feats: feats.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            head: None,
            deprel: "_".into(),
            deps: "_".into(),
            misc: "_".into(),
            is_multiword_part: false,
        }
    }

    fn sentence(split: Split, id: usize, target: &str, value: &str) -> SentenceRecord {
        SentenceRecord {
            tokens: vec![
                token(1, "the", "DET", &[]),
                token(2, target, "NOUN", &[("Number", value)]),
                token(3, "runs", "VERB", &[("Tense", "Pres")]),
            ],
            language: "xx".into(),
            treebank_id: "fx".into(),
            split,
            sent_id: format!("{split}-{id}"),
            multiword_ranges: vec![],
        }
    }

    /// `per_split[k]` sentences per class for each split; every target form unique.
    fn corpus(per_split: [(usize, usize); 3]) -> Corpus {
        let mut sentences = Vec::new();
        for (split, (sing, plur)) in Split::ALL.into_iter().zip(per_split) {
            for i in 0..sing {
                sentences.push(sentence(split, i, &format!("{split}s{i}"), "Sing"));
            }
            for i in 0..plur {
                sentences.push(sentence(split, sing + i, &format!("{split}p{i}"), "Plur"));
            }
        }
        Corpus { language: "xx".into(), sentences }
    }

    #[test]
    fn one_candidate_for_noun_number() {
        let c = corpus([(3, 3), (0, 0), (0, 0)]);
        let cands = enumerate_candidates(&c, &["NOUN"], &["Number", "Tense"]);
        assert_eq!(cands.len(), 1);
        assert_eq!(cands[0].spec.feature, "Number");
        assert_eq!(cands[0].class_counts["Sing"], 3);
        let verbs = enumerate_candidates(&c, &["VERB"], &["Number"]);
        assert!(verbs.is_empty());
    }

    #[test]
    fn exact_default_split_sizes() {
        let c = corpus([(1500, 1500), (150, 150), (150, 150)]);
        let cfg = SamplerConfig::default();
        let ds = sample_task(&c, &TaskSpec::new("xx", "NOUN", "Number"), &cfg).unwrap();
        assert_eq!((ds.train.len(), ds.dev.len(), ds.test.len()), (2000, 200, 200));
        assert!(validate_dataset(&ds, &cfg).is_empty());
    }

    #[test]
    fn rare_class_discarded() {
        // Plur occurs 150 times in total: below 200, leaving one class.
        let c = corpus([(1500, 100), (150, 25), (150, 25)]);
        let err = sample_task(&c, &TaskSpec::new("xx", "NOUN", "Number"), &SamplerConfig::default()).unwrap_err();
        assert_eq!(err.reason, RejectionReason::TooFewClasses);
    }

    #[test]
    fn small_corpus_rejected() {
        let c = corpus([(10, 10), (5, 5), (5, 5)]);
        let err = sample_task(&c, &TaskSpec::new("xx", "NOUN", "Number"), &SamplerConfig::default()).unwrap_err();
        assert_eq!(err.reason, RejectionReason::InsufficientSentences);
    }

    #[test]
    fn unattainable_counts_rejected() {
        let c = corpus([(1500, 1500), (150, 150), (60, 40)]);
        let err = sample_task(&c, &TaskSpec::new("xx", "NOUN", "Number"), &SamplerConfig::default()).unwrap_err();
        assert_eq!(err.reason, RejectionReason::CountsUnattainable);
    }

    #[test]
    fn deterministic_under_seed() {
        let c = corpus([(300, 200), (40, 30), (40, 30)]);
        let cfg = SamplerConfig { n_train: 200, n_dev: 20, n_test: 20, min_class_count: 20, min_sentences: 50, seed: 9, ..Default::default() };
        let spec = TaskSpec::new("xx", "NOUN", "Number");
        let a = serde_json::to_vec(&sample_task(&c, &spec, &cfg).unwrap()).unwrap();
        let b = serde_json::to_vec(&sample_task(&c, &spec, &cfg).unwrap()).unwrap();
        assert_eq!(a, b);
        let other = SamplerConfig { seed: 10, ..cfg };
        assert_ne!(a, serde_json::to_vec(&sample_task(&c, &spec, &other).unwrap()).unwrap());
    }

    #[test]
    fn imbalance_is_capped() {
        let c = corpus([(1900, 300), (180, 30), (180, 30)]);
        let cfg = SamplerConfig { n_train: 1000, n_dev: 100, n_test: 100, ..Default::default() };
        let ds = sample_task(&c, &TaskSpec::new("xx", "NOUN", "Number"), &cfg).unwrap();
        assert!(validate_dataset(&ds, &cfg).is_empty());
        let sing = ds.train.iter().filter(|i| i.label == "Sing").count();
        assert_eq!(sing, 750);
    }

    #[test]
    fn validation_flags_shared_form_and_imbalance() {
        let inst = |w: &str, l: &str| ProbingInstance { words: vec!["a".into(), w.into(), "b".into()], target_index: 1, label: l.into() };
        let cfg = SamplerConfig { n_train: 5, n_dev: 1, n_test: 2, ..Default::default() };
        let mut ds = TaskDataset {
            spec: TaskSpec::new("xx", "NOUN", "Number"),
            train: vec![inst("x1", "Sing"), inst("x2", "Sing"), inst("x3", "Sing"), inst("x4", "Sing"), inst("x5", "Plur")],
            dev: vec![inst("d", "Sing")],
            test: vec![inst("t", "Sing"), inst("t2", "Plur")],
            labels: vec!["Plur".into(), "Sing".into()],
        };
        let v = validate_dataset(&ds, &cfg);
        assert_eq!(v, vec![Violation::Imbalance { split: Split::Train, largest: 4, smallest: 1 }]);
        ds.test[0] = inst("x1", "Sing");
        let v = validate_dataset(&ds, &cfg);
        assert!(v.contains(&Violation::SharedTargetForm { form: "x1".into(), splits: vec![Split::Train, Split::Test] }));
    }

    #[test]
    fn quotas_respect_ratio_and_availability() {
        assert_eq!(allocate_quotas(&[1000, 1000], 2000, 3.0), Some(vec![1000, 1000]));
        assert_eq!(allocate_quotas(&[10_000, 100], 400, 3.0), Some(vec![300, 100]));
        assert_eq!(allocate_quotas(&[10_000, 50], 400, 3.0), None);
        let q = allocate_quotas(&[7, 5, 3], 10, 3.0).unwrap();
        assert_eq!(q.iter().sum::<usize>(), 10);
    }

    #[test]
    fn task_round_trips_through_files() {
        let c = corpus([(300, 200), (40, 30), (40, 30)]);
        let cfg = SamplerConfig { n_train: 100, n_dev: 20, n_test: 20, min_class_count: 20, min_sentences: 50, seed: 1, ..Default::default() };
        let ds = sample_task(&c, &TaskSpec::new("xx", "NOUN", "Number"), &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_task(dir.path(), &ds, &cfg).unwrap();
        let (back, manifest) = read_task(dir.path()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(manifest.config, cfg);
        let line = fs::read_to_string(dir.path().join("train").join(INSTANCES_FILE)).unwrap();
        assert!(line.starts_with("{\"words\":["), "{line}");
        assert!(line.lines().next().unwrap().contains("\"target\":1"));
    }
}
