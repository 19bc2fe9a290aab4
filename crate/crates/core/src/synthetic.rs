//! Constructed languages whose label lives in a known place, used to check
//! that probes, perturbations and attributions point where they should.
//!
//! Every sentence has five words with the target in the middle, so the
//! players −2…2 have referents and the outer four are dummies. Target forms
//! never repeat, which keeps them disjoint across splits.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::{self, Rng};
use crate::sampler::{ProbingInstance, TaskDataset, TaskSpec};

pub const SENTENCE_LEN: usize = 5;
pub const TARGET_INDEX: usize = 2;

const CONSONANTS: &[u8] = b"bdgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// The target's last character names the label; context is noise.
    Suffix,
    /// The word right before the target names the label; the target is noise.
    LeftMarker,
}

impl SyntheticKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SyntheticKind::Suffix => "suffix",
            SyntheticKind::LeftMarker => "left_marker",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    /// Relative class frequencies; its length is the number of classes (≤ 5).
    pub class_weights: Vec<usize>,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { n_train: 200, n_dev: 60, n_test: 120, class_weights: vec![1, 1, 1], seed: 0 }
    }
}

const LABELS: [&str; 5] = ["A", "B", "C", "D", "E"];
/// Final vowel of a suffix-language target, per label.
const FINALS: [u8; 5] = *b"aeiou";
/// Endings of suffix-language targets, per label. A small closed set, so
/// that backends which see subword identities (not characters) can still
/// generalize to unseen stems.
const ENDINGS: [[&str; 2]; 5] = [["ora", "ula"], ["ine", "ete"], ["idi", "oki"], ["aso", "umo"], ["esu", "anu"]];
/// Marker words of the left-marker language, per label. No context word is
/// two characters long, so these never occur elsewhere.
const MARKERS: [[&str; 2]; 5] = [["ka", "ki"], ["tu", "te"], ["mo", "ma"], ["su", "si"], ["ne", "no"]];

fn syllable(r: &mut Rng) -> [u8; 2] {
    [*CONSONANTS.choose(r).unwrap(), *VOWELS.choose(r).unwrap()]
}

/// A random 3-or-4 letter context word.
fn context_word(r: &mut Rng) -> String {
    let mut w: Vec<u8> = syllable(r).to_vec();
    w.push(*CONSONANTS.choose(r).unwrap());
    if r.random_bool(0.5) {
        w.push(*VOWELS.choose(r).unwrap());
    }
    String::from_utf8(w).unwrap()
}

/// Label ids in a seeded order with the requested proportions.
fn label_sequence(n: usize, weights: &[usize], r: &mut Rng) -> Vec<usize> {
    let total: usize = weights.iter().sum();
    let mut ids: Vec<usize> = Vec::with_capacity(n);
    let mut acc = 0;
    for (k, &w) in weights.iter().enumerate() {
        acc += w;
        let upto = if k + 1 == weights.len() { n } else { n * acc / total };
        ids.resize(upto, k);
    }
    ids.shuffle(r);
    ids
}

/// Draw a fresh six-letter target form: a CVC stem and a three-letter
/// ending, either from `endings` or random.
fn fresh_target(r: &mut Rng, endings: Option<&[&str]>, used: &mut BTreeSet<String>) -> String {
    loop {
        let mut w: Vec<u8> = syllable(r).to_vec();
        w.push(*CONSONANTS.choose(r).unwrap());
        match endings {
            Some(e) => w.extend_from_slice(e.choose(r).unwrap().as_bytes()),
            None => {
                w.extend(syllable(r).iter().rev());
                w.push(*VOWELS.choose(r).unwrap());
            }
        }
        let w = String::from_utf8(w).unwrap();
        if used.insert(w.clone()) {
            return w;
        }
    }
}

/// Generate a task dataset for `kind`.
pub fn generate(kind: SyntheticKind, config: &SyntheticConfig) -> TaskDataset {
    let n_classes = config.class_weights.len();
    assert!((2..=LABELS.len()).contains(&n_classes), "2 to {} classes", LABELS.len());
    let mut r = rng::seeded(rng::derive_str(config.seed, kind.as_str()));
    let mut used = BTreeSet::new();
    let mut split = |n: usize, r: &mut Rng| -> Vec<ProbingInstance> {
        label_sequence(n, &config.class_weights, r)
            .into_iter()
            .map(|y| {
                let mut words: Vec<String> = (0..SENTENCE_LEN).map(|_| context_word(r)).collect();
                match kind {
                    SyntheticKind::Suffix => words[TARGET_INDEX] = fresh_target(r, Some(&ENDINGS[y]), &mut used),
                    SyntheticKind::LeftMarker => {
                        words[TARGET_INDEX] = fresh_target(r, None, &mut used);
                        words[TARGET_INDEX - 1] = MARKERS[y].choose(r).unwrap().to_string();
                    }
                }
                ProbingInstance { words, target_index: TARGET_INDEX, label: LABELS[y].to_string() }
            })
            .collect()
    };
    let train = split(config.n_train, &mut r);
    let dev = split(config.n_dev, &mut r);
    let test = split(config.n_test, &mut r);
    TaskDataset {
        spec: TaskSpec::new(&format!("syn-{}", kind.as_str()), "NOUN", "Case"),
        train,
        dev,
        test,
        labels: LABELS[..n_classes].iter().map(|s| s.to_string()).collect(),
    }
}

/// The rule each language was built with, applied to a raw instance.
pub fn decision_rule(kind: SyntheticKind, instance: &ProbingInstance) -> Option<&'static str> {
    match kind {
        SyntheticKind::Suffix => {
            let last = *instance.target_form().as_bytes().last()?;
            FINALS.iter().position(|&f| f == last).map(|k| LABELS[k])
        }
        SyntheticKind::LeftMarker => {
            let w = instance.words.get(instance.target_index.checked_sub(1)?)?;
            MARKERS.iter().position(|m| m.contains(&w.as_str())).map(|k| LABELS[k])
        }
    }
}
