//! Input perturbations: named masking/shuffling schemes and positional
//! Shapley coalitions.
//!
//! "Left" always means earlier in the token sequence, whatever the script
//! direction.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;
use crate::sampler::{ProbingInstance, TaskDataset};
use crate::ud::Split;

/// Placeholder for a masked word; providers translate it to their own mask.
pub const MASK: &str = "⟨MASK⟩";

/// Reserved character used to mask words for the character LSTM
/// (a private-use code point).
pub const MASK_CHAR: char = '\u{E000}';

#[derive(Debug, Error, PartialEq)]
pub enum PerturbError {
    #[error("unknown perturbation {0:?}")]
    Unknown(String),
    #[error("context width must be at least 1 in {0:?}")]
    ZeroWidth(String),
    #[error("word {word:?} contains the reserved mask character")]
    ReservedCharacter { word: String },
}

/// A named perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Perturbation {
    Original,
    /// Mask the target word.
    Targ,
    /// Mask up to n words before the target.
    Left(usize),
    /// Mask up to n words after the target.
    Right(usize),
    /// Mask up to n words on both sides.
    Both(usize),
    /// Shuffle all words.
    Permute,
}

impl Perturbation {
    /// The suite used throughout the perturbation experiments.
    pub fn standard_suite() -> Vec<Perturbation> {
        use Perturbation::*;
        vec![Original, Targ, Left(2), Right(2), Both(2), Permute]
    }
}

impl fmt::Display for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Perturbation::Original => f.write_str("original"),
            Perturbation::Targ => f.write_str("targ"),
            Perturbation::Left(n) => write!(f, "l{n}"),
            Perturbation::Right(n) => write!(f, "r{n}"),
            Perturbation::Both(n) => write!(f, "b{n}"),
            Perturbation::Permute => f.write_str("permute"),
        }
    }
}

impl FromStr for Perturbation {
    type Err = PerturbError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "original" => return Ok(Perturbation::Original),
            "targ" => return Ok(Perturbation::Targ),
            "permute" => return Ok(Perturbation::Permute),
            _ => {}
        }
        let (kind, n) = lower.split_at(1);
        let n: usize = n.parse().map_err(|_| PerturbError::Unknown(s.to_string()))?;
        if n == 0 {
            return Err(PerturbError::ZeroWidth(s.to_string()));
        }
        match kind {
            "l" => Ok(Perturbation::Left(n)),
            "r" => Ok(Perturbation::Right(n)),
            "b" => Ok(Perturbation::Both(n)),
            _ => Err(PerturbError::Unknown(s.to_string())),
        }
    }
}

impl Serialize for Perturbation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Perturbation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Number of positional players.
pub const N_PLAYERS: usize = 9;
/// Index of the target player in [`PLAYER_LABELS`].
pub const TARGET_PLAYER: usize = 4;
pub const PLAYER_LABELS: [&str; N_PLAYERS] = ["-4-", "-3", "-2", "-1", "0", "1", "2", "3", "4+"];

/// Player owning a word at `offset` from the target.
pub fn player_of_offset(offset: isize) -> usize {
    (offset.clamp(-4, 4) + 4) as usize
}

/// Subset of the 9 positional players, as a bitmask (bit i = player i).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Coalition(pub u16);

impl Coalition {
    pub const FULL: Coalition = Coalition((1 << N_PLAYERS) - 1);
    pub const EMPTY: Coalition = Coalition(0);

    pub fn all() -> impl Iterator<Item = Coalition> {
        (0..1u16 << N_PLAYERS).map(Coalition)
    }

    pub fn from_players(players: &[usize]) -> Self {
        Coalition(players.iter().fold(0, |m, &p| {
            assert!(p < N_PLAYERS, "player {p} out of range");
            m | 1 << p
        }))
    }

    pub fn contains(self, player: usize) -> bool {
        self.0 >> player & 1 == 1
    }

    pub fn players(self) -> Vec<usize> {
        (0..N_PLAYERS).filter(|&p| self.contains(p)).collect()
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset_of(self, other: Coalition) -> bool {
        self.0 & !other.0 == 0
    }
}

impl fmt::Display for Coalition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels: Vec<&str> = self.players().into_iter().map(|p| PLAYER_LABELS[p]).collect();
        write!(f, "{{{}}}", labels.join(","))
    }
}

/// What an experiment does to its inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Masking {
    Perturbation(Perturbation),
    Coalition(Coalition),
}

impl Masking {
    pub const NONE: Masking = Masking::Perturbation(Perturbation::Original);

    pub fn label(&self) -> String {
        match self {
            Masking::Perturbation(p) => p.to_string(),
            Masking::Coalition(c) => format!("coalition{:03x}", c.0),
        }
    }
}

impl From<Perturbation> for Masking {
    fn from(p: Perturbation) -> Self {
        Masking::Perturbation(p)
    }
}

impl From<Coalition> for Masking {
    fn from(c: Coalition) -> Self {
        Masking::Coalition(c)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub masking: Masking,
    pub seed: u64,
}

/// A probing instance after masking or shuffling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbedInstance {
    /// Words with [`MASK`] in masked positions.
    pub words: Vec<String>,
    /// `Some(n)` for masked words, `n` being the hidden word's character count.
    pub masked: Vec<Option<usize>>,
    pub target_index: usize,
    pub label: String,
    pub provenance: Provenance,
}

impl PerturbedInstance {
    fn new(instance: &ProbingInstance, masking: Masking, seed: u64) -> Self {
        Self {
            words: instance.words.clone(),
            masked: vec![None; instance.words.len()],
            target_index: instance.target_index,
            label: instance.label.clone(),
            provenance: Provenance { masking, seed },
        }
    }

    fn mask(&mut self, position: usize) {
        if self.masked[position].is_none() {
            self.masked[position] = Some(self.words[position].chars().count());
            self.words[position] = MASK.to_string();
        }
    }

    /// Sorted masked word indices.
    pub fn masked_positions(&self) -> Vec<usize> {
        self.masked.iter().enumerate().filter(|(_, m)| m.is_some()).map(|(i, _)| i).collect()
    }
}

/// Seeded uniform permutation of `0..len`: word `perm[i]` moves to slot `i`.
pub fn permutation(len: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..len).collect();
    perm.shuffle(&mut rng::seeded(seed));
    perm
}

/// Inverse of a permutation.
pub fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (slot, &src) in perm.iter().enumerate() {
        inv[src] = slot;
    }
    inv
}

/// Apply a named perturbation. `seed` only matters for [`Perturbation::Permute`].
pub fn apply(instance: &ProbingInstance, perturbation: Perturbation, seed: u64) -> PerturbedInstance {
    let mut out = PerturbedInstance::new(instance, perturbation.into(), seed);
    let t = instance.target_index;
    let n_words = instance.words.len();
    let (left, right) = match perturbation {
        Perturbation::Original => (0, 0),
        Perturbation::Targ => {
            out.mask(t);
            (0, 0)
        }
        Perturbation::Left(n) => (n, 0),
        Perturbation::Right(n) => (0, n),
        Perturbation::Both(n) => (n, n),
        Perturbation::Permute => {
            let perm = permutation(n_words, seed);
            out.words = perm.iter().map(|&src| instance.words[src].clone()).collect();
            out.target_index = invert(&perm)[t];
            (0, 0)
        }
    };
    for pos in t.saturating_sub(left)..t {
        out.mask(pos);
    }
    for pos in (t + 1)..(t + 1 + right).min(n_words) {
        out.mask(pos);
    }
    out
}

/// Mask the words of every player absent from `coalition`.
pub fn coalition_mask(instance: &ProbingInstance, coalition: Coalition) -> PerturbedInstance {
    let mut out = PerturbedInstance::new(instance, coalition.into(), 0);
    let t = instance.target_index as isize;
    for pos in 0..instance.words.len() {
        if !coalition.contains(player_of_offset(pos as isize - t)) {
            out.mask(pos);
        }
    }
    out
}

/// Per-instance seed for stochastic perturbations of a dataset.
pub fn instance_seed(seed: u64, split: Split, index: usize) -> u64 {
    rng::derive(rng::derive_str(seed, split.as_str()), index as u64)
}

/// Apply `masking` to one instance of a dataset split.
pub fn perturb_instance(instance: &ProbingInstance, masking: Masking, seed: u64, split: Split, index: usize) -> PerturbedInstance {
    match masking {
        Masking::Perturbation(p) => apply(instance, p, instance_seed(seed, split, index)),
        Masking::Coalition(c) => coalition_mask(instance, c),
    }
}

/// A dataset with every split perturbed the same way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbedDataset {
    pub masking: Masking,
    pub seed: u64,
    pub train: Vec<PerturbedInstance>,
    pub dev: Vec<PerturbedInstance>,
    pub test: Vec<PerturbedInstance>,
}

impl PerturbedDataset {
    pub fn split(&self, split: Split) -> &[PerturbedInstance] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

pub fn perturb_dataset(dataset: &TaskDataset, masking: Masking, seed: u64) -> PerturbedDataset {
    let run = |split: Split| -> Vec<PerturbedInstance> {
        dataset
            .split(split)
            .iter()
            .enumerate()
            .map(|(i, inst)| perturb_instance(inst, masking, seed, split, i))
            .collect()
    };
    PerturbedDataset { masking, seed, train: run(Split::Train), dev: run(Split::Dev), test: run(Split::Test) }
}

/// Character rendering of a perturbed sentence for the character LSTM.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharSequence {
    pub chars: Vec<char>,
    /// Half-open character span of the target word.
    pub target_span: (usize, usize),
}

impl CharSequence {
    pub fn as_string(&self) -> String {
        self.chars.iter().collect()
    }
}

/// Render words joined by single spaces; each masked word becomes one
/// [`MASK_CHAR`] per character of the hidden word.
pub fn char_mask(instance: &PerturbedInstance) -> Result<CharSequence, PerturbError> {
    let mut chars = Vec::new();
    let mut target_span = (0, 0);
    for (i, (word, masked)) in instance.words.iter().zip(&instance.masked).enumerate() {
        if i > 0 {
            chars.push(' ');
        }
        let start = chars.len();
        match masked {
            Some(n) => chars.extend(std::iter::repeat_n(MASK_CHAR, (*n).max(1))),
            None => {
                if word.contains(MASK_CHAR) {
                    return Err(PerturbError::ReservedCharacter { word: word.clone() });
                }
                chars.extend(word.chars());
            }
        }
        if i == instance.target_index {
            target_span = (start, chars.len());
        }
    }
    Ok(CharSequence { chars, target_span })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn table4() -> ProbingInstance {
        let words = "Then he ripped open Hermione 's letter and read it out loud .";
        ProbingInstance { words: words.split(' ').map(String::from).collect(), target_index: 8, label: "Past".into() }
    }

    fn render(p: &PerturbedInstance) -> String {
        p.words.join(" ")
    }

    #[test]
    fn targ_masks_target_only() {
        let p = apply(&table4(), Perturbation::Targ, 0);
        assert_eq!(render(&p), "Then he ripped open Hermione 's letter and ⟨MASK⟩ it out loud .");
    }

    #[test]
    fn context_masks_match_table() {
        let l2 = apply(&table4(), Perturbation::Left(2), 0);
        assert_eq!(render(&l2), "Then he ripped open Hermione 's ⟨MASK⟩ ⟨MASK⟩ read it out loud .");
        let r2 = apply(&table4(), Perturbation::Right(2), 0);
        assert_eq!(render(&r2), "Then he ripped open Hermione 's letter and read ⟨MASK⟩ ⟨MASK⟩ loud .");
        let b2 = apply(&table4(), Perturbation::Both(2), 0);
        assert_eq!(render(&b2), "Then he ripped open Hermione 's ⟨MASK⟩ ⟨MASK⟩ read ⟨MASK⟩ ⟨MASK⟩ loud .");
    }

    #[test]
    fn edge_truncation() {
        let inst = ProbingInstance { words: vec!["a".into(), "b".into(), "c".into()], target_index: 0, label: "x".into() };
        let p = apply(&inst, Perturbation::Left(2), 0);
        assert_eq!(p.words, inst.words);
        let p = apply(&inst, Perturbation::Right(5), 0);
        assert_eq!(p.masked_positions(), vec![1, 2]);
    }

    #[test]
    fn permute_relocates_target() {
        let inst = table4();
        let p = apply(&inst, Perturbation::Permute, 42);
        assert_eq!(p.words[p.target_index], "read");
        let mut sorted = p.words.clone();
        sorted.sort();
        let mut orig = inst.words.clone();
        orig.sort();
        assert_eq!(sorted, orig);
        assert_eq!(apply(&inst, Perturbation::Permute, 42), p);
    }

    #[test]
    fn parse_and_display() {
        for name in ["original", "targ", "l2", "r3", "b1", "permute"] {
            assert_eq!(name.parse::<Perturbation>().unwrap().to_string(), name);
        }
        assert!("l0".parse::<Perturbation>().is_err());
        assert!("x2".parse::<Perturbation>().is_err());
        let json = serde_json::to_string(&vec![Perturbation::Targ, Perturbation::Both(2)]).unwrap();
        assert_eq!(json, r#"["targ","b2"]"#);
    }

    #[test]
    fn full_coalition_is_identity_and_empty_masks_everything() {
        let inst = table4();
        assert_eq!(coalition_mask(&inst, Coalition::FULL).words, inst.words);
        let empty = coalition_mask(&inst, Coalition::EMPTY);
        assert!(empty.words.iter().all(|w| w == MASK));
    }

    #[test]
    fn far_players_group_distant_words() {
        let inst = table4();
        // Only the 4- player present: words at offset <= -4 (indices 0..=4) survive.
        let p = coalition_mask(&inst, Coalition::from_players(&[0]));
        assert_eq!(p.masked_positions(), (5..13).collect::<Vec<_>>());
    }

    #[test]
    fn short_sentence_coalitions_collapse() {
        let inst = ProbingInstance { words: vec!["a".into(), "b".into(), "c".into()], target_index: 1, label: "x".into() };
        let distinct: BTreeSet<Vec<usize>> = Coalition::all().map(|c| coalition_mask(&inst, c).masked_positions()).collect();
        assert_eq!(distinct.len(), 8);
    }

    #[test]
    fn char_mask_per_character() {
        let inst = ProbingInstance { words: vec!["we".into(), "read".into(), "it".into()], target_index: 1, label: "x".into() };
        let p = apply(&inst, Perturbation::Targ, 0);
        let cs = char_mask(&p).unwrap();
        assert_eq!(cs.as_string(), format!("we {} it", MASK_CHAR.to_string().repeat(4)));
        assert_eq!(cs.target_span, (3, 7));
        let plain = char_mask(&apply(&inst, Perturbation::Original, 0)).unwrap();
        assert_eq!(plain.as_string(), "we read it");
        // Only the masked span differs.
        let diff: Vec<usize> = (0..cs.chars.len()).filter(|&i| cs.chars[i] != plain.chars[i]).collect();
        assert_eq!(diff, vec![3, 4, 5, 6]);
    }

    #[test]
    fn reserved_character_rejected() {
        let inst = ProbingInstance { words: vec![format!("a{MASK_CHAR}"), "b".into(), "c".into()], target_index: 1, label: "x".into() };
        assert!(matches!(char_mask(&apply(&inst, Perturbation::Original, 0)), Err(PerturbError::ReservedCharacter { .. })));
    }

    fn instance_strategy() -> impl Strategy<Value = ProbingInstance> {
        (3usize..20).prop_flat_map(|n| {
            (proptest::collection::vec("[a-z]{1,6}", n), 0..n)
                .prop_map(|(words, t)| ProbingInstance { words, target_index: t, label: "L".into() })
        })
    }

    proptest! {
        #[test]
        fn perturbations_preserve_shape(inst in instance_strategy(), n in 1usize..5, seed in any::<u64>()) {
            for p in [Perturbation::Original, Perturbation::Targ, Perturbation::Left(n), Perturbation::Right(n), Perturbation::Both(n), Perturbation::Permute] {
                let out = apply(&inst, p, seed);
                prop_assert_eq!(out.words.len(), inst.words.len());
                prop_assert_eq!(&out.label, &inst.label);
                if p != Perturbation::Permute {
                    prop_assert_eq!(out.target_index, inst.target_index);
                }
            }
        }

        #[test]
        fn permutation_inverse_restores(len in 1usize..40, seed in any::<u64>()) {
            let perm = permutation(len, seed);
            let inv = invert(&perm);
            let restored: Vec<usize> = (0..len).map(|i| perm[inv[i]]).collect();
            prop_assert_eq!(restored, (0..len).collect::<Vec<_>>());
        }

        #[test]
        fn coalition_mask_is_monotone(inst in instance_strategy(), a in 0u16..512, b in 0u16..512) {
            let (s, t) = (Coalition(a & b), Coalition(a));
            prop_assert!(s.is_subset_of(t));
            let ms: BTreeSet<usize> = coalition_mask(&inst, s).masked_positions().into_iter().collect();
            let mt: BTreeSet<usize> = coalition_mask(&inst, t).masked_positions().into_iter().collect();
            prop_assert!(ms.is_superset(&mt));
            prop_assert_eq!(coalition_mask(&inst, Coalition::FULL).words, inst.words.clone());
        }
    }
}
