//! Exact Shapley attribution over the nine positional players.
//!
//! A [`CoalitionTable`] holds the probing accuracy of every coalition
//! (players present = unmasked positions). Coalition values are normalized
//! so the empty coalition is worth 0 and the grand coalition 100, which
//! makes the Shapley values of a task sum to 100.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perturb::{Coalition, N_PLAYERS, TARGET_PLAYER};

pub const N_COALITIONS: usize = 1 << N_PLAYERS;

#[derive(Debug, Error, PartialEq)]
pub enum ShapleyError {
    #[error("degenerate task: full and all-masked accuracy are both {0}, attribution is undefined")]
    Degenerate(f64),
    #[error("coalition table has {0} entries, expected {N_COALITIONS}")]
    Incomplete(usize),
    #[error("the permutation oracle handles at most 6 players, got {0}")]
    TooManyPlayers(usize),
    #[error("accuracy {value} for coalition {coalition} is outside [0, 1]")]
    BadAccuracy { coalition: u16, value: f64 },
}

/// Accuracy for each of the 512 coalitions, indexed by bitmask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoalitionTable {
    pub task: String,
    pub model_id: String,
    pub accuracies: Vec<f64>,
}

impl CoalitionTable {
    pub fn new(task: &str, model_id: &str, accuracies: Vec<f64>) -> Result<Self, ShapleyError> {
        let t = Self { task: task.to_string(), model_id: model_id.to_string(), accuracies };
        t.validate()?;
        Ok(t)
    }

    pub fn from_map(task: &str, model_id: &str, map: &BTreeMap<Coalition, f64>) -> Result<Self, ShapleyError> {
        if map.len() != N_COALITIONS {
            return Err(ShapleyError::Incomplete(map.len()));
        }
        Self::new(task, model_id, Coalition::all().map(|c| map[&c]).collect())
    }

    pub fn validate(&self) -> Result<(), ShapleyError> {
        if self.accuracies.len() != N_COALITIONS {
            return Err(ShapleyError::Incomplete(self.accuracies.len()));
        }
        if let Some((c, &value)) = self.accuracies.iter().enumerate().find(|(_, a)| !(0.0..=1.0).contains(*a)) {
            return Err(ShapleyError::BadAccuracy { coalition: c as u16, value });
        }
        Ok(())
    }

    pub fn accuracy(&self, s: Coalition) -> f64 {
        self.accuracies[s.0 as usize]
    }

    pub fn acc_full(&self) -> f64 {
        self.accuracy(Coalition::FULL)
    }

    pub fn acc_all_masked(&self) -> f64 {
        self.accuracy(Coalition::EMPTY)
    }
}

/// `100·(Acc_S − Acc_∅)/(Acc_N − Acc_∅)`.
pub fn coalition_value(table: &CoalitionTable, s: Coalition) -> Result<f64, ShapleyError> {
    let (full, masked) = (table.acc_full(), table.acc_all_masked());
    if full == masked {
        return Err(ShapleyError::Degenerate(full));
    }
    // The endpoints are pinned exactly rather than left to rounding.
    Ok(match s.0 {
        0 => 0.0,
        x if x as usize == N_COALITIONS - 1 => 100.0,
        _ => 100.0 * (table.accuracy(s) - masked) / (full - masked),
    })
}

fn factorials(n: usize) -> Vec<f64> {
    let mut f = vec![1.0; n + 1];
    for i in 1..=n {
        f[i] = f[i - 1] * i as f64;
    }
    f
}

/// Exact Shapley values of an `n`-player game given as a function of the
/// coalition bitmask:
/// φᵢ = Σ_{S ⊆ N∖{i}} |S|!(n−|S|−1)!/n! · (v(S∪{i}) − v(S)).
pub fn shapley_values(n: usize, v: impl Fn(u32) -> f64) -> Vec<f64> {
    assert!(n <= 20, "exact enumeration over {n} players is impractical");
    let f = factorials(n);
    let values: Vec<f64> = (0..1u32 << n).map(&v).collect();
    (0..n)
        .map(|i| {
            let bit = 1u32 << i;
            // Integer weights |S|!(n−|S|−1)! keep small games exact; divide once.
            let mut phi = 0.0;
            for s in (0..1u32 << n).filter(|s| s & bit == 0) {
                let k = s.count_ones() as usize;
                phi += f[k] * f[n - k - 1] * (values[(s | bit) as usize] - values[s as usize]);
            }
            phi / f[n]
        })
        .collect()
}

/// Average marginal contribution over all `n!` player orderings. An
/// independent check of [`shapley_values`] for small games.
pub fn shapley_permutation_oracle(n: usize, v: impl Fn(u32) -> f64) -> Result<Vec<f64>, ShapleyError> {
    if n > 6 {
        return Err(ShapleyError::TooManyPlayers(n));
    }
    let mut phi = vec![0.0; n];
    let mut count = 0usize;
    let mut order: Vec<usize> = (0..n).collect();
    permute(&mut order, 0, &mut |perm| {
        let mut s = 0u32;
        for &p in perm {
            let before = v(s);
            s |= 1 << p;
            phi[p] += v(s) - before;
        }
        count += 1;
    });
    Ok(phi.into_iter().map(|x| x / count as f64).collect())
}

fn permute(items: &mut [usize], k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

/// Shapley values of one task plus positional summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyProfile {
    pub task: String,
    pub model_id: String,
    /// Indexed by player, `−4⁻ … 4⁺`.
    pub phi: Vec<f64>,
    pub target: f64,
    pub left: f64,
    pub right: f64,
    pub context: f64,
    /// `left/right`; `None` when `right ≤ 0`, where the ratio is unbounded
    /// (see [`ShapleyProfile::left_right_ratio_value`]).
    pub left_right_ratio: Option<f64>,
}

impl ShapleyProfile {
    pub fn from_phi(task: &str, model_id: &str, phi: Vec<f64>) -> Self {
        assert_eq!(phi.len(), N_PLAYERS);
        let left: f64 = phi[..TARGET_PLAYER].iter().sum();
        let right: f64 = phi[TARGET_PLAYER + 1..].iter().sum();
        Self {
            task: task.to_string(),
            model_id: model_id.to_string(),
            target: phi[TARGET_PLAYER],
            left,
            right,
            context: left + right,
            left_right_ratio: (right > 0.0).then(|| left / right),
            phi,
        }
    }

    /// `left/right`, `+∞` when only the left side contributes and NaN when
    /// neither side does.
    pub fn left_right_ratio_value(&self) -> f64 {
        match self.left_right_ratio {
            Some(r) => r,
            None if self.left > 0.0 => f64::INFINITY,
            None => f64::NAN,
        }
    }

    /// Share of the total attribution given to the target word.
    pub fn target_share(&self) -> f64 {
        self.target / self.phi.iter().sum::<f64>()
    }

    /// Player with the largest value (first one on ties).
    pub fn argmax(&self) -> usize {
        (0..N_PLAYERS).fold(0, |b, i| if self.phi[i] > self.phi[b] { i } else { b })
    }

    /// φ on the unit scale (summing to 1), as used by distance summaries.
    pub fn normalized(&self) -> Vec<f64> {
        self.phi.iter().map(|p| p / 100.0).collect()
    }
}

pub fn shapley_from_table(table: &CoalitionTable) -> Result<ShapleyProfile, ShapleyError> {
    table.validate()?;
    let (full, masked) = (table.acc_full(), table.acc_all_masked());
    if full == masked {
        return Err(ShapleyError::Degenerate(full));
    }
    let phi = shapley_values(N_PLAYERS, |s| 100.0 * (table.accuracies[s as usize] - masked) / (full - masked));
    Ok(ShapleyProfile::from_phi(&table.task, &table.model_id, phi))
}

/// Manhattan distance between two profiles.
pub fn dfm(profile: &[f64], mean: &[f64]) -> f64 {
    profile.iter().zip(mean).map(|(a, b)| (a - b).abs()).sum()
}

/// Coordinate-wise mean of equally long vectors.
pub fn mean_profile<'a>(profiles: impl IntoIterator<Item = &'a [f64]>) -> Vec<f64> {
    // Running mean: identical inputs reproduce themselves exactly.
    let mut mean: Vec<f64> = Vec::new();
    for (k, p) in profiles.into_iter().enumerate() {
        if k == 0 {
            mean = p.to_vec();
            continue;
        }
        mean.iter_mut().zip(p).for_each(|(m, v)| *m += (v - *m) / (k + 1) as f64);
    }
    mean
}

/// One observed cell of the ⟨language, POS, tag⟩ profile tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileCell {
    pub language: String,
    pub pos: String,
    pub tag: String,
    /// Unit-scale profile (sums to 1).
    pub phi: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Language,
    Pos,
    Tag,
}

impl Axis {
    fn key(self, cell: &ProfileCell) -> &str {
        match self {
            Axis::Language => &cell.language,
            Axis::Pos => &cell.pos,
            Axis::Tag => &cell.tag,
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "language" => Ok(Axis::Language),
            "pos" => Ok(Axis::Pos),
            "tag" => Ok(Axis::Tag),
            _ => Err(format!("unknown axis {s:?} (language, pos, tag)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisVariance {
    pub axis: Axis,
    /// Mean distance from the axis-value mean, per axis value.
    pub per_value: BTreeMap<String, f64>,
    /// Mean over all retained cells.
    pub mean: f64,
    /// Axis values with fewer than two profiles.
    pub excluded: Vec<String>,
}

/// Complete the ⟨language, POS, tag⟩ grid. A missing cell takes the mean of
/// the observed cells in its ⟨POS, tag⟩ column; combinations never observed
/// anywhere stay absent.
pub fn impute_cells(cells: &[ProfileCell]) -> Vec<ProfileCell> {
    let languages: BTreeSet<&str> = cells.iter().map(|c| c.language.as_str()).collect();
    let mut columns: BTreeMap<(&str, &str), Vec<&[f64]>> = BTreeMap::new();
    let mut observed: BTreeMap<(&str, &str, &str), &[f64]> = BTreeMap::new();
    for c in cells {
        columns.entry((&c.pos, &c.tag)).or_default().push(&c.phi);
        observed.insert((&c.language, &c.pos, &c.tag), &c.phi);
    }
    let mut out = Vec::new();
    for &lang in &languages {
        for (&(pos, tag), members) in &columns {
            let phi = match observed.get(&(lang, pos, tag)) {
                Some(p) => p.to_vec(),
                None => mean_profile(members.iter().copied()),
            };
            out.push(ProfileCell { language: lang.into(), pos: pos.into(), tag: tag.into(), phi });
        }
    }
    out
}

/// Mean distance of profiles from their axis-value mean, after imputation.
/// Returns `None` when the axis has fewer than two usable values.
pub fn generalization_variance(cells: &[ProfileCell], axis: Axis) -> Option<AxisVariance> {
    let full = impute_cells(cells);
    let mut groups: BTreeMap<&str, Vec<&[f64]>> = BTreeMap::new();
    for c in &full {
        groups.entry(axis.key(c)).or_default().push(&c.phi);
    }
    let mut per_value = BTreeMap::new();
    let mut excluded = Vec::new();
    let (mut total, mut n) = (0.0, 0usize);
    for (value, members) in &groups {
        if members.len() < 2 {
            excluded.push(value.to_string());
            continue;
        }
        let mean = mean_profile(members.iter().copied());
        let dists: Vec<f64> = members.iter().map(|p| dfm(p, &mean)).collect();
        total += dists.iter().sum::<f64>();
        n += dists.len();
        per_value.insert(value.to_string(), dists.iter().sum::<f64>() / dists.len() as f64);
    }
    if per_value.len() < 2 {
        return None;
    }
    Some(AxisVariance { axis, per_value, mean: total / n as f64, excluded })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn value_normalization() {
        let mut acc = vec![0.7; N_COALITIONS];
        acc[0] = 0.5;
        acc[N_COALITIONS - 1] = 0.9;
        let t = CoalitionTable::new("t", "m", acc).unwrap();
        assert_eq!(coalition_value(&t, Coalition::EMPTY).unwrap(), 0.0);
        assert_eq!(coalition_value(&t, Coalition::FULL).unwrap(), 100.0);
        assert_relative_eq!(coalition_value(&t, Coalition(5)).unwrap(), 50.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_and_incomplete_tables() {
        let t = CoalitionTable::new("t", "m", vec![0.5; N_COALITIONS]).unwrap();
        assert_eq!(coalition_value(&t, Coalition(3)), Err(ShapleyError::Degenerate(0.5)));
        assert!(shapley_from_table(&t).is_err());
        assert_eq!(CoalitionTable::new("t", "m", vec![0.5; 10]).unwrap_err(), ShapleyError::Incomplete(10));
    }

    #[test]
    fn carrier_game_on_the_target() {
        let acc = (0..N_COALITIONS).map(|s| if s & (1 << TARGET_PLAYER) != 0 { 0.9 } else { 0.4 }).collect();
        let p = shapley_from_table(&CoalitionTable::new("t", "m", acc).unwrap()).unwrap();
        for (i, &phi) in p.phi.iter().enumerate() {
            assert_relative_eq!(phi, if i == TARGET_PLAYER { 100.0 } else { 0.0 }, epsilon = 1e-9);
        }
        assert_relative_eq!(p.target_share(), 1.0, epsilon = 1e-12);
        assert_eq!(p.argmax(), TARGET_PLAYER);
    }

    /// T = bit 0, L = bit 1, R = bit 2.
    fn three_player(s: u32) -> f64 {
        [0.0, 80.0, 10.0, 90.0, 5.0, 85.0, 20.0, 100.0][s as usize]
    }

    #[test]
    fn fixed_three_player_game() {
        assert_eq!(shapley_values(3, three_player), vec![80.0, 12.5, 7.5]);
        let oracle = shapley_permutation_oracle(3, three_player).unwrap();
        for (a, b) in oracle.iter().zip([80.0, 12.5, 7.5]) {
            assert_relative_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn oracle_refuses_large_games() {
        assert_eq!(shapley_permutation_oracle(7, |_| 0.0), Err(ShapleyError::TooManyPlayers(7)));
    }

    #[test]
    fn additive_game_returns_weights() {
        let c = [3.0, -1.0, 4.5, 0.0];
        let v = |s: u32| (0..4).filter(|i| s & (1 << i) != 0).map(|i| c[i]).sum();
        for (phi, ci) in shapley_permutation_oracle(4, v).unwrap().iter().zip(c) {
            assert_relative_eq!(*phi, ci, epsilon = 1e-12);
        }
    }

    #[test]
    fn summaries_and_ratio() {
        let p = ShapleyProfile::from_phi("t", "m", vec![1.0, 2.0, 3.0, 4.0, 60.0, 5.0, 3.0, 1.0, 1.0]);
        assert_eq!((p.left, p.right, p.target, p.context), (10.0, 10.0, 60.0, 20.0));
        assert_eq!(p.left_right_ratio, Some(1.0));
        let only_left = ShapleyProfile::from_phi("t", "m", vec![0.0, 0.0, 0.0, 50.0, 50.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(only_left.left_right_ratio, None);
        assert_eq!(only_left.left_right_ratio_value(), f64::INFINITY);
    }

    #[test]
    fn dfm_arithmetic() {
        let a = [0.2, 0.3, 0.5];
        assert_eq!(dfm(&a, &a), 0.0);
        assert_relative_eq!(dfm(&[0.3, 0.2, 0.5], &a), 0.2, epsilon = 1e-12);
    }

    fn cell(l: &str, p: &str, t: &str, phi: Vec<f64>) -> ProfileCell {
        ProfileCell { language: l.into(), pos: p.into(), tag: t.into(), phi }
    }

    #[test]
    fn identical_profiles_have_zero_variance_everywhere() {
        let mut cells = Vec::new();
        for l in ["de", "fi", "tr"] {
            for (p, t) in [("NOUN", "Case"), ("VERB", "Tense"), ("ADJ", "Case")] {
                cells.push(cell(l, p, t, vec![0.1, 0.6, 0.3]));
            }
        }
        for axis in [Axis::Language, Axis::Pos, Axis::Tag] {
            assert_eq!(generalization_variance(&cells, axis).unwrap().mean, 0.0);
        }
    }

    #[test]
    fn tag_determined_profiles_vary_by_language_only() {
        let by_tag = |t: &str| match t {
            "Case" => vec![0.1, 0.8, 0.1],
            "Number" => vec![0.3, 0.4, 0.3],
            _ => vec![0.5, 0.2, 0.3],
        };
        let mut cells = Vec::new();
        for l in ["de", "fi", "tr", "ru"] {
            for (p, t) in [("NOUN", "Case"), ("NOUN", "Number"), ("VERB", "Tense")] {
                cells.push(cell(l, p, t, by_tag(t)));
            }
        }
        let tag = generalization_variance(&cells, Axis::Tag).unwrap().mean;
        let lang = generalization_variance(&cells, Axis::Language).unwrap().mean;
        assert_eq!(tag, 0.0);
        assert!(lang > 0.3, "{lang}");
    }

    #[test]
    fn imputation_fills_missing_cells_with_column_means() {
        let cells = vec![
            cell("de", "NOUN", "Case", vec![0.2, 0.8]),
            cell("fi", "NOUN", "Case", vec![0.4, 0.6]),
            cell("de", "VERB", "Tense", vec![1.0, 0.0]),
        ];
        let full = impute_cells(&cells);
        assert_eq!(full.len(), 4);
        let fi_verb = full.iter().find(|c| c.language == "fi" && c.pos == "VERB").unwrap();
        assert_eq!(fi_verb.phi, vec![1.0, 0.0]);
        // Observed cells are untouched.
        assert!(cells.iter().all(|c| full.contains(c)));
    }

    #[test]
    fn single_valued_axis_is_excluded() {
        let cells = vec![cell("de", "NOUN", "Case", vec![1.0]), cell("de", "VERB", "Case", vec![0.0])];
        assert!(generalization_variance(&cells, Axis::Language).is_none());
    }
}
