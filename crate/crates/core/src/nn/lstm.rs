use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{affine, affine_backward, cross_entropy, cross_entropy_grad, log_probs, sigmoid, Activation, Classifier, DenseCache, DenseStack, ParamSet};
use crate::embedding::SubwordPooling;
use crate::perturb::{CharSequence, MASK_CHAR};
use crate::rng::{self, Rng};
use crate::scalar::Scalar;

/// Id of characters never seen in training.
pub const UNK_ID: usize = 0;
/// Id of the reserved mask character.
pub const MASK_ID: usize = 1;

/// Character inventory; ids `0` and `1` are reserved for UNK and mask.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CharVocab {
    chars: Vec<char>,
    #[serde(skip)]
    index: HashMap<char, usize>,
}

impl CharVocab {
    pub fn new(chars: impl IntoIterator<Item = char>) -> Self {
        let set: BTreeSet<char> = chars.into_iter().filter(|&c| c != MASK_CHAR).collect();
        let chars: Vec<char> = set.into_iter().collect();
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i + 2)).collect();
        Self { chars, index }
    }

    pub fn from_sequences<'a>(seqs: impl IntoIterator<Item = &'a CharSequence>) -> Self {
        Self::new(seqs.into_iter().flat_map(|s| s.chars.iter().copied()))
    }

    /// Number of ids including the two reserved ones.
    pub fn len(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn id(&self, c: char) -> usize {
        if c == MASK_CHAR {
            return MASK_ID;
        }
        if self.index.is_empty() && !self.chars.is_empty() {
            // Deserialized without its index.
            return self.chars.binary_search(&c).map_or(UNK_ID, |i| i + 2);
        }
        self.index.get(&c).copied().unwrap_or(UNK_ID)
    }

    pub fn encode(&self, seq: &CharSequence, pooling: SubwordPooling) -> CharInput {
        let (start, end) = seq.target_span;
        let position = match pooling {
            SubwordPooling::First => start,
            SubwordPooling::Last => end.max(start + 1) - 1,
        };
        CharInput { ids: seq.chars.iter().map(|&c| self.id(c)).collect(), position }
    }
}

/// Character ids of one sentence and the position whose states are pooled.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CharInput {
    pub ids: Vec<usize>,
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharLstmConfig {
    pub vocab: CharVocab,
    pub emb_dim: usize,
    /// Units per direction; the pooled state is twice as wide.
    pub hidden: usize,
    pub head_hidden: usize,
    pub n_classes: usize,
    pub dropout: f64,
}

impl CharLstmConfig {
    pub fn new(vocab: CharVocab, n_classes: usize) -> Self {
        Self { vocab, emb_dim: 30, hidden: 50, head_hidden: 50, n_classes, dropout: 0.2 }
    }
}

/// Bidirectional one-layer character LSTM with a one-hidden-layer head.
/// Gate order in the stacked weights is input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct CharLstm<T> {
    pub config: CharLstmConfig,
    params: ParamSet<T>,
    emb: usize,
    /// `(weight, bias)` of the forward and backward directions.
    dirs: [(usize, usize); 2],
    head: DenseStack,
}

#[derive(Debug, Clone)]
struct Step<T> {
    id: usize,
    /// `[x; h_prev]`
    input: Vec<T>,
    c_prev: Vec<T>,
    gates: Vec<T>,
    tanh_c: Vec<T>,
}

struct LstmCache<T> {
    dirs: [Vec<Step<T>>; 2],
    head: DenseCache<T>,
}

impl<T: Scalar> CharLstm<T> {
    pub fn new(config: CharLstmConfig, seed: u64) -> Self {
        let (e, h) = (config.emb_dim, config.hidden);
        let mut params = ParamSet::new();
        let emb = params.push("char_embedding", &[config.vocab.len(), e]);
        let fw = (params.push("lstm.forward.weight", &[4 * h, e + h]), params.push("lstm.forward.bias", &[4 * h]));
        let bw = (params.push("lstm.backward.weight", &[4 * h, e + h]), params.push("lstm.backward.bias", &[4 * h]));
        let head = DenseStack::register(&mut params, "head", &[2 * h, config.head_hidden, config.n_classes], Activation::Relu, config.dropout);
        let mut r = rng::seeded(seed);
        params.init_uniform(emb, 0.5, &mut r);
        for (w, b) in [fw, bw] {
            params.init_uniform(w, 1.0 / (h as f64).sqrt(), &mut r);
            // Forget-gate bias starts at one so early gradients flow.
            params.get_mut(b)[h..2 * h].iter_mut().for_each(|v| *v = T::one());
        }
        head.init(&mut params, &mut r);
        Self { config, params, emb, dirs: [fw, bw], head }
    }

    pub fn from_params(config: CharLstmConfig, params: ParamSet<T>) -> Result<Self, String> {
        let mut m = Self::new(config, 0);
        if m.params.tensors.len() != params.tensors.len()
            || m.params.tensors.iter().zip(&params.tensors).any(|(a, b)| a.name != b.name || a.shape != b.shape)
        {
            return Err("stored tensors do not match the LSTM configuration".into());
        }
        m.params = params;
        Ok(m)
    }

    fn embed(&self, id: usize) -> &[T] {
        let e = self.config.emb_dim;
        &self.params.get(self.emb)[id * e..(id + 1) * e]
    }

    /// Run direction `d` over `ids` in the given order, keeping every step.
    fn run(&self, d: usize, ids: impl Iterator<Item = usize>) -> Vec<Step<T>> {
        let (h, (wi, bi)) = (self.config.hidden, self.dirs[d]);
        let (w, b) = (self.params.get(wi), self.params.get(bi));
        let (mut hp, mut cp) = (vec![T::zero(); h], vec![T::zero(); h]);
        let mut steps = Vec::new();
        for id in ids {
            let mut input = self.embed(id).to_vec();
            input.extend_from_slice(&hp);
            let mut gates = vec![T::zero(); 4 * h];
            affine(w, b, &input, &mut gates);
            for k in 0..h {
                gates[k] = sigmoid(gates[k]);
                gates[h + k] = sigmoid(gates[h + k]);
                gates[2 * h + k] = gates[2 * h + k].tanh();
                gates[3 * h + k] = sigmoid(gates[3 * h + k]);
            }
            let c: Vec<T> = (0..h).map(|k| gates[h + k] * cp[k] + gates[k] * gates[2 * h + k]).collect();
            let tanh_c: Vec<T> = c.iter().map(|v| v.tanh()).collect();
            hp = (0..h).map(|k| gates[3 * h + k] * tanh_c[k]).collect();
            steps.push(Step { id, input, c_prev: std::mem::replace(&mut cp, c), gates, tanh_c });
        }
        steps
    }

    fn last_hidden(&self, steps: &[Step<T>]) -> Vec<T> {
        let h = self.config.hidden;
        let s = steps.last().expect("non-empty sequence");
        (0..h).map(|k| s.gates[3 * h + k] * s.tanh_c[k]).collect()
    }

    fn pooled(&self, dirs: &[Vec<Step<T>>; 2]) -> Vec<T> {
        let mut out = self.last_hidden(&dirs[0]);
        out.extend(self.last_hidden(&dirs[1]));
        out
    }

    fn forward_cached(&self, input: &CharInput, dropout: Option<&mut Rng>) -> LstmCache<T> {
        let n = input.ids.len();
        assert!(n > 0 && input.position < n, "pooling position {} outside a {n}-character input", input.position);
        let p = input.position;
        // The forward direction only needs 0..=p and the backward one n-1..=p.
        let dirs = [self.run(0, input.ids[..=p].iter().copied()), self.run(1, input.ids[p..].iter().rev().copied())];
        let head = self.head.forward(&self.params, &self.pooled(&dirs), dropout);
        LstmCache { dirs, head }
    }

    /// Hidden states of both directions at every position, for inspection.
    pub fn directional_states(&self, ids: &[usize]) -> [Vec<Vec<T>>; 2] {
        let h = self.config.hidden;
        let hidden = |s: &Step<T>| (0..h).map(|k| s.gates[3 * h + k] * s.tanh_c[k]).collect::<Vec<T>>();
        let fw = self.run(0, ids.iter().copied()).iter().map(hidden).collect();
        let mut bw: Vec<Vec<T>> = self.run(1, ids.iter().rev().copied()).iter().map(hidden).collect();
        bw.reverse();
        [fw, bw]
    }

    /// Copy with the two directions' parameters exchanged.
    pub fn swapped_directions(&self) -> Self {
        let mut m = self.clone();
        let [(fw, fb), (bw, bb)] = self.dirs;
        for (a, b) in [(fw, bw), (fb, bb)] {
            m.params.tensors[a].data = self.params.tensors[b].data.clone();
            m.params.tensors[b].data = self.params.tensors[a].data.clone();
        }
        m
    }

    fn backward_direction(&self, d: usize, steps: &[Step<T>], dh_last: &[T], grads: &mut ParamSet<T>) {
        let (h, e) = (self.config.hidden, self.config.emb_dim);
        let (wi, bi) = self.dirs[d];
        let w = self.params.get(wi);
        let mut dh = dh_last.to_vec();
        let mut dc = vec![T::zero(); h];
        let mut dz = vec![T::zero(); 4 * h];
        for s in steps.iter().rev() {
            let g = &s.gates;
            for k in 0..h {
                let (i, f, gg, o, tc) = (g[k], g[h + k], g[2 * h + k], g[3 * h + k], s.tanh_c[k]);
                let dct = dc[k] + dh[k] * o * (T::one() - tc * tc);
                dz[k] = dct * gg * i * (T::one() - i);
                dz[h + k] = dct * s.c_prev[k] * f * (T::one() - f);
                dz[2 * h + k] = dct * i * (T::one() - gg * gg);
                dz[3 * h + k] = dh[k] * tc * o * (T::one() - o);
                dc[k] = dct * f;
            }
            let mut dinput = vec![T::zero(); e + h];
            let (lo, hi) = grads.tensors.split_at_mut(bi);
            affine_backward(w, &s.input, &dz, &mut lo[wi].data, &mut hi[0].data, Some(&mut dinput));
            for (dst, &v) in grads.get_mut(self.emb)[s.id * e..(s.id + 1) * e].iter_mut().zip(&dinput[..e]) {
                *dst += v;
            }
            dh.copy_from_slice(&dinput[e..]);
        }
    }
}

impl<T: Scalar> Classifier<T> for CharLstm<T> {
    type Input = CharInput;

    fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    fn forward(&self, input: &CharInput, dropout: Option<&mut Rng>) -> Vec<T> {
        log_probs(self.forward_cached(input, dropout).head.logits())
    }

    fn accumulate_grad(&self, input: &CharInput, label: usize, grads: &mut ParamSet<T>, dropout: Option<&mut Rng>) -> T {
        let cache = self.forward_cached(input, dropout);
        let lp = log_probs(cache.head.logits());
        let dpooled = self.head.backward(&self.params, &cache.head, &cross_entropy_grad(&lp, label), grads);
        let h = self.config.hidden;
        self.backward_direction(0, &cache.dirs[0], &dpooled[..h], grads);
        self.backward_direction(1, &cache.dirs[1], &dpooled[h..], grads);
        cross_entropy(&lp, label)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn vocab() -> CharVocab {
        CharVocab::new("abcdefgh ".chars())
    }

    fn model() -> CharLstm<f64> {
        let mut c = CharLstmConfig::new(vocab(), 3);
        (c.emb_dim, c.hidden, c.head_hidden) = (5, 4, 6);
        CharLstm::new(c, 7)
    }

    fn seq(s: &str, span: (usize, usize)) -> CharSequence {
        CharSequence { chars: s.chars().collect(), target_span: span }
    }

    #[test]
    fn vocab_reserves_unk_and_mask() {
        let v = vocab();
        assert_eq!(v.id('z'), UNK_ID);
        assert_eq!(v.id(MASK_CHAR), MASK_ID);
        assert_eq!(v.id(' '), 2);
        let back: CharVocab = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        assert_eq!(back.id('c'), v.id('c'));
    }

    #[test]
    fn length_one_first_equals_last() {
        let m = model();
        let s = seq("a", (0, 1));
        let v = vocab();
        assert_eq!(v.encode(&s, SubwordPooling::First), v.encode(&s, SubwordPooling::Last));
        let lp = m.forward(&v.encode(&s, SubwordPooling::First), None);
        assert_relative_eq!(lp.iter().map(|x| x.exp()).sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn swapped_weights_on_reversed_input_mirror_the_forward_direction() {
        let m = model();
        let ids: Vec<usize> = "badcafe hedge".chars().map(|c| vocab().id(c)).collect();
        let [fw, _] = m.directional_states(&ids);
        let rev: Vec<usize> = ids.iter().rev().copied().collect();
        let [_, bw_swapped] = m.swapped_directions().directional_states(&rev);
        let n = ids.len();
        for t in 0..n {
            for (a, b) in fw[t].iter().zip(&bw_swapped[n - 1 - t]) {
                assert_relative_eq!(*a, *b, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn all_mask_input_ignores_hidden_characters() {
        let m = model();
        let v = vocab();
        let masked = |n: usize| CharSequence { chars: vec![MASK_CHAR; n], target_span: (2, 4) };
        let a = m.forward(&v.encode(&masked(6), SubwordPooling::Last), None);
        let b = m.forward(&v.encode(&masked(6), SubwordPooling::Last), None);
        assert_eq!(a, b);
        // Different original words of equal length render identically.
        let p1 = crate::perturb::char_mask(&crate::perturb::apply(
            &crate::sampler::ProbingInstance { words: vec!["ab".into(), "cde".into()], target_index: 1, label: "x".into() },
            crate::perturb::Perturbation::Both(5),
            0,
        ))
        .unwrap();
        let p2 = crate::perturb::char_mask(&crate::perturb::apply(
            &crate::sampler::ProbingInstance { words: vec!["hg".into(), "cde".into()], target_index: 1, label: "x".into() },
            crate::perturb::Perturbation::Both(5),
            0,
        ))
        .unwrap();
        assert_eq!(m.forward(&v.encode(&p1, SubwordPooling::First), None), m.forward(&v.encode(&p2, SubwordPooling::First), None));
    }

    #[test]
    fn default_config_stays_near_forty_thousand_parameters() {
        let m = CharLstm::<f32>::new(CharLstmConfig::new(CharVocab::new("abcdefghijklmnopqrstuvwxyz .,".chars()), 2), 0);
        let n = m.params().n_scalars();
        assert!((35_000..45_000).contains(&n), "{n} parameters");
    }
}
