//! Randomly initialized control "models".
//!
//! Both modes are position-local: a subword's vectors depend only on its own
//! text, so masking a word changes only that word's rows. What survives is
//! word (or word-piece) identity, which is exactly what random MLM controls
//! are known to expose to a probe.
//!
//! * `FullyRandom`: seeded noise keyed by the subword text, replicated across
//!   layers; words are cut into pieces of `piece_len` characters.
//! * `RandomLayers`: the embedding layer comes from a static word-vector
//!   table (one subword per word); upper layers mix it with seeded noise.
//!
//! Upper layers are `sqrt(1-m)·base + sqrt(m)·noise_l(text)`, with `m = 0`
//! (pure replication) by default for `FullyRandom` and `0.5` for `RandomLayers`.

use rand::Rng as _;

use super::{EmbedError, EmbeddingProvider, EmbeddingRequest, LayeredEmbedding, ModelInfo, StaticEmbeddings, SPECIAL};
use super::static_vectors::MASK_KEY;
use crate::rng;

pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomMode {
    FullyRandom,
    RandomLayers,
}

#[derive(Debug, Clone)]
pub struct RandomControl {
    info: ModelInfo,
    mode: RandomMode,
    seed: u64,
    piece_len: Option<usize>,
    mix: f32,
    static_layer: Option<StaticEmbeddings>,
}

impl RandomControl {
    /// Fully random control (or random layers with an all-zero embedding
    /// layer until [`RandomControl::with_static_layer`] is called).
    pub fn new(info: ModelInfo, mode: RandomMode, seed: u64) -> Self {
        let mix = match mode {
            RandomMode::FullyRandom => 0.0,
            RandomMode::RandomLayers => 0.5,
        };
        Self { info, mode, seed, piece_len: Some(3), mix, static_layer: None }
    }

    /// Random Transformer layers over a pre-trained static embedding layer.
    pub fn random_layers(info: ModelInfo, static_layer: StaticEmbeddings, seed: u64) -> Result<Self, EmbedError> {
        Self::new(info, RandomMode::RandomLayers, seed).with_static_layer(static_layer)
    }

    pub fn with_static_layer(mut self, static_layer: StaticEmbeddings) -> Result<Self, EmbedError> {
        if static_layer.dim() != self.info.dim {
            return Err(EmbedError::Integrity(format!(
                "static layer has {} dims, model {} has {}",
                static_layer.dim(),
                self.info.model_id,
                self.info.dim
            )));
        }
        self.static_layer = Some(static_layer);
        Ok(self)
    }

    /// Characters per word piece; `None` keeps words whole. Ignored in
    /// `RandomLayers` mode, whose embedding layer is word-level.
    pub fn with_piece_len(mut self, piece_len: Option<usize>) -> Self {
        self.piece_len = piece_len.filter(|&n| n > 0);
        self
    }

    /// Weight of fresh noise in layers above the embedding layer.
    pub fn with_mix(mut self, mix: f32) -> Self {
        self.mix = mix.clamp(0.0, 1.0);
        self
    }

    pub fn mode(&self) -> RandomMode {
        self.mode
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Seeded unit-variance noise for `(layer, text)`.
    pub fn noise(&self, layer: usize, text: &str) -> Vec<f32> {
        let mut r = rng::seeded(rng::derive_str(rng::derive(self.seed, layer as u64), text));
        let scale = 3f32.sqrt();
        (0..self.info.dim).map(|_| (r.random::<f32>() * 2.0 - 1.0) * scale).collect()
    }

    /// Embedding-layer vector of a fully random subword.
    pub fn base_vector(&self, text: &str) -> Vec<f32> {
        self.noise(0, text)
    }

    fn pieces(&self, word: &str) -> Vec<String> {
        let chars: Vec<char> = word.chars().collect();
        let piece_len = match (self.mode, self.piece_len) {
            (RandomMode::FullyRandom, Some(n)) if !chars.is_empty() => n,
            _ => return vec![word.to_string()],
        };
        chars
            .chunks(piece_len)
            .enumerate()
            .map(|(i, c)| {
                let s: String = c.iter().collect();
                if i == 0 { s } else { format!("##{s}") }
            })
            .collect()
    }

    fn base(&self, text: &str, static_key: &str) -> Vec<f32> {
        match (self.mode, &self.static_layer) {
            (RandomMode::FullyRandom, _) => self.base_vector(text),
            (RandomMode::RandomLayers, Some(s)) => s.lookup(static_key),
            (RandomMode::RandomLayers, None) => vec![0.0; self.info.dim],
        }
    }
}

impl EmbeddingProvider for RandomControl {
    fn info(&self) -> &ModelInfo {
        &self.info
    }

    fn embed(&self, request: &EmbeddingRequest) -> Result<LayeredEmbedding, EmbedError> {
        request.validate()?;
        // (subword text, static lookup key, word index)
        let mut subwords: Vec<(String, String, i32)> = vec![(CLS.into(), CLS.into(), SPECIAL)];
        for (i, word) in request.words.iter().enumerate() {
            if request.is_masked(i) {
                subwords.push((MASK_KEY.into(), MASK_KEY.into(), i as i32));
            } else {
                subwords.extend(self.pieces(word).into_iter().map(|p| (p, word.clone(), i as i32)));
            }
        }
        subwords.push((SEP.into(), SEP.into(), SPECIAL));

        let map = subwords.iter().map(|s| s.2).collect();
        let mut e = LayeredEmbedding::zeros(self.info.n_layers, self.info.dim, map);
        let (keep, fresh) = ((1.0 - self.mix).sqrt(), self.mix.sqrt());
        for (pos, (text, key, _)) in subwords.iter().enumerate() {
            let base = self.base(text, key);
            e.row_mut(0, pos).copy_from_slice(&base);
            for layer in 1..self.info.n_layers {
                if self.mix == 0.0 {
                    let (lower, upper) = e.values.split_at_mut((layer * e.n_subwords + pos) * self.info.dim);
                    upper[..self.info.dim].copy_from_slice(&lower[pos * self.info.dim..][..self.info.dim]);
                    continue;
                }
                let noise = self.noise(layer, text);
                for ((out, b), n) in e.row_mut(layer, pos).iter_mut().zip(&base).zip(&noise) {
                    *out = keep * b + fresh * n;
                }
            }
        }
        Ok(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn info() -> ModelInfo {
        ModelInfo { model_id: "rand".into(), n_layers: 4, dim: 6, tokenizer: "chunk3".into() }
    }

    fn req(masked: &[usize]) -> EmbeddingRequest {
        let words = ["we", "rapidly", "read", "books", "today"].map(String::from).to_vec();
        EmbeddingRequest::new(words, masked.iter().copied(), "rand")
    }

    #[test]
    fn deterministic() {
        let p = RandomControl::new(info(), RandomMode::FullyRandom, 11);
        assert_eq!(p.embed(&req(&[])).unwrap(), p.embed(&req(&[])).unwrap());
        let e = p.embed(&req(&[])).unwrap();
        e.validate(&req(&[])).unwrap();
        // "rapidly" -> rap ##idl ##y
        assert_eq!(e.subwords_of(1).count(), 3);
    }

    #[test]
    fn masking_changes_only_the_masked_word() {
        let p = RandomControl::new(info(), RandomMode::FullyRandom, 11).with_piece_len(None);
        let plain = p.embed(&req(&[])).unwrap();
        let masked = p.embed(&req(&[2])).unwrap();
        masked.validate(&req(&[2])).unwrap();
        assert_eq!(plain.subword_token_map, masked.subword_token_map);
        for s in 0..plain.n_subwords {
            let same = (0..plain.n_layers).all(|l| plain.row(l, s) == masked.row(l, s));
            assert_eq!(!same, plain.subword_token_map[s] == 2, "subword {s}");
        }
    }

    #[test]
    fn fully_random_equals_random_layers_over_its_own_embedding_layer() {
        let fully = RandomControl::new(info(), RandomMode::FullyRandom, 3).with_piece_len(None);
        let mut table = HashMap::new();
        for w in req(&[]).words.iter().map(String::as_str).chain([MASK_KEY, CLS, SEP]) {
            table.insert(w.to_string(), fully.base_vector(w));
        }
        let stat = StaticEmbeddings::new("static", 6, table).unwrap();
        let layers = RandomControl::random_layers(info(), stat, 3).unwrap().with_mix(0.0);
        for masked in [&[][..], &[0, 3]] {
            assert_eq!(fully.embed(&req(masked)).unwrap(), layers.embed(&req(masked)).unwrap());
        }
    }

    #[test]
    fn fully_random_replicates_layers_random_layers_does_not() {
        let fully = RandomControl::new(info(), RandomMode::FullyRandom, 3);
        let e = fully.embed(&req(&[])).unwrap();
        assert!((1..4).all(|l| e.row(l, 2) == e.row(0, 2)));
        let mut table = HashMap::new();
        table.insert("read".to_string(), vec![1.0; 6]);
        let stat = StaticEmbeddings::new("static", 6, table).unwrap();
        let layers = RandomControl::random_layers(info(), stat, 3).unwrap();
        let e = layers.embed(&req(&[])).unwrap();
        assert_eq!(e.row(0, 3), &[1.0; 6]);
        assert_ne!(e.row(1, 3), e.row(0, 3));
        assert_ne!(e.row(1, 3), e.row(2, 3));
    }

    #[test]
    fn static_layer_dimension_checked() {
        let stat = StaticEmbeddings::new("static", 3, HashMap::new()).unwrap();
        assert!(RandomControl::random_layers(info(), stat, 0).is_err());
    }
}
