//! Per-layer contextual vectors for (possibly masked) word sequences.
//!
//! Every backend implements [`EmbeddingProvider`]: given an
//! [`EmbeddingRequest`] it returns a [`LayeredEmbedding`] holding all layers
//! (embedding layer included) for every subword, plus the subword→word
//! alignment. Masking is resolved by the backend: a masked word is always a
//! single mask subword.

mod archive;
mod cache;
mod http;
mod manifest;
mod random;
mod static_vectors;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use archive::{ArchiveMetadata, ArchiveReader, ArchiveWriter, MPEB_MAGIC, MPEB_VERSION};
pub use cache::CachedProvider;
pub use http::{decode_vectors, encode_vectors, HttpConfig, HttpProvider};
pub use manifest::{plan_manifest, ExtractionManifest, ManifestEntry};
pub use random::{RandomControl, RandomMode};
pub use static_vectors::StaticEmbeddings;

use crate::perturb::PerturbedInstance;

/// Alignment value of special symbols (`[CLS]`-like) in `subword_token_map`.
pub const SPECIAL: i32 = -1;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EmbeddingRequest {
    // Field order is alphabetical: serde emits it as the canonical key order.
    pub masked_positions: Vec<usize>,
    pub model_id: String,
    pub words: Vec<String>,
}

impl EmbeddingRequest {
    pub fn new(words: Vec<String>, masked_positions: impl IntoIterator<Item = usize>, model_id: &str) -> Self {
        let masked: BTreeSet<usize> = masked_positions.into_iter().collect();
        Self { masked_positions: masked.into_iter().collect(), model_id: model_id.to_string(), words }
    }

    pub fn from_perturbed(instance: &PerturbedInstance, model_id: &str) -> Self {
        Self::new(instance.words.clone(), instance.masked_positions(), model_id)
    }

    /// UTF-8 JSON with sorted keys and no whitespace.
    pub fn canonical_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("request serializes")
    }

    pub fn is_masked(&self, position: usize) -> bool {
        self.masked_positions.binary_search(&position).is_ok()
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        let sorted = self.masked_positions.windows(2).all(|w| w[0] < w[1]);
        let in_range = self.masked_positions.last().is_none_or(|&p| p < self.words.len());
        if !sorted || !in_range {
            return Err(EmbedError::InvalidRequest(format!(
                "masked positions {:?} invalid for {} words",
                self.masked_positions,
                self.words.len()
            )));
        }
        Ok(())
    }
}

/// SHA-256 of a request's canonical JSON.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RequestId(pub [u8; 32]);

impl RequestId {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, String> {
        let bytes = hex::decode(s).map_err(|e| e.to_string())?;
        let arr: [u8; 32] = bytes.try_into().map_err(|_| format!("expected 32 bytes in {s:?}"))?;
        Ok(RequestId(arr))
    }
}

impl fmt::Debug for RequestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RequestId({})", self.to_hex())
    }
}

impl fmt::Display for RequestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for RequestId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for RequestId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        RequestId::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

pub fn request_hash(request: &EmbeddingRequest) -> RequestId {
    RequestId(Sha256::digest(request.canonical_json()).into())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub model_id: String,
    pub n_layers: usize,
    pub dim: usize,
    #[serde(default)]
    pub tokenizer: String,
}

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("no embedding for request {0}")]
    NotFound(RequestId),
    #[error("transport error after {attempts} attempt(s) (status {status:?}, retry after {retry_after_secs:?}s): {message}")]
    Transport {
        status: Option<u16>,
        message: String,
        attempts: u32,
        retry_after_secs: Option<u64>,
    },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Source of layered embeddings. Implementations must be pure: repeated
/// calls with the same request return bit-identical tensors.
pub trait EmbeddingProvider: Send + Sync {
    fn info(&self) -> &ModelInfo;
    fn embed(&self, request: &EmbeddingRequest) -> Result<LayeredEmbedding, EmbedError>;
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Box<P> {
    fn info(&self) -> &ModelInfo {
        (**self).info()
    }
    fn embed(&self, request: &EmbeddingRequest) -> Result<LayeredEmbedding, EmbedError> {
        (**self).embed(request)
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for std::sync::Arc<P> {
    fn info(&self) -> &ModelInfo {
        (**self).info()
    }
    fn embed(&self, request: &EmbeddingRequest) -> Result<LayeredEmbedding, EmbedError> {
        (**self).embed(request)
    }
}

/// Dense `[n_layers × n_subwords × dim]` float32 tensor, layer-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayeredEmbedding {
    pub n_layers: usize,
    pub n_subwords: usize,
    pub dim: usize,
    pub values: Vec<f32>,
    pub subword_token_map: Vec<i32>,
}

impl LayeredEmbedding {
    pub fn zeros(n_layers: usize, dim: usize, subword_token_map: Vec<i32>) -> Self {
        let n_subwords = subword_token_map.len();
        Self { n_layers, n_subwords, dim, values: vec![0.0; n_layers * n_subwords * dim], subword_token_map }
    }

    pub fn row(&self, layer: usize, subword: usize) -> &[f32] {
        let start = (layer * self.n_subwords + subword) * self.dim;
        &self.values[start..start + self.dim]
    }

    pub fn row_mut(&mut self, layer: usize, subword: usize) -> &mut [f32] {
        let start = (layer * self.n_subwords + subword) * self.dim;
        &mut self.values[start..start + self.dim]
    }

    /// Subword positions aligned to `word`.
    pub fn subwords_of(&self, word: usize) -> impl Iterator<Item = usize> + '_ {
        self.subword_token_map.iter().enumerate().filter(move |(_, &w)| w == word as i32).map(|(i, _)| i)
    }

    /// Structural checks against the request that produced the tensor.
    pub fn validate(&self, request: &EmbeddingRequest) -> Result<(), EmbedError> {
        let bad = |m: String| Err(EmbedError::Integrity(m));
        if self.subword_token_map.len() != self.n_subwords {
            return bad(format!("alignment has {} entries for {} subwords", self.subword_token_map.len(), self.n_subwords));
        }
        if self.values.len() != self.n_layers * self.n_subwords * self.dim {
            return bad(format!(
                "{} values for shape {}x{}x{}",
                self.values.len(),
                self.n_layers,
                self.n_subwords,
                self.dim
            ));
        }
        let n_words = request.words.len() as i32;
        let mut counts = vec![0usize; request.words.len()];
        let mut last = -1;
        for &w in &self.subword_token_map {
            if w == SPECIAL {
                continue;
            }
            if w < 0 || w >= n_words {
                return bad(format!("alignment index {w} outside 0..{n_words}"));
            }
            if w < last {
                return bad("alignment is not monotone".into());
            }
            last = w;
            counts[w as usize] += 1;
        }
        if let Some(missing) = counts.iter().position(|&c| c == 0) {
            return bad(format!("word {missing} has no subwords"));
        }
        if let Some(&p) = request.masked_positions.iter().find(|&&p| counts[p] != 1) {
            return bad(format!("masked word {p} spans {} subwords", counts[p]));
        }
        Ok(())
    }
}

/// Which subword stands for a multi-subword word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubwordPooling {
    First,
    Last,
}

impl SubwordPooling {
    pub const BOTH: [SubwordPooling; 2] = [SubwordPooling::First, SubwordPooling::Last];
}

impl fmt::Display for SubwordPooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SubwordPooling::First => "first",
            SubwordPooling::Last => "last",
        })
    }
}

/// `[n_layers × dim]` rows of the first or last subword of `word`.
pub fn pool_subwords(embedding: &LayeredEmbedding, word: usize, strategy: SubwordPooling) -> Result<Vec<f32>, EmbedError> {
    let mut subwords = embedding.subwords_of(word);
    let pick = match strategy {
        SubwordPooling::First => subwords.next(),
        SubwordPooling::Last => subwords.last(),
    }
    .ok_or_else(|| EmbedError::Integrity(format!("word {word} is not aligned to any subword")))?;
    let mut out = Vec::with_capacity(embedding.n_layers * embedding.dim);
    for layer in 0..embedding.n_layers {
        out.extend_from_slice(embedding.row(layer, pick));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fertility {
    /// Subwords per word, special symbols excluded.
    pub overall: f64,
    /// Mean subword count of target words.
    pub target: f64,
}

/// Fertility over `(subword_token_map, target word)` pairs.
pub fn fertility<'a>(items: impl IntoIterator<Item = (&'a [i32], usize)>) -> Fertility {
    let (mut words, mut subwords, mut targets, mut target_subwords) = (0usize, 0usize, 0usize, 0usize);
    for (map, target) in items {
        let aligned: Vec<i32> = map.iter().copied().filter(|&w| w != SPECIAL).collect();
        subwords += aligned.len();
        words += aligned.iter().collect::<BTreeSet<_>>().len();
        targets += 1;
        target_subwords += aligned.iter().filter(|&&w| w == target as i32).count();
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Fertility { overall: ratio(subwords, words), target: ratio(target_subwords, targets) }
}

pub(crate) fn check_shape(expected: &ModelInfo, n_layers: usize, dim: usize) -> Result<(), EmbedError> {
    if expected.n_layers != n_layers || expected.dim != dim {
        return Err(EmbedError::Integrity(format!(
            "model {} expects {}x{} but got {}x{}",
            expected.model_id, expected.n_layers, expected.dim, n_layers, dim
        )));
    }
    Ok(())
}
