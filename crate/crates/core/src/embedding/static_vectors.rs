//! Static word vectors (fastText-style) exposed as a one-layer provider.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{EmbedError, EmbeddingProvider, EmbeddingRequest, LayeredEmbedding, ModelInfo};
use crate::perturb::MASK;

/// Key of the vector used for masked words; zeros when absent.
pub const MASK_KEY: &str = "[MASK]";

#[derive(Debug, Clone, PartialEq)]
pub struct StaticEmbeddings {
    info: ModelInfo,
    vectors: HashMap<String, Vec<f32>>,
}

impl StaticEmbeddings {
    pub fn new(model_id: &str, dim: usize, vectors: HashMap<String, Vec<f32>>) -> Result<Self, EmbedError> {
        if let Some((w, v)) = vectors.iter().find(|(_, v)| v.len() != dim) {
            return Err(EmbedError::Integrity(format!("vector for {w:?} has {} dims, expected {dim}", v.len())));
        }
        let info = ModelInfo { model_id: model_id.to_string(), n_layers: 1, dim, tokenizer: "whitespace".into() };
        Ok(Self { info, vectors })
    }

    /// Read the text `.vec` format: a `count dim` header line, then
    /// `word v1 ... vdim` per line.
    pub fn load_vec(path: &Path, model_id: &str) -> Result<Self, EmbedError> {
        let text = fs::read_to_string(path).map_err(|source| EmbedError::Io { path: path.display().to_string(), source })?;
        let bad = |line: usize, m: &str| EmbedError::Integrity(format!("{}:{line}: {m}", path.display()));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad(1, "empty file"))?;
        let dims: Vec<usize> = header.split_whitespace().filter_map(|t| t.parse().ok()).collect();
        let [_, dim] = dims[..] else { return Err(bad(1, "expected `count dim` header")) };
        let mut vectors = HashMap::new();
        for (i, line) in lines.enumerate() {
            let mut parts = line.split(' ').filter(|t| !t.is_empty());
            let Some(word) = parts.next() else { continue };
            let v: Vec<f32> = parts.map(str::parse).collect::<Result<_, _>>().map_err(|_| bad(i + 2, "bad float"))?;
            if v.len() != dim {
                return Err(bad(i + 2, &format!("{} values, expected {dim}", v.len())));
            }
            vectors.insert(word.to_string(), v);
        }
        Self::new(model_id, dim, vectors)
    }

    pub fn dim(&self) -> usize {
        self.info.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Vector for `key`, zeros for unknown words.
    pub fn lookup(&self, key: &str) -> Vec<f32> {
        self.vectors.get(key).cloned().unwrap_or_else(|| vec![0.0; self.info.dim])
    }

    /// Vector for a request word, honoring masking.
    pub fn word_vector(&self, request: &EmbeddingRequest, position: usize) -> Vec<f32> {
        if request.is_masked(position) || request.words[position] == MASK {
            self.lookup(MASK_KEY)
        } else {
            self.lookup(&request.words[position])
        }
    }
}

impl EmbeddingProvider for StaticEmbeddings {
    fn info(&self) -> &ModelInfo {
        &self.info
    }

    fn embed(&self, request: &EmbeddingRequest) -> Result<LayeredEmbedding, EmbedError> {
        request.validate()?;
        let map: Vec<i32> = (0..request.words.len() as i32).collect();
        let mut e = LayeredEmbedding::zeros(1, self.info.dim, map);
        for pos in 0..request.words.len() {
            e.row_mut(0, pos).copy_from_slice(&self.word_vector(request, pos));
        }
        Ok(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_vec_format_and_embeds() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.vec");
        fs::write(&path, "2 3\ncat 1 2 3\ndog 4 5 6 \n").unwrap();
        let s = StaticEmbeddings::load_vec(&path, "ft").unwrap();
        assert_eq!(s.len(), 2);
        let req = EmbeddingRequest::new(vec!["dog".into(), "cat".into(), "emu".into()], [1], "ft");
        let e = s.embed(&req).unwrap();
        assert_eq!((e.n_layers, e.n_subwords, e.dim), (1, 3, 3));
        assert_eq!(e.row(0, 0), &[4.0, 5.0, 6.0]);
        assert_eq!(e.row(0, 1), &[0.0; 3], "masked, no [MASK] vector");
        assert_eq!(e.row(0, 2), &[0.0; 3], "unknown word");
        e.validate(&req).unwrap();
    }

    #[test]
    fn rejects_ragged_vectors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.vec");
        fs::write(&path, "1 3\ncat 1 2\n").unwrap();
        assert!(StaticEmbeddings::load_vec(&path, "ft").is_err());
    }
}
