//! In-process read-through cache keyed by request hash.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use super::{request_hash, EmbedError, EmbeddingProvider, EmbeddingRequest, LayeredEmbedding, ModelInfo, RequestId};

pub struct CachedProvider<P> {
    inner: P,
    entries: RwLock<HashMap<RequestId, Arc<LayeredEmbedding>>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl<P: EmbeddingProvider> CachedProvider<P> {
    pub fn new(inner: P) -> Self {
        Self { inner, entries: RwLock::new(HashMap::new()), hits: AtomicU64::new(0), misses: AtomicU64::new(0) }
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }

    /// Shared handle to the cached tensor, fetching it on a miss.
    pub fn get(&self, request: &EmbeddingRequest) -> Result<Arc<LayeredEmbedding>, EmbedError> {
        let id = request_hash(request);
        if let Some(e) = self.entries.read().expect("cache lock").get(&id) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(Arc::clone(e));
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        // Fetch outside the lock; concurrent misses on one id may both fetch,
        // and the first insert wins so every caller sees the same tensor.
        let fetched = Arc::new(self.inner.embed(request)?);
        let mut map = self.entries.write().expect("cache lock");
        Ok(Arc::clone(map.entry(id).or_insert(fetched)))
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(hits, misses)` so far.
    pub fn stats(&self) -> (u64, u64) {
        (self.hits.load(Ordering::Relaxed), self.misses.load(Ordering::Relaxed))
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CachedProvider<P> {
    fn info(&self) -> &ModelInfo {
        self.inner.info()
    }

    fn embed(&self, request: &EmbeddingRequest) -> Result<LayeredEmbedding, EmbedError> {
        self.get(request).map(|e| (*e).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{RandomControl, RandomMode};
    use rayon::prelude::*;
    use std::sync::atomic::AtomicUsize;

    struct Counting(RandomControl, AtomicUsize);

    impl EmbeddingProvider for Counting {
        fn info(&self) -> &ModelInfo {
            self.0.info()
        }
        fn embed(&self, r: &EmbeddingRequest) -> Result<LayeredEmbedding, EmbedError> {
            self.1.fetch_add(1, Ordering::SeqCst);
            self.0.embed(r)
        }
    }

    fn provider() -> CachedProvider<Counting> {
        let info = ModelInfo { model_id: "r".into(), n_layers: 2, dim: 4, tokenizer: String::new() };
        CachedProvider::new(Counting(RandomControl::new(info, RandomMode::FullyRandom, 1), AtomicUsize::new(0)))
    }

    fn req(i: usize) -> EmbeddingRequest {
        EmbeddingRequest::new(vec![format!("w{i}"), "x".into()], [], "r")
    }

    #[test]
    fn second_call_is_a_hit() {
        let c = provider();
        let a = c.embed(&req(0)).unwrap();
        let b = c.embed(&req(0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(c.stats(), (1, 1));
        assert_eq!(c.inner().1.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn concurrent_reads_and_inserts_agree_with_direct_calls() {
        let c = provider();
        let results: Vec<_> = (0..200).into_par_iter().map(|i| (i % 20, c.embed(&req(i % 20)).unwrap())).collect();
        for (k, e) in results {
            assert_eq!(e, c.inner().0.embed(&req(k)).unwrap());
        }
        assert_eq!(c.len(), 20);
    }
}
