//! MPEB v1: a memory-mappable archive of layered embeddings.
//!
//! ```text
//! "MPEB" | u32 version | u32 metadata_len | metadata JSON
//! repeated: [u8; 32] id | u32 n_subwords | i32 × n_subwords alignment
//!           | f32 × (n_layers · n_subwords · dim), layer-major
//! ```
//!
//! All integers and floats are little-endian. Records are appended in
//! arbitrary order; the reader indexes them by id on open.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use memmap2::Mmap;
use serde::{Deserialize, Serialize};

use super::{check_shape, request_hash, EmbedError, EmbeddingProvider, EmbeddingRequest, LayeredEmbedding, ModelInfo, RequestId};

pub const MPEB_MAGIC: &[u8; 4] = b"MPEB";
pub const MPEB_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchiveMetadata {
    pub model_id: String,
    pub n_layers: usize,
    pub dim: usize,
    pub tokenizer: String,
    /// Extra producer fields (reinitialization seed, unknown-token flags, ...).
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl ArchiveMetadata {
    pub fn new(info: &ModelInfo) -> Self {
        Self {
            model_id: info.model_id.clone(),
            n_layers: info.n_layers,
            dim: info.dim,
            tokenizer: info.tokenizer.clone(),
            extra: Default::default(),
        }
    }

    pub fn model_info(&self) -> ModelInfo {
        ModelInfo {
            model_id: self.model_id.clone(),
            n_layers: self.n_layers,
            dim: self.dim,
            tokenizer: self.tokenizer.clone(),
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> EmbedError + '_ {
    move |source| EmbedError::Io { path: path.display().to_string(), source }
}

pub struct ArchiveWriter {
    path: PathBuf,
    out: BufWriter<File>,
    meta: ArchiveMetadata,
    written: std::collections::HashSet<RequestId>,
}

impl ArchiveWriter {
    pub fn create(path: &Path, meta: ArchiveMetadata) -> Result<Self, EmbedError> {
        let file = File::create(path).map_err(io_err(path))?;
        let mut out = BufWriter::new(file);
        let json = serde_json::to_vec(&meta).expect("metadata serializes");
        let header = [&MPEB_MAGIC[..], &MPEB_VERSION.to_le_bytes(), &(json.len() as u32).to_le_bytes(), &json].concat();
        out.write_all(&header).map_err(io_err(path))?;
        Ok(Self { path: path.to_path_buf(), out, meta, written: Default::default() })
    }

    pub fn len(&self) -> usize {
        self.written.len()
    }

    pub fn is_empty(&self) -> bool {
        self.written.is_empty()
    }

    /// Append one record; duplicate ids are skipped and reported as `false`.
    pub fn append(&mut self, id: RequestId, embedding: &LayeredEmbedding) -> Result<bool, EmbedError> {
        check_shape(&self.meta.model_info(), embedding.n_layers, embedding.dim)?;
        if embedding.values.len() != embedding.n_layers * embedding.n_subwords * embedding.dim
            || embedding.subword_token_map.len() != embedding.n_subwords
        {
            return Err(EmbedError::Integrity(format!("record {id} has inconsistent lengths")));
        }
        if !self.written.insert(id) {
            return Ok(false);
        }
        let mut buf = Vec::with_capacity(36 + 4 * (embedding.n_subwords + embedding.values.len()));
        buf.extend_from_slice(&id.0);
        buf.extend_from_slice(&(embedding.n_subwords as u32).to_le_bytes());
        for &a in &embedding.subword_token_map {
            buf.extend_from_slice(&a.to_le_bytes());
        }
        for &v in &embedding.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.out.write_all(&buf).map_err(io_err(&self.path))?;
        Ok(true)
    }

    /// Embed every request with `provider` and append it.
    pub fn append_request(&mut self, provider: &dyn EmbeddingProvider, request: &EmbeddingRequest) -> Result<bool, EmbedError> {
        let id = request_hash(request);
        if self.written.contains(&id) {
            return Ok(false);
        }
        let e = provider.embed(request)?;
        self.append(id, &e)
    }

    pub fn finish(mut self) -> Result<usize, EmbedError> {
        self.out.flush().map_err(io_err(&self.path))?;
        self.out.get_ref().sync_all().map_err(io_err(&self.path))?;
        Ok(self.written.len())
    }
}

/// Read-only, memory-mapped archive. Safe to share across threads.
pub struct ArchiveReader {
    path: PathBuf,
    map: Mmap,
    meta: ArchiveMetadata,
    info: ModelInfo,
    /// id -> (offset of the alignment array, n_subwords)
    index: HashMap<RequestId, (usize, usize)>,
    order: Vec<RequestId>,
}

fn read_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes.get(at..at + 4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
}

impl ArchiveReader {
    pub fn open(path: &Path) -> Result<Self, EmbedError> {
        let file = File::open(path).map_err(io_err(path))?;
        // SAFETY: archives are never modified after finalization.
        let map = unsafe { Mmap::map(&file) }.map_err(io_err(path))?;
        let bad = |m: &str| EmbedError::Integrity(format!("{}: {m}", path.display()));
        if map.get(..4) != Some(&MPEB_MAGIC[..]) {
            return Err(bad("bad magic"));
        }
        let version = read_u32(&map, 4).ok_or_else(|| bad("truncated header"))?;
        if version != MPEB_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let meta_len = read_u32(&map, 8).ok_or_else(|| bad("truncated header"))? as usize;
        let meta_bytes = map.get(12..12 + meta_len).ok_or_else(|| bad("truncated metadata"))?;
        let meta: ArchiveMetadata =
            serde_json::from_slice(meta_bytes).map_err(|e| bad(&format!("metadata: {e}")))?;
        let record_floats = |n: usize| meta.n_layers * n * meta.dim;

        let mut index = HashMap::new();
        let mut order = Vec::new();
        let mut pos = 12 + meta_len;
        while pos < map.len() {
            let id_bytes: [u8; 32] = map.get(pos..pos + 32).ok_or_else(|| bad("truncated record id"))?.try_into().unwrap();
            let n = read_u32(&map, pos + 32).ok_or_else(|| bad("truncated record"))? as usize;
            let body = pos + 36;
            let end = body + 4 * (n + record_floats(n));
            if end > map.len() {
                return Err(bad("truncated record body"));
            }
            let id = RequestId(id_bytes);
            if index.insert(id, (body, n)).is_some() {
                return Err(bad(&format!("duplicate record {id}")));
            }
            order.push(id);
            pos = end;
        }
        let info = meta.model_info();
        Ok(Self { path: path.to_path_buf(), map, meta, info, index, order })
    }

    pub fn metadata(&self) -> &ArchiveMetadata {
        &self.meta
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Record ids in file order.
    pub fn ids(&self) -> &[RequestId] {
        &self.order
    }

    pub fn contains(&self, id: &RequestId) -> bool {
        self.index.contains_key(id)
    }

    pub fn get(&self, id: &RequestId) -> Option<LayeredEmbedding> {
        let &(body, n) = self.index.get(id)?;
        let align_end = body + 4 * n;
        let subword_token_map = self.map[body..align_end]
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let n_values = self.meta.n_layers * n * self.meta.dim;
        let values = self.map[align_end..align_end + 4 * n_values]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Some(LayeredEmbedding { n_layers: self.meta.n_layers, n_subwords: n, dim: self.meta.dim, values, subword_token_map })
    }

    /// Fail unless the archive matches a registry entry.
    pub fn check_model(&self, expected: &ModelInfo) -> Result<(), EmbedError> {
        if expected.model_id != self.meta.model_id {
            return Err(EmbedError::Integrity(format!(
                "archive holds model {}, expected {}",
                self.meta.model_id, expected.model_id
            )));
        }
        check_shape(expected, self.meta.n_layers, self.meta.dim)
    }
}

impl EmbeddingProvider for ArchiveReader {
    fn info(&self) -> &ModelInfo {
        &self.info
    }

    fn embed(&self, request: &EmbeddingRequest) -> Result<LayeredEmbedding, EmbedError> {
        let id = request_hash(request);
        self.get(&id).ok_or(EmbedError::NotFound(id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{RandomControl, RandomMode};

    fn info() -> ModelInfo {
        ModelInfo { model_id: "rand".into(), n_layers: 3, dim: 4, tokenizer: "chunk3".into() }
    }

    fn request(words: &[&str], masked: &[usize]) -> EmbeddingRequest {
        EmbeddingRequest::new(words.iter().map(|s| s.to_string()).collect(), masked.iter().copied(), "rand")
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.mpeb");
        let provider = RandomControl::new(info(), RandomMode::FullyRandom, 5);
        let reqs = [request(&["the", "cats", "sleep"], &[]), request(&["the", "cats", "sleep"], &[1])];
        let mut w = ArchiveWriter::create(&path, ArchiveMetadata::new(&info())).unwrap();
        for r in &reqs {
            assert!(w.append_request(&provider, r).unwrap());
        }
        assert!(!w.append_request(&provider, &reqs[0]).unwrap());
        assert_eq!(w.finish().unwrap(), 2);

        let reader = ArchiveReader::open(&path).unwrap();
        assert_eq!(reader.len(), 2);
        reader.check_model(&info()).unwrap();
        for r in &reqs {
            let stored = reader.embed(r).unwrap();
            let fresh = provider.embed(r).unwrap();
            assert_eq!(stored.subword_token_map, fresh.subword_token_map);
            let bits = |e: &LayeredEmbedding| e.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&stored), bits(&fresh));
        }
        assert!(matches!(reader.embed(&request(&["x"], &[])), Err(EmbedError::NotFound(_))));
    }

    #[test]
    fn empty_archive_and_header_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.mpeb");
        ArchiveWriter::create(&path, ArchiveMetadata::new(&info())).unwrap().finish().unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"MPEB");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), 12 + len);
        let meta: serde_json::Value = serde_json::from_slice(&bytes[12..]).unwrap();
        assert_eq!(meta["n_layers"], 3);
        assert!(ArchiveReader::open(&path).unwrap().is_empty());
    }

    #[test]
    fn truncated_and_mismatched_archives_fail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.mpeb");
        let provider = RandomControl::new(info(), RandomMode::FullyRandom, 5);
        let mut w = ArchiveWriter::create(&path, ArchiveMetadata::new(&info())).unwrap();
        w.append_request(&provider, &request(&["a", "b"], &[])).unwrap();
        w.finish().unwrap();
        let reader = ArchiveReader::open(&path).unwrap();
        let other = ModelInfo { dim: 8, ..info() };
        assert!(matches!(reader.check_model(&other), Err(EmbedError::Integrity(_))));
        drop(reader);

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(ArchiveReader::open(&path), Err(EmbedError::Integrity(_))));
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(ArchiveReader::open(&path).is_err());
    }

    #[test]
    fn writer_rejects_wrong_shape() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = ArchiveWriter::create(&dir.path().join("s.mpeb"), ArchiveMetadata::new(&info())).unwrap();
        let e = LayeredEmbedding::zeros(2, 4, vec![0]);
        assert!(w.append(RequestId([0; 32]), &e).is_err());
    }
}
