//! Embedding, indexing, and top-k cosine retrieval of comment-edit pairs.
//!
//! The reference index is exhaustive: every query scores every record. An
//! approximate index may be added behind the same contract only if it is
//! indistinguishable from the exhaustive ranking on the shipped fixtures.

use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::path::Path;
use thiserror::Error;

use crate::corpus::CommentEditPair;
use crate::digest::sha256_hex_parts;
use crate::gateway::cache::ContentCache;
use crate::textdiff::tokenize_code;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("embedding backend `{backend}` unavailable: {reason}")]
    BackendUnavailable { backend: String, reason: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("records carry mixed dimensions ({0} and {1})")]
    MixedDimensions(usize, usize),
    #[error("index references pair `{0}` absent from the corpus")]
    MissingPayload(String),
    #[error("malformed index file: {0}")]
    MalformedIndex(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dense embedding with an explicit dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> EmbeddingVector {
        EmbeddingVector { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f32 {
        self.values.iter().map(|v| v * v).sum::<f32>().sqrt()
    }

    fn normalized(&self) -> Result<EmbeddingVector, RetrievalError> {
        let norm = self.norm();
        if norm == 0.0 {
            return Err(RetrievalError::ZeroVector);
        }
        Ok(EmbeddingVector::new(self.values.iter().map(|v| v / norm).collect()))
    }
}

/// Pluggable text-embedding contract. The quoted sentence encoder from the
/// evaluation is one configuration; the feature-hash mock is the offline
/// default.
pub trait EmbeddingBackend: Send + Sync {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed_text(&self, text: &str) -> Result<Vec<f32>, RetrievalError>;
}

/// Deterministic offline embedding: FNV-1a feature hashing of code tokens
/// into signed buckets, then L2 normalization. Token-free texts map to the
/// first basis vector so every embedding has a direction.
#[derive(Debug, Clone)]
pub struct HashEmbeddingBackend {
    dim: usize,
    id: String,
}

impl HashEmbeddingBackend {
    pub fn new(dim: usize) -> HashEmbeddingBackend {
        HashEmbeddingBackend {
            dim,
            id: format!("feature-hash-{dim}"),
        }
    }
}

impl Default for HashEmbeddingBackend {
    fn default() -> Self {
        HashEmbeddingBackend::new(64)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for byte in bytes {
        hash ^= *byte as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

impl EmbeddingBackend for HashEmbeddingBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f32>, RetrievalError> {
        let mut values = vec![0.0f32; self.dim];
        let tokens = tokenize_code(text);
        if tokens.is_empty() {
            values[0] = 1.0;
            return Ok(values);
        }
        for token in tokens {
            let hash = fnv1a(token.as_bytes());
            let bucket = (hash % self.dim as u64) as usize;
            let sign = if (hash >> 32) & 1 == 0 { 1.0 } else { -1.0 };
            values[bucket] += sign;
        }
        let norm = values.iter().map(|v| v * v).sum::<f32>().sqrt();
        if norm == 0.0 {
            // Signed buckets cancelled out; fall back to the basis vector.
            values.fill(0.0);
            values[0] = 1.0;
            return Ok(values);
        }
        for v in values.iter_mut() {
            *v /= norm;
        }
        Ok(values)
    }
}

/// Canonical text serialization of a pair for embedding. Queries use the
/// same template; pairs lacking a post-edit snippet render an empty
/// trailing segment.
pub fn render_retrieval_text(pair: &CommentEditPair) -> String {
    format!(
        "Comment: {}\nCode Before: {}\nCode After: {}",
        pair.comment_text, pair.code_before, pair.code_after
    )
}

/// Embeds text through the backend, memoizing in the content-addressed
/// cache when one is supplied.
pub fn embed(
    text: &str,
    backend: &dyn EmbeddingBackend,
    cache: Option<&ContentCache>,
) -> Result<EmbeddingVector, RetrievalError> {
    let key = sha256_hex_parts(&[b"embed", backend.id().as_bytes(), text.as_bytes()]);
    if let Some(cache) = cache {
        if let Some(hit) = cache.get(&key) {
            if let Ok(values) = serde_json::from_str::<Vec<f32>>(&hit) {
                if values.len() == backend.dim() {
                    return Ok(EmbeddingVector::new(values));
                }
            }
            log::warn!("discarding malformed embedding cache entry {key}");
        }
    }
    let values = backend.embed_text(text)?;
    if values.len() != backend.dim() {
        return Err(RetrievalError::DimensionMismatch {
            expected: backend.dim(),
            got: values.len(),
        });
    }
    if let Some(cache) = cache {
        let _ = cache.put(&key, &serde_json::to_string(&values).expect("vector serializes"));
    }
    Ok(EmbeddingVector::new(values))
}

/// Cosine similarity of two non-zero vectors of equal dimension.
pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f32, RetrievalError> {
    if u.dim() != v.dim() {
        return Err(RetrievalError::DimensionMismatch {
            expected: u.dim(),
            got: v.dim(),
        });
    }
    let nu = u.norm();
    let nv = v.norm();
    if nu == 0.0 || nv == 0.0 {
        return Err(RetrievalError::ZeroVector);
    }
    let dot: f32 = u.values.iter().zip(&v.values).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// An indexed pair: unit-normalized vector plus its payload.
#[derive(Debug, Clone)]
pub struct IndexedRecord {
    pub pair_id: String,
    pub vector: EmbeddingVector,
    pub payload: CommentEditPair,
}

impl IndexedRecord {
    pub fn new(
        pair_id: &str,
        vector: EmbeddingVector,
        payload: CommentEditPair,
    ) -> Result<IndexedRecord, RetrievalError> {
        Ok(IndexedRecord {
            pair_id: pair_id.to_string(),
            vector: vector.normalized()?,
            payload,
        })
    }

    /// For records whose vectors are already unit-normalized (index reload).
    fn from_normalized(pair_id: String, vector: EmbeddingVector, payload: CommentEditPair) -> IndexedRecord {
        IndexedRecord { pair_id, vector, payload }
    }
}

/// A retrieved exemplar with its cosine similarity to the query.
#[derive(Debug, Clone)]
pub struct Neighbor {
    pub pair_id: String,
    pub similarity: f32,
    pub payload: CommentEditPair,
}

/// Immutable exhaustive-search index; insertion order breaks ties.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    dim: usize,
    backend_id: String,
    records: Vec<IndexedRecord>,
}

impl VectorIndex {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn backend_id(&self) -> &str {
        &self.backend_id
    }

    pub fn records(&self) -> &[IndexedRecord] {
        &self.records
    }
}

pub fn build_index(records: Vec<IndexedRecord>, backend_id: &str) -> Result<VectorIndex, RetrievalError> {
    if records.is_empty() {
        log::warn!("building an empty index; queries will return no neighbors");
        return Ok(VectorIndex {
            dim: 0,
            backend_id: backend_id.to_string(),
            records,
        });
    }
    let dim = records[0].vector.dim();
    for record in &records {
        if record.vector.dim() != dim {
            return Err(RetrievalError::MixedDimensions(dim, record.vector.dim()));
        }
    }
    Ok(VectorIndex {
        dim,
        backend_id: backend_id.to_string(),
        records,
    })
}

/// Exhaustive top-k by cosine similarity, descending, ties broken by
/// insertion order. Ids in `exclude` are never returned (used to drop the
/// query pair itself during leave-one-out evaluation).
pub fn query_top_k(
    index: &VectorIndex,
    query: &EmbeddingVector,
    k: usize,
    exclude: Option<&HashSet<String>>,
) -> Result<Vec<Neighbor>, RetrievalError> {
    if index.is_empty() {
        return Ok(Vec::new());
    }
    if query.dim() != index.dim {
        return Err(RetrievalError::DimensionMismatch {
            expected: index.dim,
            got: query.dim(),
        });
    }
    let unit = query.normalized()?;
    let mut scored: Vec<(usize, f32)> = index
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| exclude.is_none_or(|ex| !ex.contains(&r.pair_id)))
        .map(|(i, r)| {
            let dot: f32 = unit.values.iter().zip(&r.vector.values).map(|(a, b)| a * b).sum();
            (i, dot.clamp(-1.0, 1.0))
        })
        .collect();
    // Stable sort keeps insertion order among equal similarities.
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(i, similarity)| Neighbor {
            pair_id: index.records[i].pair_id.clone(),
            similarity,
            payload: index.records[i].payload.clone(),
        })
        .collect())
}

#[derive(Serialize, Deserialize)]
struct IndexHeader {
    version: u32,
    dim: usize,
    count: usize,
    backend_id: String,
}

#[derive(Serialize, Deserialize)]
struct IndexLine {
    pair_id: String,
    vector: Vec<f32>,
}

/// Persists the index as a JSON header line followed by one JSON line per
/// record. Payloads are not duplicated; they rejoin via pair_id on load.
pub fn save_index(index: &VectorIndex, path: &Path) -> Result<(), RetrievalError> {
    let header = IndexHeader {
        version: 1,
        dim: index.dim,
        count: index.records.len(),
        backend_id: index.backend_id.clone(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for record in &index.records {
        let line = IndexLine {
            pair_id: record.pair_id.clone(),
            vector: record.vector.values.clone(),
        };
        out.push_str(&serde_json::to_string(&line).expect("record serializes"));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_index(path: &Path, corpus: &[CommentEditPair]) -> Result<VectorIndex, RetrievalError> {
    let content = std::fs::read_to_string(path)?;
    let mut lines = content.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| RetrievalError::MalformedIndex("missing header".to_string()))?;
    let header: IndexHeader = serde_json::from_str(header_line)
        .map_err(|e| RetrievalError::MalformedIndex(format!("header: {e}")))?;
    let by_id: HashMap<&str, &CommentEditPair> =
        corpus.iter().map(|p| (p.pair_id.as_str(), p)).collect();
    let mut records = Vec::with_capacity(header.count);
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: IndexLine = serde_json::from_str(line)
            .map_err(|e| RetrievalError::MalformedIndex(e.to_string()))?;
        if parsed.vector.len() != header.dim {
            return Err(RetrievalError::DimensionMismatch {
                expected: header.dim,
                got: parsed.vector.len(),
            });
        }
        let payload = by_id
            .get(parsed.pair_id.as_str())
            .ok_or_else(|| RetrievalError::MissingPayload(parsed.pair_id.clone()))?;
        records.push(IndexedRecord::from_normalized(
            parsed.pair_id,
            EmbeddingVector::new(parsed.vector),
            (*payload).clone(),
        ));
    }
    if records.len() != header.count {
        return Err(RetrievalError::MalformedIndex(format!(
            "header count {} but {} records",
            header.count,
            records.len()
        )));
    }
    build_index(records, &header.backend_id)
}
