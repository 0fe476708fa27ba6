//! Benign-corpus chunking, embedding, and exact top-k cosine retrieval.
//!
//! The index is a flat store scanned in full on every query; at desk scale
//! exactness beats approximate-nearest-neighbor complexity. Swapping in an
//! ANN structure would only need to honor [`retrieve_k_entries`]'s contract.

use alloc::borrow::ToOwned;
use alloc::collections::BinaryHeap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::{format, vec};

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Label};
use crate::rng::fnv1a64;

pub const DEFAULT_CHUNK_SIZE: usize = 256;
pub const DEFAULT_CHUNK_OVERLAP: usize = 10;
pub const DEFAULT_DIMENSION: usize = 384;
pub const DEFAULT_TOP_K: usize = 3;

/// A dense vector with its Euclidean norm cached at construction. The norm
/// is accumulated in f64 so self-similarity lands within 1e-9 of 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
    pub norm: f64,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, RetrievalError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(RetrievalError::NonFiniteEmbedding);
        }
        let norm = l2_norm(&values);
        Ok(EmbeddingVector { values, norm })
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }
}

fn l2_norm(values: &[f32]) -> f64 {
    libm::sqrt(values.iter().map(|&v| f64::from(v) * f64::from(v)).sum())
}

/// Cosine similarity in f64. Any zero-norm operand yields 0 so the ranking
/// stays total instead of producing NaN.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    if a.norm == 0.0 || b.norm == 0.0 {
        return 0.0;
    }
    let dot: f64 = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum();
    dot / (a.norm * b.norm)
}

/// Text-to-vector contract: deterministic for fixed text, fixed dimension,
/// and identified by a stable id recorded in any index it builds.
pub trait Embedder {
    fn id(&self) -> &str;
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, RetrievalError>;

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, RetrievalError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

/// Deterministic hashed token-frequency embedder for hermetic runs: lowercase,
/// split on non-alphanumerics, FNV-hash each token into `dimension` buckets,
/// count, L2-normalize.
#[derive(Debug, Clone)]
pub struct HashedEmbedder {
    dimension: usize,
    id: String,
}

impl HashedEmbedder {
    pub fn new(dimension: usize) -> Self {
        HashedEmbedder {
            dimension,
            id: format!("hashed-fnv1a-v1-d{dimension}"),
        }
    }
}

impl Default for HashedEmbedder {
    fn default() -> Self {
        HashedEmbedder::new(DEFAULT_DIMENSION)
    }
}

impl Embedder for HashedEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, RetrievalError> {
        let mut counts = vec![0u32; self.dimension];
        for token in text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            let lowered = token.to_lowercase();
            let bucket = (fnv1a64(lowered.as_bytes()) % self.dimension as u64) as usize;
            counts[bucket] += 1;
        }
        let norm = l2_norm(&counts.iter().map(|&c| c as f32).collect::<Vec<_>>());
        let values = if norm == 0.0 {
            vec![0.0f32; self.dimension]
        } else {
            counts.iter().map(|&c| (c as f64 / norm) as f32).collect()
        };
        EmbeddingVector::new(values)
    }
}

/// One indexed chunk of benign corpus text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexedChunk {
    pub text: String,
    /// Id of the corpus sample the chunk came from.
    pub source_id: String,
    pub vector: EmbeddingVector,
}

/// Chunked benign corpus with unit-direction comparisons done in f64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenignIndex {
    pub chunks: Vec<IndexedChunk>,
    pub chunk_size: usize,
    pub chunk_overlap: usize,
    pub embedder_id: String,
    pub dimension: usize,
}

impl BenignIndex {
    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn validate(&self) -> Result<(), RetrievalError> {
        for chunk in &self.chunks {
            if chunk.vector.dimension() != self.dimension {
                return Err(RetrievalError::DimensionMismatch {
                    expected: self.dimension,
                    got: chunk.vector.dimension(),
                });
            }
        }
        Ok(())
    }
}

/// Splits text into chunks of at most `size` characters with consecutive
/// chunks sharing exactly `overlap` characters. Sizes are measured in
/// characters, not bytes, so multi-byte text never splits inside a code
/// point. Concatenating the chunks with overlaps dropped reconstructs the
/// input.
pub fn chunk_text(text: &str, size: usize, overlap: usize) -> Result<Vec<String>, RetrievalError> {
    if size == 0 || size <= overlap {
        return Err(RetrievalError::ChunkConfig { size, overlap });
    }
    let mut offsets: Vec<usize> = text.char_indices().map(|(i, _)| i).collect();
    offsets.push(text.len());
    let n_chars = offsets.len() - 1;
    if n_chars == 0 {
        return Ok(Vec::new());
    }
    let stride = size - overlap;
    let mut chunks = Vec::new();
    let mut start = 0usize;
    loop {
        let end = core::cmp::min(start + size, n_chars);
        chunks.push(text[offsets[start]..offsets[end]].to_owned());
        if end == n_chars {
            break;
        }
        start += stride;
    }
    Ok(chunks)
}

/// Chunks and embeds every sample of a benign corpus. The corpus must be
/// entirely clean-labeled; retrieval grounding only works if the exemplar
/// pool is known safe.
pub fn build_index(
    corpus: &Dataset,
    embedder: &dyn Embedder,
    size: usize,
    overlap: usize,
) -> Result<BenignIndex, RetrievalError> {
    if corpus.is_empty() {
        return Err(RetrievalError::EmptyCorpus);
    }
    let mut texts = Vec::new();
    let mut sources = Vec::new();
    for sample in corpus.iter() {
        if sample.label != Label::Clean {
            return Err(RetrievalError::NonBenignSample {
                id: sample.id.clone(),
                label: sample.label.to_string(),
            });
        }
        for chunk in chunk_text(&sample.prompt_text(), size, overlap)? {
            texts.push(chunk);
            sources.push(sample.id.clone());
        }
    }
    let vectors = embedder.embed_batch(&texts)?;
    let mut chunks = Vec::with_capacity(texts.len());
    for ((text, source_id), vector) in texts.into_iter().zip(sources).zip(vectors) {
        if vector.dimension() != embedder.dimension() {
            return Err(RetrievalError::DimensionMismatch {
                expected: embedder.dimension(),
                got: vector.dimension(),
            });
        }
        chunks.push(IndexedChunk {
            text,
            source_id,
            vector,
        });
    }
    Ok(BenignIndex {
        chunks,
        chunk_size: size,
        chunk_overlap: overlap,
        embedder_id: embedder.id().to_owned(),
        dimension: embedder.dimension(),
    })
}

/// One retrieval hit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieved {
    /// Insertion ordinal of the chunk in the index (also the tie-breaker).
    pub ordinal: usize,
    pub source_id: String,
    pub text: String,
    pub similarity: f64,
}

// Heap entry ordered so the WORST candidate is at the top of a max-heap:
// lower similarity is greater, and on ties the higher ordinal is greater.
#[derive(Debug, PartialEq)]
struct WorstFirst {
    similarity: f64,
    ordinal: usize,
}

impl Eq for WorstFirst {}

impl Ord for WorstFirst {
    fn cmp(&self, other: &Self) -> core::cmp::Ordering {
        other
            .similarity
            .total_cmp(&self.similarity)
            .then(self.ordinal.cmp(&other.ordinal))
    }
}

impl PartialOrd for WorstFirst {
    fn partial_cmp(&self, other: &Self) -> Option<core::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Exact top-k under cosine similarity: descending similarity, ties broken by
/// ascending insertion ordinal. Returns all chunks (still ordered) when the
/// index holds fewer than `k`.
pub fn retrieve_k_entries(
    query: &str,
    index: &BenignIndex,
    k: usize,
    embedder: &dyn Embedder,
) -> Result<Vec<Retrieved>, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    if index.is_empty() {
        return Err(RetrievalError::EmptyIndex);
    }
    if embedder.id() != index.embedder_id {
        return Err(RetrievalError::EmbedderMismatch {
            index: index.embedder_id.clone(),
            query: embedder.id().to_owned(),
        });
    }
    let q = embedder.embed(query)?;
    if q.dimension() != index.dimension {
        return Err(RetrievalError::DimensionMismatch {
            expected: index.dimension,
            got: q.dimension(),
        });
    }

    let mut heap: BinaryHeap<WorstFirst> = BinaryHeap::with_capacity(k + 1);
    for (ordinal, chunk) in index.chunks.iter().enumerate() {
        let entry = WorstFirst {
            similarity: cosine_similarity(&q, &chunk.vector),
            ordinal,
        };
        if heap.len() < k {
            heap.push(entry);
        } else if entry < *heap.peek().expect("non-empty heap") {
            heap.pop();
            heap.push(entry);
        }
    }
    let mut picked: Vec<WorstFirst> = heap.into_vec();
    // Ascending in worst-first order puts the best candidate first.
    picked.sort();
    Ok(picked
        .into_iter()
        .map(|e| {
            let chunk = &index.chunks[e.ordinal];
            Retrieved {
                ordinal: e.ordinal,
                source_id: chunk.source_id.clone(),
                text: chunk.text.clone(),
                similarity: e.similarity,
            }
        })
        .collect())
}

/// Top-k chunk texts in retrieval order.
pub fn retrieve_k(
    query: &str,
    index: &BenignIndex,
    k: usize,
    embedder: &dyn Embedder,
) -> Result<Vec<String>, RetrievalError> {
    Ok(retrieve_k_entries(query, index, k, embedder)?
        .into_iter()
        .map(|r| r.text)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RetrievalError {
    #[error("chunk size {size} must exceed overlap {overlap}")]
    ChunkConfig { size: usize, overlap: usize },
    #[error("empty benign corpus")]
    EmptyCorpus,
    #[error("empty index")]
    EmptyIndex,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("sample {id} has label {label}; the reference corpus must be benign")]
    NonBenignSample { id: String, label: String },
    #[error("embedding vector contains non-finite values")]
    NonFiniteEmbedding,
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("index was built with embedder {index} but queried with {query}")]
    EmbedderMismatch { index: String, query: String },
    #[error("embedder transport failure: {message}")]
    EmbedderTransport { message: String },
}
