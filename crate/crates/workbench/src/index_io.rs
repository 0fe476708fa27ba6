//! Benign-index persistence: a single self-describing JSON file with a
//! header (dimension, chunking parameters, embedder id) and the chunk
//! records. Norms are recomputed on load rather than trusted from disk.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use obbr_core::retrieval::{BenignIndex, EmbeddingVector, IndexedChunk};

#[derive(Debug, Serialize, Deserialize)]
struct StoredChunk {
    text: String,
    source_id: String,
    values: Vec<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexFile {
    schema_version: u32,
    dimension: usize,
    chunk_size: usize,
    chunk_overlap: usize,
    embedder_id: String,
    chunks: Vec<StoredChunk>,
}

#[derive(Debug, thiserror::Error)]
pub enum IndexIoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

pub fn save_index(index: &BenignIndex, path: &Path) -> Result<(), IndexIoError> {
    let file = IndexFile {
        schema_version: crate::report::SCHEMA_VERSION,
        dimension: index.dimension,
        chunk_size: index.chunk_size,
        chunk_overlap: index.chunk_overlap,
        embedder_id: index.embedder_id.clone(),
        chunks: index
            .chunks
            .iter()
            .map(|c| StoredChunk {
                text: c.text.clone(),
                source_id: c.source_id.clone(),
                values: c.vector.values.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_string(&file).expect("index serializes");
    fs::write(path, json).map_err(|source| IndexIoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_index(path: &Path) -> Result<BenignIndex, IndexIoError> {
    let text = fs::read_to_string(path).map_err(|source| IndexIoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let file: IndexFile = serde_json::from_str(&text).map_err(|e| IndexIoError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut chunks = Vec::with_capacity(file.chunks.len());
    for stored in file.chunks {
        let vector = EmbeddingVector::new(stored.values).map_err(|e| IndexIoError::Invalid {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        chunks.push(IndexedChunk {
            text: stored.text,
            source_id: stored.source_id,
            vector,
        });
    }
    let index = BenignIndex {
        chunks,
        chunk_size: file.chunk_size,
        chunk_overlap: file.chunk_overlap,
        embedder_id: file.embedder_id,
        dimension: file.dimension,
    };
    index.validate().map_err(|e| IndexIoError::Invalid {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(index)
}
