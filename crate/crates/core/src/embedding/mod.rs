//! Sentence vectors behind one backend contract, plus cosine similarity.

mod builtin;
mod cache;
mod remote;

use std::sync::Arc;

use thiserror::Error;

pub use builtin::{normalized_phrase, BuiltinEmbedder};
pub use cache::EmbeddingCache;
pub use remote::{RemoteConfig, RemoteEmbedder};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("text {0} is empty")]
    EmptyText(usize),
    #[error("embedding backend failed (status {status:?}): {message}")]
    Backend { status: Option<u16>, message: String },
    #[error("embedding protocol error: {0}")]
    Protocol(String),
    #[error("embedding cache error: {0}")]
    Cache(#[from] std::io::Error),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimilarityError {
    #[error("cosine is undefined for a zero vector")]
    ZeroVector,
    #[error("vectors come from different backends ({0} vs {1})")]
    BackendMismatch(String, String),
    #[error("vector dimensions differ ({0} vs {1})")]
    DimMismatch(usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub backend_id: Arc<str>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, backend_id: impl Into<Arc<str>>) -> Self {
        EmbeddingVector {
            values,
            backend_id: backend_id.into(),
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn scaled(&self, k: f64) -> Self {
        EmbeddingVector {
            values: self.values.iter().map(|v| v * k).collect(),
            backend_id: self.backend_id.clone(),
        }
    }
}

pub trait EmbeddingBackend: Send + Sync {
    fn backend_id(&self) -> &str;
    fn dim(&self) -> usize;
    /// Raw vectors, one per text, in order. Callers go through [`embed`].
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbeddingError>;
}

/// Embed texts, enforcing the contract: non-empty inputs, one vector per text, declared dim.
pub fn embed(backend: &dyn EmbeddingBackend, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
    if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(EmbeddingError::EmptyText(i));
    }
    if texts.is_empty() {
        return Ok(vec![]);
    }
    let raw = backend.embed_batch(texts)?;
    if raw.len() != texts.len() {
        return Err(EmbeddingError::Protocol(format!(
            "{} vectors for {} texts",
            raw.len(),
            texts.len()
        )));
    }
    let id: Arc<str> = backend.backend_id().into();
    raw.into_iter()
        .map(|v| {
            if v.len() != backend.dim() {
                Err(EmbeddingError::Protocol(format!(
                    "vector of dim {} from a backend declaring {}",
                    v.len(),
                    backend.dim()
                )))
            } else {
                Ok(EmbeddingVector::new(v, id.clone()))
            }
        })
        .collect()
}

pub fn embed_one(backend: &dyn EmbeddingBackend, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
    Ok(embed(backend, &[text])?.pop().expect("one vector"))
}

/// Cosine similarity clamped to [-1, 1]; values within 1e-12 of ±1 snap to ±1.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, SimilarityError> {
    if a.backend_id != b.backend_id {
        return Err(SimilarityError::BackendMismatch(
            a.backend_id.to_string(),
            b.backend_id.to_string(),
        ));
    }
    if a.dim() != b.dim() {
        return Err(SimilarityError::DimMismatch(a.dim(), b.dim()));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.values.iter().zip(&b.values) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(SimilarityError::ZeroVector);
    }
    let c = (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0);
    Ok(if 1.0 - c.abs() < 1e-12 { c.signum() } else { c })
}
