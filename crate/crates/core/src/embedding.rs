//! Text embeddings and cosine similarity.
//!
//! [`LocalEmbedder`] is a hashed bag of words: content tokens are hashed into
//! `dimension` buckets, counted, and L2-normalized. It is deterministic and
//! offline, which is what the fixtures need; it makes no claim to semantic
//! quality. [`RemoteEmbedder`] calls an OpenAI-compatible `/embeddings`
//! endpoint.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::llm::remote::HttpClient;
use crate::llm::{LlmError, RemoteSettings};
use crate::text::content_tokens;

pub const DEFAULT_DIMENSION: usize = 256;
pub const DEFAULT_SEED: u64 = 0x6d65_6d6c_6f6f_7031;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error(transparent)]
    Remote(#[from] LlmError),
}

/// Unit-norm vector, or all zeros for text with no content tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn zeros(dimension: usize) -> Self {
        EmbeddingVector { values: vec![0.0; dimension] }
    }

    /// L2-normalizes `raw`; an all-zero input stays zero.
    pub fn normalized(raw: &[f64]) -> Self {
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Self::zeros(raw.len());
        }
        EmbeddingVector { values: raw.iter().map(|v| (v / norm) as f32).collect() }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| f64::from(*v).powi(2)).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
}

/// Cosine similarity; 0.0 when either side is the zero vector.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    if a.dimension() != b.dimension() {
        return Err(EmbeddingError::DimensionMismatch(a.dimension(), b.dimension()));
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.values.iter().zip(&b.values) {
        let (x, y) = (f64::from(*x), f64::from(*y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalEmbedder {
    dimension: usize,
    seed: u64,
}

impl Default for LocalEmbedder {
    fn default() -> Self {
        LocalEmbedder::new(DEFAULT_DIMENSION, DEFAULT_SEED)
    }
}

impl LocalEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Self {
        LocalEmbedder { dimension: dimension.max(1), seed }
    }

    /// Bucket of a token: seeded FNV-1a, reduced modulo the dimension.
    pub fn bucket(&self, token: &str) -> usize {
        const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut hash = OFFSET;
        for byte in self.seed.to_le_bytes().iter().chain(token.as_bytes()) {
            hash ^= u64::from(*byte);
            hash = hash.wrapping_mul(PRIME);
        }
        (hash % self.dimension as u64) as usize
    }
}

impl Embedder for LocalEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let mut raw = vec![0.0f64; self.dimension];
        for token in content_tokens(text) {
            raw[self.bucket(&token)] += 1.0;
        }
        Ok(EmbeddingVector::normalized(&raw))
    }
}

pub struct RemoteEmbedder {
    http: HttpClient,
    model: String,
    dimension: usize,
}

impl RemoteEmbedder {
    pub fn new(settings: RemoteSettings, model: impl Into<String>, dimension: usize) -> Result<Self, LlmError> {
        Ok(RemoteEmbedder { http: HttpClient::new(settings)?, model: model.into(), dimension })
    }
}

impl Embedder for RemoteEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        if content_tokens(text).is_empty() {
            return Ok(EmbeddingVector::zeros(self.dimension));
        }
        let response = self.http.post_json("embeddings", &json!({"model": self.model, "input": text}))?;
        let raw: Vec<f64> = response
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| LlmError::Malformed("no data[0].embedding".into()))?
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| LlmError::Malformed("non-numeric embedding".into())))
            .collect::<Result<_, _>>()?;
        if raw.len() != self.dimension {
            return Err(EmbeddingError::DimensionMismatch(raw.len(), self.dimension));
        }
        Ok(EmbeddingVector::normalized(&raw))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingBackend {
    Local,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub backend: EmbeddingBackend,
    pub dimension: usize,
    pub seed: u64,
    pub model: String,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            backend: EmbeddingBackend::Local,
            dimension: DEFAULT_DIMENSION,
            seed: DEFAULT_SEED,
            model: "text-embedding-3-small".into(),
        }
    }
}
