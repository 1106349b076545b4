//! Text embedding behind interchangeable providers, and vector similarity.

mod cache;
mod http;
mod mock;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::{read_cache, write_cache, EmbeddingCache, FileCacheEmbedder, CACHE_MAGIC, CACHE_VERSION};
pub use http::HttpEmbedder;
pub use mock::MockEmbedder;

/// Overrides the endpoint of every http provider when set.
pub const EMBED_URL_ENV: &str = "TAXOTRACE_EMBED_URL";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("vector has zero norm")]
    ZeroNorm,
    #[error("vector contains a non-finite value")]
    NonFinite,
    #[error("cache miss for key {0}")]
    CacheMiss(String),
    #[error("corrupt cache file: {0}")]
    CorruptCache(String),
    #[error("unsupported cache version {found} (expected {expected})")]
    CacheVersion { found: u16, expected: u16 },
    #[error("transport failure after {attempts} attempt(s): {reason}")]
    Transport { attempts: u32, reason: String },
    #[error("invalid provider config: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("item {index}: {source}")]
    Item {
        index: usize,
        #[source]
        source: Box<EmbedError>,
    },
    #[error("items {start}..{}: {source}", start + len)]
    Chunk {
        start: usize,
        len: usize,
        #[source]
        source: Box<EmbedError>,
    },
}

impl EmbedError {
    /// The underlying error with any batch position stripped.
    pub fn root(&self) -> &EmbedError {
        match self {
            EmbedError::Item { source, .. } | EmbedError::Chunk { source, .. } => source.root(),
            other => other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub model_id: String,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, model_id: impl Into<String>) -> Self {
        Self {
            values,
            model_id: model_id.into(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// `dot(a, b) / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    cosine(&a.values, &b.values)
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> Result<f64, EmbedError> {
    if a.len() != b.len() {
        return Err(EmbedError::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let (mut dot, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return Err(EmbedError::ZeroNorm);
    }
    Ok((dot / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0))
}

/// Cache key of a text under a given model: SHA-256 over the model id, a
/// unit separator and the text bytes.
pub fn content_key(model_id: &str, text: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(model_id.as_bytes());
    hasher.update([0x1f]);
    hasher.update(text.as_bytes());
    hasher.finalize().into()
}

/// A text-to-vector backend.
///
/// Implementors provide [`Embedder::embed_raw`]; callers use
/// [`Embedder::embed`] and [`Embedder::embed_batch`], which validate inputs
/// and outputs against the provider contract.
pub trait Embedder: Send + Sync {
    fn model_id(&self) -> &str;

    fn dimension(&self) -> usize;

    /// Maximum texts per backend call.
    fn batch_size(&self) -> usize {
        64
    }

    /// Embeds non-empty texts, one vector per text, in order.
    fn embed_raw(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError>;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let mut out = self.embed_raw(&[text])?;
        if out.len() != 1 {
            return Err(EmbedError::Transport {
                attempts: 1,
                reason: format!("backend returned {} vectors for 1 text", out.len()),
            });
        }
        self.finish(out.pop().unwrap())
    }

    /// Order-preserving batch embedding. Errors carry the index of the
    /// failing text, or the span of the backend call that failed.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if let Some(index) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(EmbedError::Item {
                index,
                source: Box::new(EmbedError::EmptyText),
            });
        }
        let mut out = Vec::with_capacity(texts.len());
        for (c, chunk) in texts.chunks(self.batch_size().max(1)).enumerate() {
            let start = c * self.batch_size().max(1);
            let at = |e: EmbedError, offset: usize| EmbedError::Item {
                index: start + offset,
                source: Box::new(e),
            };
            let span = |e: EmbedError| EmbedError::Chunk {
                start,
                len: chunk.len(),
                source: Box::new(e),
            };
            let raw = self.embed_raw(chunk).map_err(span)?;
            if raw.len() != chunk.len() {
                return Err(span(EmbedError::Transport {
                    attempts: 1,
                    reason: format!(
                        "backend returned {} vectors for {} texts",
                        raw.len(),
                        chunk.len()
                    ),
                }));
            }
            for (i, values) in raw.into_iter().enumerate() {
                out.push(self.finish(values).map_err(|e| at(e, i))?);
            }
        }
        Ok(out)
    }

    #[doc(hidden)]
    fn finish(&self, values: Vec<f64>) -> Result<EmbeddingVector, EmbedError> {
        if values.len() != self.dimension() {
            return Err(EmbedError::DimensionMismatch {
                expected: self.dimension(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        Ok(EmbeddingVector::new(values, self.model_id()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    FileCache,
    Http,
    DeterministicMock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingProviderConfig {
    pub kind: ProviderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_path: Option<PathBuf>,
    pub dimension: usize,
    pub model_id: String,
    /// Hash seed of the deterministic mock.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_retries: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
}

impl EmbeddingProviderConfig {
    pub fn mock(model_id: impl Into<String>, dimension: usize, seed: u64) -> Self {
        Self {
            kind: ProviderKind::DeterministicMock,
            endpoint: None,
            cache_path: None,
            dimension,
            model_id: model_id.into(),
            seed: Some(seed),
            max_retries: None,
            batch_size: None,
        }
    }

    pub fn http(model_id: impl Into<String>, dimension: usize, endpoint: impl Into<String>) -> Self {
        Self {
            kind: ProviderKind::Http,
            endpoint: Some(endpoint.into()),
            ..Self::mock(model_id, dimension, 0)
        }
        .without_seed()
    }

    pub fn file_cache(model_id: impl Into<String>, dimension: usize, path: impl Into<PathBuf>) -> Self {
        Self {
            kind: ProviderKind::FileCache,
            cache_path: Some(path.into()),
            ..Self::mock(model_id, dimension, 0)
        }
        .without_seed()
    }

    fn without_seed(mut self) -> Self {
        self.seed = None;
        self
    }

    /// The http endpoint after applying the environment override.
    pub fn resolved_endpoint(&self) -> Option<String> {
        std::env::var(EMBED_URL_ENV)
            .ok()
            .filter(|v| !v.is_empty())
            .or_else(|| self.endpoint.clone())
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.dimension == 0 {
            return Err(EmbedError::Config("dimension must be positive".into()));
        }
        if self.model_id.is_empty() {
            return Err(EmbedError::Config("model_id must not be empty".into()));
        }
        match self.kind {
            ProviderKind::Http if self.resolved_endpoint().is_none() => Err(EmbedError::Config(
                format!("http provider `{}` needs an endpoint", self.model_id),
            )),
            ProviderKind::FileCache if self.cache_path.is_none() => Err(EmbedError::Config(
                format!("file-cache provider `{}` needs a cache_path", self.model_id),
            )),
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Result<Box<dyn Embedder>, EmbedError> {
        self.validate()?;
        Ok(match self.kind {
            ProviderKind::DeterministicMock => Box::new(MockEmbedder::new(
                self.model_id.clone(),
                self.dimension,
                self.seed.unwrap_or(0),
            )),
            ProviderKind::FileCache => Box::new(FileCacheEmbedder::open(
                self.model_id.clone(),
                self.dimension,
                self.cache_path.as_deref().expect("validated"),
            )?),
            ProviderKind::Http => {
                let mut http = HttpEmbedder::new(
                    self.model_id.clone(),
                    self.dimension,
                    self.resolved_endpoint().expect("validated"),
                )?;
                if let Some(r) = self.max_retries {
                    http = http.with_max_retries(r);
                }
                if let Some(b) = self.batch_size {
                    http = http.with_batch_size(b);
                }
                Box::new(http)
            }
        })
    }
}

/// Remembers every vector its inner provider produced, so that the set can
/// be written out as a cache file afterwards.
pub struct RecordingEmbedder<E> {
    inner: E,
    seen: RwLock<HashMap<[u8; 32], Vec<f64>>>,
}

impl<E: Embedder> RecordingEmbedder<E> {
    pub fn new(inner: E) -> Self {
        Self {
            inner,
            seen: RwLock::new(HashMap::new()),
        }
    }

    pub fn into_cache(self) -> EmbeddingCache {
        let mut cache = EmbeddingCache::new(self.inner.dimension());
        for (key, values) in self.seen.into_inner().expect("poisoned") {
            cache.insert_key(key, values).expect("dimension checked on insert");
        }
        cache
    }
}

impl<E: Embedder> Embedder for RecordingEmbedder<E> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn batch_size(&self) -> usize {
        self.inner.batch_size()
    }

    fn embed_raw(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let keys: Vec<[u8; 32]> = texts
            .iter()
            .map(|t| content_key(self.model_id(), t))
            .collect();
        {
            let seen = self.seen.read().expect("poisoned");
            if let Some(hit) = keys.iter().map(|k| seen.get(k).cloned()).collect() {
                return Ok(hit);
            }
        }
        let out = self.inner.embed_raw(texts)?;
        if out.len() == texts.len() && out.iter().all(|v| v.len() == self.dimension()) {
            let mut seen = self.seen.write().expect("poisoned");
            for (k, v) in keys.into_iter().zip(&out) {
                seen.insert(k, v.clone());
            }
        }
        Ok(out)
    }
}

impl Embedder for Box<dyn Embedder> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn dimension(&self) -> usize {
        (**self).dimension()
    }

    fn batch_size(&self) -> usize {
        (**self).batch_size()
    }

    fn embed_raw(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
        (**self).embed_raw(texts)
    }
}
