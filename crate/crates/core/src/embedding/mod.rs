//! Text and image embeddings: pluggable providers, a content-addressed
//! cache and the cosine similarity kernel.

mod cache;
mod http;
mod offline;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::doc_model::{fetch_blob, BlobSource, Chunk, ChunkId, ContentHash, DocError, ImageRef, Modality};

pub use cache::{EmbeddingCache, CACHE_MAGIC, CACHE_VERSION};
pub use http::{HttpEmbedder, EMBED_TOKEN_ENV};
pub use offline::{OfflineEmbedder, DEFAULT_PLANTED_WEIGHT};
pub(crate) use offline::random_orthonormal;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding provider unavailable: {0}")]
    Provider(String),
    #[error("provider {provider} broke its contract: {message}")]
    ProviderContract { provider: String, message: String },
    #[error("vector dims mismatch: {left} vs {right}")]
    Dims { left: usize, right: usize },
    #[error("cannot embed empty content")]
    EmptyContent,
    #[error("image blob {0} is missing")]
    MissingBlob(ContentHash),
    #[error("corrupt cache file: {0}")]
    CacheFormat(String),
    #[error("cache file version {found} is not supported (expected {expected})")]
    CacheVersion { found: u16, expected: u16 },
    #[error("invalid cache record: {0}")]
    InvalidRecord(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl EmbedError {
    /// Whether retrying the same call may succeed.
    pub fn is_retryable(&self) -> bool {
        matches!(self, EmbedError::Provider(_))
    }
}

impl From<DocError> for EmbedError {
    fn from(e: DocError) -> Self {
        match e {
            DocError::MissingBlob(h) => EmbedError::MissingBlob(h),
            DocError::Io(io) => EmbedError::Io(io),
            other => EmbedError::Provider(other.to_string()),
        }
    }
}

/// Provider name and version, e.g. `offline-v1/seed7/d64`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProviderId(String);

impl ProviderId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ProviderId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// L2-normalized embedding. Values are stored as `f32` (the cache format);
/// norms and dot products are accumulated in `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

impl EmbeddingVector {
    /// Normalizes `values`. Fails on empty, zero or non-finite input.
    pub fn normalized(values: &[f64]) -> Result<Self, String> {
        if values.is_empty() {
            return Err("empty vector".into());
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err("non-finite component".into());
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err("zero vector".into());
        }
        Ok(Self {
            values: values.iter().map(|v| (v / norm) as f32).collect(),
        })
    }

    pub fn normalized_f32(values: &[f32]) -> Result<Self, String> {
        let wide: Vec<f64> = values.iter().map(|&v| f64::from(v)).collect();
        Self::normalized(&wide)
    }

    /// Wraps values that are already unit norm.
    pub fn from_unit(values: Vec<f32>) -> Result<Self, String> {
        let v = Self { values };
        if v.values.is_empty() {
            return Err("empty vector".into());
        }
        if (v.norm() - 1.0).abs() >= UNIT_NORM_TOLERANCE {
            return Err(format!("vector norm {} is not 1", v.norm()));
        }
        Ok(v)
    }

    pub fn dims(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f64::from(a) * f64::from(b))
            .sum()
    }
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    if a.dims() != b.dims() {
        return Err(EmbedError::Dims {
            left: a.dims(),
            right: b.dims(),
        });
    }
    let denom = a.norm() * b.norm();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((a.dot(b) / denom).clamp(-1.0, 1.0))
}

/// What a provider is asked to embed.
#[derive(Debug, Clone, Copy)]
pub enum EmbedInput<'a> {
    Text(&'a str),
    Image { bytes: &'a [u8], caption: &'a str },
}

impl EmbedInput<'_> {
    pub fn modality(&self) -> Modality {
        match self {
            EmbedInput::Text(_) => Modality::Text,
            EmbedInput::Image { .. } => Modality::Image,
        }
    }
}

/// A text or image encoder.
///
/// Implementations return raw vectors of their declared `dims`; callers go
/// through [`embed_text`] / [`embed_image`], which enforce the dims
/// contract and normalize.
pub trait EmbeddingProvider: Send + Sync {
    fn id(&self) -> &ProviderId;
    fn dims(&self) -> usize;
    fn embed_raw(&self, input: EmbedInput<'_>) -> Result<Vec<f32>, EmbedError>;
}

fn checked(provider: &dyn EmbeddingProvider, raw: Vec<f32>) -> Result<EmbeddingVector, EmbedError> {
    let contract = |message: String| EmbedError::ProviderContract {
        provider: provider.id().to_string(),
        message,
    };
    if raw.len() != provider.dims() {
        return Err(contract(format!("returned {} dims, declared {}", raw.len(), provider.dims())));
    }
    EmbeddingVector::normalized_f32(&raw).map_err(contract)
}

pub fn embed_text(provider: &dyn EmbeddingProvider, text: &str) -> Result<EmbeddingVector, EmbedError> {
    if text.trim().is_empty() {
        return Err(EmbedError::EmptyContent);
    }
    let raw = provider.embed_raw(EmbedInput::Text(text))?;
    checked(provider, raw)
}

/// Embeds an image blob together with its caption.
pub fn embed_image(
    provider: &dyn EmbeddingProvider,
    blobs: &dyn BlobSource,
    image_ref: &ImageRef,
    caption: &str,
) -> Result<EmbeddingVector, EmbedError> {
    let bytes = fetch_blob(blobs, image_ref)?;
    let raw = provider.embed_raw(EmbedInput::Image { bytes: &bytes, caption })?;
    checked(provider, raw)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub chunk_id: ChunkId,
    pub modality: Modality,
    pub content_hash: ContentHash,
    pub provider_id: ProviderId,
    pub vector: EmbeddingVector,
}

/// The text encoder and the image encoder used for one deployment.
#[derive(Clone)]
pub struct Providers {
    pub text: Arc<dyn EmbeddingProvider>,
    pub image: Arc<dyn EmbeddingProvider>,
}

impl Providers {
    pub fn new(text: Arc<dyn EmbeddingProvider>, image: Arc<dyn EmbeddingProvider>) -> Result<Self, EmbedError> {
        if text.dims() != image.dims() {
            return Err(EmbedError::Dims {
                left: text.dims(),
                right: image.dims(),
            });
        }
        Ok(Self { text, image })
    }

    /// One provider for both modalities.
    pub fn shared(provider: Arc<dyn EmbeddingProvider>) -> Self {
        Self {
            text: provider.clone(),
            image: provider,
        }
    }

    pub fn for_modality(&self, modality: Modality) -> &Arc<dyn EmbeddingProvider> {
        match modality {
            Modality::Text => &self.text,
            Modality::Image => &self.image,
        }
    }

    pub fn dims(&self) -> usize {
        self.text.dims()
    }
}

impl fmt::Debug for Providers {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Providers")
            .field("text", self.text.id())
            .field("image", self.image.id())
            .finish()
    }
}

/// Embeds a chunk through the cache: the provider is called only when no
/// record exists for `(provider_id, content_hash)`.
pub fn embed_chunk_cached(
    cache: &EmbeddingCache,
    providers: &Providers,
    blobs: &dyn BlobSource,
    chunk: &Chunk,
) -> Result<Arc<EmbeddingRecord>, EmbedError> {
    let record = embed_chunk_uncached(cache, providers, blobs, chunk)?;
    cache.put(record.clone())?;
    Ok(Arc::new(record))
}

/// Returns the cached record for `chunk`, or computes one without storing it.
pub fn embed_chunk_uncached(
    cache: &EmbeddingCache,
    providers: &Providers,
    blobs: &dyn BlobSource,
    chunk: &Chunk,
) -> Result<EmbeddingRecord, EmbedError> {
    let provider = providers.for_modality(chunk.modality());
    let content_hash = chunk.content_hash();
    if let Some(hit) = cache.get(provider.id(), &content_hash) {
        return Ok((*hit).clone());
    }
    let vector = match chunk {
        Chunk::Text(t) => embed_text(provider.as_ref(), &t.text)?,
        Chunk::Image(i) => embed_image(provider.as_ref(), blobs, &i.image_ref, &i.caption)?,
    };
    Ok(EmbeddingRecord {
        chunk_id: chunk.id().clone(),
        modality: chunk.modality(),
        content_hash,
        provider_id: provider.id().clone(),
        vector,
    })
}
