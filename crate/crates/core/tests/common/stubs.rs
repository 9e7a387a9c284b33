//! Test doubles for providers and backends.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;

use sparsedoc_core::embedding::{EmbedError, EmbedInput, EmbeddingProvider, OfflineEmbedder, ProviderId};
use sparsedoc_core::generation::{BackendFailure, BackendReply, GenerateRequest, LlmBackend};

/// Offline embedder that counts calls and can be switched off.
pub struct CountingProvider {
    inner: OfflineEmbedder,
    pub calls: AtomicUsize,
    /// Calls allowed before the provider starts failing.
    pub fail_after: AtomicUsize,
    pub down: AtomicBool,
}

impl CountingProvider {
    pub fn new(seed: u64, dims: usize) -> Arc<Self> {
        Arc::new(Self {
            inner: OfflineEmbedder::new(seed, dims),
            calls: AtomicUsize::new(0),
            fail_after: AtomicUsize::new(usize::MAX),
            down: AtomicBool::new(false),
        })
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl EmbeddingProvider for CountingProvider {
    fn id(&self) -> &ProviderId {
        self.inner.id()
    }

    fn dims(&self) -> usize {
        self.inner.dims()
    }

    fn embed_raw(&self, input: EmbedInput<'_>) -> Result<Vec<f32>, EmbedError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if self.down.load(Ordering::SeqCst) || n >= self.fail_after.load(Ordering::SeqCst) {
            return Err(EmbedError::Provider("stub provider is down".into()));
        }
        self.inner.embed_raw(input)
    }
}

/// Always fails with a transient error.
pub struct DownBackend;

impl LlmBackend for DownBackend {
    fn id(&self) -> &str {
        "down"
    }

    fn generate(&self, _: &GenerateRequest) -> Result<BackendReply, BackendFailure> {
        Err(BackendFailure::Transient("connection refused".into()))
    }
}
