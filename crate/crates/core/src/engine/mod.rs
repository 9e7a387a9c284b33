//! The assembled pipeline over a persistent store: ingest, ask, sample,
//! evaluate, build datasets and train adapters.

mod config;
mod store;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use parking_lot::{Mutex, RwLock};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapter_train::{sample_negatives, train_adapter, LinearAdapter, Provenance, TrainError, TrainingBatch};
use crate::dataset_builder::{
    export_corpus, phases, read_records, BuildJob, CorpusRecord, CorpusStats, DatasetBuilder, DatasetError, FilterRules,
    FilterThresholds, SelectContext, Split, StrategyKind, TemplateKey,
};
use crate::doc_model::{external_parse, read_document, BlobSource, Chunk, DocError, ExternalParser, Modality, ParsedDocument};
use crate::embedding::{
    embed_chunk_uncached, embed_text, EmbedError, EmbeddingCache, EmbeddingProvider, EmbeddingRecord, HttpEmbedder,
    OfflineEmbedder, ProviderId, Providers,
};
use crate::evaluation::{
    evaluate_by_k, evaluate_by_length, join_cases, EvalError, Evaluator, LengthBucket, MetricReport, Prediction,
    DEFAULT_BUCKET_EDGES,
};
use crate::generation::{
    assemble_prompt, generate_answer, BackendRegistry, GenError, GenerateRequest, LlmBackend, RetryPolicy,
};
use crate::limits::TokenBucket;
use crate::sampler::{sample, SampleError, SampledEvidence, SamplerConfig};

pub use config::{env_name, EngineConfig, LlmConfig, ProviderConfig, ProviderKind, RateLimits, ENV_PREFIX, KEYS};
pub use store::{check_name, provider_file_stem, DocumentStore, DOCUMENT_FILE};

pub const PREVIEW_CHARS: usize = 120;

/// Coarse error classes with stable exit codes and HTTP statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    Internal,
    Usage,
    Config,
    Parse,
    NotFound,
    Backend,
    Cache,
    Invalid,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Internal => 1,
            ErrorClass::Usage => 2,
            ErrorClass::Config => 3,
            ErrorClass::Parse => 4,
            ErrorClass::NotFound => 5,
            ErrorClass::Backend => 6,
            ErrorClass::Cache => 7,
            ErrorClass::Invalid => 8,
        }
    }

    pub fn http_status(self) -> u16 {
        match self {
            ErrorClass::Internal | ErrorClass::Config => 500,
            ErrorClass::Usage | ErrorClass::Invalid => 400,
            ErrorClass::Parse => 422,
            ErrorClass::NotFound => 404,
            ErrorClass::Backend => 502,
            ErrorClass::Cache => 507,
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("config: {0}")]
    Config(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("parse: {0}")]
    Parse(String),
    #[error("not found: {0}")]
    NotFound(String),
    /// The evidence selected before the backend failed.
    #[error("backend: {message}")]
    Backend { message: String, evidence: Vec<EvidenceView> },
    #[error("embedding provider: {0}")]
    Provider(String),
    #[error("cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl EngineError {
    pub fn class(&self) -> ErrorClass {
        match self {
            EngineError::Config(_) => ErrorClass::Config,
            EngineError::Invalid(_) => ErrorClass::Invalid,
            EngineError::Parse(_) => ErrorClass::Parse,
            EngineError::NotFound(_) => ErrorClass::NotFound,
            EngineError::Backend { .. } | EngineError::Provider(_) => ErrorClass::Backend,
            EngineError::Cache(_) => ErrorClass::Cache,
            EngineError::Io(_) => ErrorClass::Internal,
        }
    }

    fn backend(e: impl std::fmt::Display) -> Self {
        EngineError::Backend {
            message: e.to_string(),
            evidence: Vec::new(),
        }
    }
}

impl From<DocError> for EngineError {
    fn from(e: DocError) -> Self {
        match e {
            DocError::Io(io) => EngineError::Io(io),
            DocError::ExternalTool { .. } => EngineError::backend(e),
            other => EngineError::Parse(other.to_string()),
        }
    }
}

impl From<EmbedError> for EngineError {
    fn from(e: EmbedError) -> Self {
        match e {
            EmbedError::Provider(_) | EmbedError::ProviderContract { .. } => EngineError::Provider(e.to_string()),
            EmbedError::CacheFormat(_) | EmbedError::CacheVersion { .. } | EmbedError::InvalidRecord(_) => {
                EngineError::Cache(e.to_string())
            }
            EmbedError::Dims { .. } => EngineError::Config(e.to_string()),
            EmbedError::EmptyContent => EngineError::Invalid(e.to_string()),
            EmbedError::MissingBlob(_) => EngineError::Parse(e.to_string()),
            EmbedError::Io(io) => EngineError::Io(io),
        }
    }
}

impl From<SampleError> for EngineError {
    fn from(e: SampleError) -> Self {
        match e {
            SampleError::CacheMiss(_) => EngineError::Cache(e.to_string()),
            SampleError::Config(m) => EngineError::Invalid(m),
            SampleError::Embed(e) => e.into(),
        }
    }
}

impl From<GenError> for EngineError {
    fn from(e: GenError) -> Self {
        match e {
            GenError::Doc(d) => d.into(),
            GenError::Template(_) => EngineError::Config(e.to_string()),
            other => EngineError::backend(other),
        }
    }
}

impl From<DatasetError> for EngineError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Generation(g) => g.into(),
            DatasetError::Io(io) => EngineError::Io(io),
            DatasetError::Template(_) => EngineError::Config(e.to_string()),
            DatasetError::Format(_) | DatasetError::GenerationParse(_) => EngineError::Parse(e.to_string()),
            other => EngineError::Invalid(other.to_string()),
        }
    }
}

impl From<EvalError> for EngineError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io(io) => EngineError::Io(io),
            EvalError::Format(_) | EvalError::Join(_) => EngineError::Parse(e.to_string()),
            other => EngineError::Invalid(other.to_string()),
        }
    }
}

impl From<TrainError> for EngineError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Io(io) => EngineError::Io(io),
            TrainError::AdapterFormat(_) => EngineError::Parse(e.to_string()),
            TrainError::Config(_) => EngineError::Config(e.to_string()),
            other => EngineError::Invalid(other.to_string()),
        }
    }
}

/// One ranked evidence chunk as reported to callers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceView {
    pub chunk_id: String,
    pub modality: Modality,
    pub score: f64,
    pub rank: usize,
    pub content_preview: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AskResponse {
    pub answer: String,
    pub evidence: Vec<EvidenceView>,
    pub prompt_tokens: usize,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResponse {
    pub evidence: Vec<EvidenceView>,
    /// Similarity computations performed, one per chunk.
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentSummary {
    pub doc_id: String,
    pub source_name: String,
    pub chunks: usize,
    pub text_chunks: usize,
    pub image_chunks: usize,
}

impl DocumentSummary {
    fn of(doc: &ParsedDocument) -> Self {
        Self {
            doc_id: doc.doc_id().to_string(),
            source_name: doc.source_name().to_string(),
            chunks: doc.len(),
            text_chunks: doc.n_text(),
            image_chunks: doc.m_image(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub document: DocumentSummary,
    /// Provider calls made during this ingest.
    pub embedded: usize,
    /// Chunks served from the cache or from an identical chunk.
    pub cache_hits: usize,
}

/// Where a document comes from.
#[derive(Debug, Clone)]
pub enum IngestSource {
    /// An interleaved document file with its `blobs/` directory beside it.
    Interleaved(PathBuf),
    /// A PDF converted by an external parser.
    Pdf { path: PathBuf, parser: ExternalParser },
}

pub fn preview(chunk: &Chunk) -> String {
    let text = chunk.display_text();
    match text.char_indices().nth(PREVIEW_CHARS) {
        Some((cut, _)) => format!("{}...", &text[..cut]),
        None => text.to_string(),
    }
}

fn evidence_views(evidence: &SampledEvidence, doc: &ParsedDocument) -> Vec<EvidenceView> {
    evidence
        .entries
        .iter()
        .map(|e| EvidenceView {
            chunk_id: e.chunk_id.to_string(),
            modality: e.modality,
            score: e.score,
            rank: e.rank,
            content_preview: doc.chunk(&e.chunk_id).map(preview).unwrap_or_default(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub report: MetricReport,
    pub by_k: BTreeMap<usize, MetricReport>,
    pub by_length: Vec<(LengthBucket, MetricReport)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildRequest {
    pub doc_ids: Vec<String>,
    pub strategies: Vec<StrategyKind>,
    pub splits: Vec<Split>,
    /// Selections per document, strategy and split.
    pub samples_per_doc: u64,
    pub base_seed: u64,
    pub corpus: String,
    #[serde(default)]
    pub thresholds: FilterThresholds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub corpus: String,
    pub stats: CorpusStats,
    pub kept: usize,
    pub rejected: BTreeMap<String, usize>,
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub adapter: String,
    pub path: PathBuf,
    pub batches: usize,
    pub trajectory: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IntegrityReport {
    pub documents: usize,
    pub cache_records: usize,
    pub corpus_records: usize,
    pub problems: Vec<String>,
}

impl IntegrityReport {
    pub fn is_clean(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Builds the configured embedding provider.
pub fn build_provider(config: &ProviderConfig, max_inflight: usize) -> Arc<dyn EmbeddingProvider> {
    match config.kind {
        ProviderKind::Offline => Arc::new(OfflineEmbedder::new(config.seed, config.dims)),
        ProviderKind::Http => Arc::new(HttpEmbedder::new(
            &config.name,
            config.endpoint.clone().unwrap_or_default(),
            config.dims,
            max_inflight,
        )),
    }
}

pub struct Engine {
    config: EngineConfig,
    store: DocumentStore,
    providers: Providers,
    cache: EmbeddingCache,
    backend: Arc<dyn LlmBackend>,
    retry: RetryPolicy,
    adapter: Option<LinearAdapter>,
    rate: Option<Arc<TokenBucket>>,
    docs: RwLock<BTreeMap<String, Arc<ParsedDocument>>>,
    doc_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    cache_io: Mutex<()>,
}

impl Engine {
    /// Opens the store with providers and backend built from `config`.
    pub fn open(config: EngineConfig) -> Result<Self, EngineError> {
        let text = build_provider(&config.text_provider, config.limits.embed_max_inflight);
        let providers = match &config.image_provider {
            Some(p) => Providers::new(text, build_provider(p, config.limits.embed_max_inflight))?,
            None => Providers::shared(text),
        };
        let backend = BackendRegistry::with_builtins().build(&config.llm.backend, &config.backend_options())?;
        Self::open_with(config, providers, backend)
    }

    /// Opens the store with caller-supplied providers and backend.
    pub fn open_with(config: EngineConfig, providers: Providers, backend: Arc<dyn LlmBackend>) -> Result<Self, EngineError> {
        config.validate()?;
        let store = DocumentStore::open(&config.store_root)?;
        let cache = EmbeddingCache::new(providers.dims());
        for entry in std::fs::read_dir(store.caches_dir())? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "wkec") {
                let loaded = EmbeddingCache::load(&path)?;
                if loaded.dims().is_some_and(|d| d != providers.dims()) {
                    log::warn!("skipping cache {} with other dims", path.display());
                    continue;
                }
                cache.put_all(loaded.records().iter().map(|r| (**r).clone()).collect())?;
            }
        }
        let mut docs = BTreeMap::new();
        for id in store.doc_ids()? {
            let doc = store.load_document(&id)?;
            docs.insert(id, Arc::new(doc));
        }
        let adapter = match &config.adapter {
            Some(name) => Some(LinearAdapter::load(&store.adapter_path(name)?)?),
            None => None,
        };
        let rate = config
            .limits
            .llm_per_second
            .map(|r| Arc::new(TokenBucket::new(config.limits.llm_burst.max(1), r)));
        Ok(Self {
            config,
            store,
            providers,
            cache,
            backend,
            retry: RetryPolicy::default(),
            adapter,
            rate,
            docs: RwLock::new(docs),
            doc_locks: Mutex::new(HashMap::new()),
            cache_io: Mutex::new(()),
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn store(&self) -> &DocumentStore {
        &self.store
    }

    pub fn providers(&self) -> &Providers {
        &self.providers
    }

    pub fn cache(&self) -> &EmbeddingCache {
        &self.cache
    }

    pub fn backend(&self) -> &Arc<dyn LlmBackend> {
        &self.backend
    }

    pub fn document(&self, doc_id: &str) -> Result<Arc<ParsedDocument>, EngineError> {
        self.docs
            .read()
            .get(doc_id)
            .cloned()
            .ok_or_else(|| EngineError::NotFound(format!("document {doc_id}")))
    }

    pub fn list_documents(&self) -> Vec<DocumentSummary> {
        self.docs.read().values().map(|d| DocumentSummary::of(d)).collect()
    }

    fn doc_lock(&self, doc_id: &str) -> Arc<Mutex<()>> {
        self.doc_locks.lock().entry(doc_id.to_string()).or_default().clone()
    }

    pub fn ingest(&self, source: &IngestSource) -> Result<IngestReport, EngineError> {
        match source {
            IngestSource::Interleaved(path) => {
                let doc = read_document(path)?;
                let dir = path.parent().unwrap_or_else(|| Path::new("."));
                self.ingest_document(doc, &crate::doc_model::DirBlobs::new(dir))
            }
            IngestSource::Pdf { path, parser } => {
                let imported = external_parse(path, parser)?;
                self.ingest_document(imported.document, &imported.blobs)
            }
        }
    }

    /// Embeds every chunk, then stores the cache and the document. Nothing is
    /// written when any embedding fails.
    pub fn ingest_document(&self, doc: ParsedDocument, blobs: &dyn BlobSource) -> Result<IngestReport, EngineError> {
        check_name("document", doc.doc_id())?;
        doc.verify_blobs(blobs)?;
        let lock = self.doc_lock(doc.doc_id());
        let _guard = lock.lock();

        let mut fresh: Vec<EmbeddingRecord> = Vec::new();
        let mut hits = 0;
        for chunk in doc.chunks() {
            let provider = self.providers.for_modality(chunk.modality());
            let hash = chunk.content_hash();
            let pending = fresh.iter().any(|r| &r.provider_id == provider.id() && r.content_hash == hash);
            if pending || self.cache.contains(provider.id(), &hash) {
                hits += 1;
                continue;
            }
            fresh.push(embed_chunk_uncached(&self.cache, &self.providers, blobs, chunk)?);
        }
        let embedded = fresh.len();
        if !fresh.is_empty() {
            let _io = self.cache_io.lock();
            self.cache.put_all(fresh)?;
            self.persist_cache()?;
        }
        self.store.write_document(&doc, blobs)?;
        let summary = DocumentSummary::of(&doc);
        self.docs.write().insert(doc.doc_id().to_string(), Arc::new(doc));
        Ok(IngestReport {
            document: summary,
            embedded,
            cache_hits: hits,
        })
    }

    fn persist_cache(&self) -> Result<(), EngineError> {
        let mut by_provider: BTreeMap<ProviderId, Vec<EmbeddingRecord>> = BTreeMap::new();
        for r in self.cache.records() {
            by_provider.entry(r.provider_id.clone()).or_default().push((*r).clone());
        }
        for (provider, records) in by_provider {
            let part = EmbeddingCache::new(self.providers.dims());
            part.put_all(records)?;
            part.persist(&self.store.cache_path(&provider))
                .map_err(|e| EngineError::Cache(format!("cannot persist cache: {e}")))?;
        }
        Ok(())
    }

    fn sampler_config(&self, k: Option<usize>) -> SamplerConfig {
        let mut c = self.config.sampler.clone();
        if let Some(k) = k {
            c.k = k;
        }
        c
    }

    /// Scores every chunk and returns the top-k, without calling the backend.
    pub fn sample(&self, doc_id: &str, question: &str, k: Option<usize>) -> Result<SampleResponse, EngineError> {
        let doc = self.document(doc_id)?;
        let (evidence, scores) = sample(
            question,
            &doc,
            &self.providers,
            &self.cache,
            &self.sampler_config(k),
            self.adapter.as_ref(),
        )?;
        Ok(SampleResponse {
            evidence: evidence_views(&evidence, &doc),
            evaluations: scores.evaluations,
        })
    }

    /// Embed, score, select, assemble and generate. Backend failures carry
    /// the selected evidence.
    pub fn ask(&self, doc_id: &str, question: &str, k: Option<usize>) -> Result<AskResponse, EngineError> {
        let start = Instant::now();
        let doc = self.document(doc_id)?;
        let (evidence, _) = sample(
            question,
            &doc,
            &self.providers,
            &self.cache,
            &self.sampler_config(k),
            self.adapter.as_ref(),
        )?;
        let views = evidence_views(&evidence, &doc);
        let with_evidence = |e: EngineError| match e {
            EngineError::Backend { message, .. } => EngineError::Backend {
                message,
                evidence: views.clone(),
            },
            other => other,
        };
        let prompt = assemble_prompt(question, &evidence, &doc, &self.config.llm.template).map_err(|e| with_evidence(e.into()))?;
        let request =
            GenerateRequest::load(prompt, &self.store.doc_blobs(doc_id)).map_err(|e| with_evidence(e.into()))?;
        if let Some(bucket) = &self.rate {
            bucket.acquire();
        }
        let answer = generate_answer(self.backend.as_ref(), &request, &self.retry).map_err(|e| with_evidence(e.into()))?;
        Ok(AskResponse {
            answer: answer.answer_text,
            evidence: views,
            prompt_tokens: answer.prompt_tokens,
            latency_ms: start.elapsed().as_millis() as u64,
        })
    }

    fn doc_lengths(&self) -> BTreeMap<String, usize> {
        self.docs.read().iter().map(|(id, d)| (id.clone(), d.len())).collect()
    }

    /// Scores predictions against corpus records, overall, per k and per
    /// document-length bucket.
    pub fn evaluate(
        &self,
        records: &[CorpusRecord],
        predictions: &[Prediction],
        judge: Option<Arc<dyn LlmBackend>>,
    ) -> Result<EvalOutput, EngineError> {
        let cases = join_cases(records, predictions, &self.doc_lengths())?;
        let k = self.config.sampler.k;
        let evaluator = Evaluator {
            judge,
            retry: self.retry,
        };
        Ok(EvalOutput {
            report: evaluator.run(&cases, k)?,
            by_k: evaluate_by_k(&cases, k)?,
            by_length: evaluate_by_length(&cases, k, &DEFAULT_BUCKET_EDGES)?.into_iter().collect(),
        })
    }

    pub fn read_corpus(&self, name: &str) -> Result<Vec<CorpusRecord>, EngineError> {
        let path = self.store.corpus_path(name)?;
        if !path.is_file() {
            return Err(EngineError::NotFound(format!("corpus {name}")));
        }
        Ok(read_records(&path)?)
    }

    /// Generates, filters and exports a QA corpus with the engine's backend.
    pub fn build_dataset(&self, request: &BuildRequest) -> Result<BuildReport, EngineError> {
        let corpus_path = self.store.corpus_path(&request.corpus)?;
        let docs: Vec<Arc<ParsedDocument>> =
            request.doc_ids.iter().map(|id| self.document(id)).collect::<Result<_, _>>()?;
        let mut builder = DatasetBuilder::new(self.backend.clone());
        builder.rules = FilterRules::from_thresholds(&request.thresholds);
        builder.retry = self.retry;
        builder.rate_limit = self.rate.clone();
        builder.max_parallel = self.config.limits.llm_max_inflight.max(1);
        let mut jobs = Vec::new();
        for (doc_index, _) in docs.iter().enumerate() {
            for &strategy in &request.strategies {
                for &split in &request.splits {
                    let runnable = phases(strategy, split)
                        .iter()
                        .all(|&p| builder.templates.get(&TemplateKey::new(strategy, split, p)).is_ok());
                    if !runnable {
                        continue;
                    }
                    for n in 0..request.samples_per_doc {
                        jobs.push(BuildJob {
                            doc_index,
                            strategy,
                            split,
                            seed: request.base_seed + n,
                        });
                    }
                }
            }
        }
        let mut reports = Vec::new();
        let mut outcome_kept = Vec::new();
        let mut rejected: BTreeMap<String, usize> = BTreeMap::new();
        // Blobs live per document, so each document is built on its own.
        for (doc_index, doc) in docs.iter().enumerate() {
            let doc_jobs: Vec<BuildJob> = jobs
                .iter()
                .filter(|j| j.doc_index == doc_index)
                .map(|j| BuildJob { doc_index: 0, ..*j })
                .collect();
            if doc_jobs.is_empty() {
                continue;
            }
            let blobs = self.store.doc_blobs(doc.doc_id());
            let ctx = SelectContext::with_embeddings(&self.cache, &self.providers);
            let out = builder.build(std::slice::from_ref(doc.as_ref()), &blobs, &ctx, &doc_jobs);
            for p in &out.rejected {
                if let crate::dataset_builder::FilterStatus::Rejected(rule) = &p.filter_status {
                    *rejected.entry(rule.clone()).or_default() += 1;
                }
            }
            reports.extend(
                out.skipped
                    .into_iter()
                    .map(|(j, why)| format!("{} {} {} seed {}: {why}", doc.doc_id(), j.strategy, j.split, j.seed)),
            );
            outcome_kept.extend(out.kept);
        }
        let by_id: BTreeMap<String, &ParsedDocument> =
            docs.iter().map(|d| (d.doc_id().to_string(), d.as_ref())).collect();
        let stats = export_corpus(&outcome_kept, &by_id, &corpus_path)?;
        Ok(BuildReport {
            corpus: request.corpus.clone(),
            kept: outcome_kept.len(),
            stats,
            rejected,
            skipped: reports,
        })
    }

    /// Contrastive training batches from corpus records: the question is the
    /// query, evidence chunks are positives and negatives are drawn per record.
    pub fn training_batches(&self, records: &[CorpusRecord], seed: u64) -> Result<Vec<TrainingBatch>, EngineError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut batches = Vec::new();
        let vector = |doc: &ParsedDocument, id: &crate::doc_model::ChunkId| -> Result<Vec<f64>, EngineError> {
            let chunk = doc
                .chunk(id)
                .ok_or_else(|| EngineError::Parse(format!("{id} is not in {}", doc.doc_id())))?;
            let provider = self.providers.for_modality(chunk.modality());
            let record = self
                .cache
                .get(provider.id(), &chunk.content_hash())
                .ok_or_else(|| EngineError::Cache(format!("no cached embedding for {id}")))?;
            Ok(record.vector.to_f64())
        };
        for r in records {
            let doc = self.document(&r.doc_id)?;
            let negatives = sample_negatives(&doc, &r.evidence, &mut rng)?;
            let query = embed_text(self.providers.text.as_ref(), &r.question)?;
            let mut batch = TrainingBatch::new(
                query.to_f64(),
                r.evidence.iter().map(|id| vector(&doc, id)).collect::<Result<_, _>>()?,
                negatives.iter().map(|id| vector(&doc, id)).collect::<Result<_, _>>()?,
            )?;
            batch.provenance = Some(Provenance {
                doc_id: r.doc_id.clone(),
                positive_ids: r.evidence.clone(),
                negative_ids: negatives,
                strategy: r.strategy.to_string(),
            });
            batches.push(batch);
        }
        Ok(batches)
    }

    /// Trains an adapter on the train split of a stored corpus and saves it.
    pub fn train_adapter(&self, corpus: &str, adapter: &str) -> Result<TrainReport, EngineError> {
        let path = self.store.adapter_path(adapter)?;
        let records: Vec<CorpusRecord> = self
            .read_corpus(corpus)?
            .into_iter()
            .filter(|r| r.split == Split::Train)
            .collect();
        if records.is_empty() {
            return Err(EngineError::Invalid(format!("corpus {corpus} has no train records")));
        }
        let batches = self.training_batches(&records, self.config.train.seed)?;
        let outcome = train_adapter(&batches, &self.config.train)?;
        outcome.adapter.save(&path)?;
        Ok(TrainReport {
            adapter: adapter.to_string(),
            path,
            batches: batches.len(),
            trajectory: outcome.trajectory,
        })
    }

    /// Re-reads every stored document and corpus and checks that blobs
    /// match their hashes, every chunk has a cached embedding and every
    /// evidence id resolves.
    pub fn integrity_scan(&self) -> Result<IntegrityReport, EngineError> {
        let mut report = IntegrityReport {
            cache_records: self.cache.len(),
            ..IntegrityReport::default()
        };
        let mut docs = BTreeMap::new();
        for id in self.store.doc_ids()? {
            match self.store.load_document(&id) {
                Ok(doc) => {
                    if doc.doc_id() != id {
                        report.problems.push(format!("directory {id} holds document {}", doc.doc_id()));
                    }
                    for chunk in doc.chunks() {
                        let provider = self.providers.for_modality(chunk.modality());
                        if !self.cache.contains(provider.id(), &chunk.content_hash()) {
                            report.problems.push(format!("{id}/{} has no cached embedding", chunk.id()));
                        }
                    }
                    docs.insert(id, doc);
                }
                Err(e) => report.problems.push(format!("{id}: {e}")),
            }
        }
        report.documents = docs.len();
        for entry in std::fs::read_dir(self.store.corpora_dir())? {
            let path = entry?.path();
            if path.extension().is_none_or(|e| e != "jsonl") {
                continue;
            }
            let records = match read_records(&path) {
                Ok(r) => r,
                Err(e) => {
                    report.problems.push(format!("{}: {e}", path.display()));
                    continue;
                }
            };
            report.corpus_records += records.len();
            for r in records {
                match docs.get(&r.doc_id) {
                    None => report.problems.push(format!("record {} names missing document {}", r.id, r.doc_id)),
                    Some(doc) => {
                        for id in r.evidence.iter().filter(|id| doc.chunk(id).is_none()) {
                            report.problems.push(format!("record {} cites missing chunk {id}", r.id));
                        }
                    }
                }
            }
        }
        Ok(report)
    }
}
