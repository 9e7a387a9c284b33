//! Prompt assembly over sampled evidence and answer generation through a
//! pluggable LLM backend.

mod backends;
mod http;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::doc_model::{fetch_blob, BlobSource, Chunk, ChunkId, ContentHash, DocError, ImageRef, ParsedDocument};
use crate::sampler::SampledEvidence;

pub use backends::{EchoBackend, ExtractiveBackend, ScriptedBackend, SimulatedLatencyBackend, TranscriptEntry};
pub use http::{HttpBackend, LLM_TOKEN_ENV};

/// Flat charge for every image attached to a prompt.
pub const IMAGE_TOKEN_COST: usize = 256;
pub const DEFAULT_TEMPLATE: &str = "grounded";

#[derive(Debug, Error)]
pub enum GenError {
    #[error("prompt integrity: {0}")]
    Integrity(String),
    #[error("unknown template `{0}`")]
    Template(String),
    #[error("backend failed after {attempts} attempt(s): {message}")]
    Backend { attempts: usize, message: String },
    #[error("prompt of ~{token_estimate} tokens exceeds the backend context")]
    ContextOverflow { token_estimate: usize },
    #[error(transparent)]
    Doc(#[from] DocError),
}

/// Whitespace-and-punctuation token estimate: each run of alphanumeric
/// characters counts once, and so does every other non-space character.
pub fn estimate_tokens(text: &str) -> usize {
    let mut count = 0;
    let mut in_word = false;
    for c in text.chars() {
        if c.is_alphanumeric() {
            if !in_word {
                count += 1;
                in_word = true;
            }
        } else {
            in_word = false;
            if !c.is_whitespace() {
                count += 1;
            }
        }
    }
    count
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceOrder {
    Rank,
    Reading,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionTemplate {
    pub id: String,
    pub text: String,
    pub order: EvidenceOrder,
}

pub fn builtin_templates() -> BTreeMap<String, InstructionTemplate> {
    let grounded = InstructionTemplate {
        id: DEFAULT_TEMPLATE.into(),
        text: "Answer the question using only the evidence provided. \
               Cite the ids of the evidence you rely on in square brackets, e.g. [t3]. \
               If the evidence does not contain the answer, say that it is not in the document."
            .into(),
        order: EvidenceOrder::Rank,
    };
    let reading = InstructionTemplate {
        id: "grounded-reading-order".into(),
        order: EvidenceOrder::Reading,
        ..grounded.clone()
    };
    let plain = InstructionTemplate {
        id: "plain".into(),
        text: "Answer the question about the document.".into(),
        order: EvidenceOrder::Rank,
    };
    [grounded, reading, plain].into_iter().map(|t| (t.id.clone(), t)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum PromptPart {
    Text {
        chunk_id: ChunkId,
        content: String,
    },
    Image {
        chunk_id: ChunkId,
        image_ref: ImageRef,
        caption: String,
    },
}

impl PromptPart {
    pub fn chunk_id(&self) -> &ChunkId {
        match self {
            Self::Text { chunk_id, .. } | Self::Image { chunk_id, .. } => chunk_id,
        }
    }

    pub fn token_estimate(&self) -> usize {
        match self {
            Self::Text { content, .. } => estimate_tokens(content),
            Self::Image { caption, .. } => IMAGE_TOKEN_COST + estimate_tokens(caption),
        }
    }

    fn of_chunk(chunk: &Chunk) -> Self {
        match chunk {
            Chunk::Text(t) => Self::Text {
                chunk_id: t.chunk_id.clone(),
                content: t.text.clone(),
            },
            Chunk::Image(i) => Self::Image {
                chunk_id: i.chunk_id.clone(),
                image_ref: i.image_ref.clone(),
                caption: i.caption.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptAssembly {
    pub template_id: String,
    pub instruction: String,
    pub query: String,
    pub evidence_parts: Vec<PromptPart>,
    pub token_estimate: usize,
}

impl PromptAssembly {
    pub fn new(template_id: &str, instruction: String, query: String, evidence_parts: Vec<PromptPart>) -> Self {
        let token_estimate = estimate_tokens(&instruction)
            + estimate_tokens(&query)
            + evidence_parts.iter().map(PromptPart::token_estimate).sum::<usize>();
        Self {
            template_id: template_id.to_string(),
            instruction,
            query,
            evidence_parts,
            token_estimate,
        }
    }

    /// Text form of the prompt, with images shown as blob locators.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.instruction);
        out.push_str("\n\nEvidence:\n");
        for part in &self.evidence_parts {
            match part {
                PromptPart::Text { chunk_id, content } => {
                    out.push_str(&format!("[{chunk_id}] {content}\n"));
                }
                PromptPart::Image {
                    chunk_id,
                    image_ref,
                    caption,
                } => {
                    out.push_str(&format!("[{chunk_id}] <image {}> {caption}\n", image_ref.locator()));
                }
            }
        }
        out.push_str("\nQuestion: ");
        out.push_str(&self.query);
        out.push('\n');
        out
    }

    pub fn prompt_hash(&self) -> ContentHash {
        ContentHash::of_parts(&[b"prompt", self.render().as_bytes()])
    }

    pub fn chunk_ids(&self) -> Vec<ChunkId> {
        self.evidence_parts.iter().map(|p| p.chunk_id().clone()).collect()
    }
}

fn template(template_id: &str) -> Result<InstructionTemplate, GenError> {
    builtin_templates()
        .remove(template_id)
        .ok_or_else(|| GenError::Template(template_id.to_string()))
}

/// Builds the prompt from the sampled evidence. Parts follow rank order
/// unless the template asks for reading order.
pub fn assemble_prompt(
    query: &str,
    evidence: &SampledEvidence,
    doc: &ParsedDocument,
    template_id: &str,
) -> Result<PromptAssembly, GenError> {
    let tpl = template(template_id)?;
    if evidence.is_empty() {
        return Err(GenError::Integrity("no evidence to assemble".into()));
    }
    let mut chunks = Vec::with_capacity(evidence.len());
    for entry in &evidence.entries {
        let chunk = doc
            .chunk(&entry.chunk_id)
            .ok_or_else(|| GenError::Integrity(format!("evidence {} is not in {}", entry.chunk_id, doc.doc_id())))?;
        chunks.push(chunk);
    }
    if tpl.order == EvidenceOrder::Reading {
        chunks.sort_by_key(|c| c.order_index());
    }
    let parts = chunks.into_iter().map(PromptPart::of_chunk).collect();
    Ok(PromptAssembly::new(&tpl.id, tpl.text, query.to_string(), parts))
}

/// The whole document as evidence, in reading order. Reference point for
/// token accounting.
pub fn assemble_full_document(query: &str, doc: &ParsedDocument, template_id: &str) -> Result<PromptAssembly, GenError> {
    let tpl = template(template_id)?;
    let parts = doc.chunks().iter().map(PromptPart::of_chunk).collect();
    Ok(PromptAssembly::new(&tpl.id, tpl.text, query.to_string(), parts))
}

/// Request handed to a backend: the prompt plus image bytes.
#[derive(Debug, Clone)]
pub struct GenerateRequest {
    pub prompt: PromptAssembly,
    pub images: BTreeMap<ChunkId, Vec<u8>>,
}

impl GenerateRequest {
    pub fn load(prompt: PromptAssembly, blobs: &dyn BlobSource) -> Result<Self, GenError> {
        let mut images = BTreeMap::new();
        for part in &prompt.evidence_parts {
            if let PromptPart::Image { chunk_id, image_ref, .. } = part {
                images.insert(chunk_id.clone(), fetch_blob(blobs, image_ref)?);
            }
        }
        Ok(Self { prompt, images })
    }

    /// A request without images, for prompts that carry no image parts.
    pub fn text_only(prompt: PromptAssembly) -> Self {
        Self {
            prompt,
            images: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendReply {
    pub answer: String,
    pub prompt_tokens: usize,
    /// Chunk ids the backend says it used, beyond any cited in the answer.
    #[serde(default)]
    pub cited: Vec<ChunkId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendFailure {
    #[error("transient: {0}")]
    Transient(String),
    #[error("{0}")]
    Permanent(String),
    #[error("context length exceeded")]
    ContextOverflow,
}

pub trait LlmBackend: Send + Sync {
    fn id(&self) -> &str;
    fn generate(&self, request: &GenerateRequest) -> Result<BackendReply, BackendFailure>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: usize,
    pub base_delay_ms: u64,
    pub growth: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay_ms: 200,
            growth: 4,
        }
    }
}

impl RetryPolicy {
    pub fn immediate() -> Self {
        Self {
            base_delay_ms: 0,
            ..Self::default()
        }
    }

    /// Delay before retry number `retry` (1-based).
    pub fn delay(&self, retry: usize) -> Duration {
        let factor = u64::from(self.growth).saturating_pow(retry.saturating_sub(1) as u32);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerResult {
    pub answer_text: String,
    pub evidence_used: Vec<ChunkId>,
    pub prompt_tokens: usize,
    pub latency_ms: u64,
    pub backend_id: String,
}

/// Ids written as `[id]` in `answer`, in order of first appearance.
pub fn cited_ids(answer: &str) -> Vec<ChunkId> {
    let mut out: Vec<ChunkId> = Vec::new();
    let mut rest = answer;
    while let Some(open) = rest.find('[') {
        rest = &rest[open + 1..];
        let Some(close) = rest.find(']') else { break };
        let inner = &rest[..close];
        for id in inner.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let id = ChunkId::new(id);
            if !out.contains(&id) {
                out.push(id);
            }
        }
        rest = &rest[close + 1..];
    }
    out
}

/// Calls the backend with retries on transient failures.
pub fn generate_answer(
    backend: &dyn LlmBackend,
    request: &GenerateRequest,
    policy: &RetryPolicy,
) -> Result<AnswerResult, GenError> {
    let start = Instant::now();
    let attempts = policy.max_attempts.max(1);
    let mut last = String::new();
    for attempt in 1..=attempts {
        if attempt > 1 {
            let delay = policy.delay(attempt - 1);
            if !delay.is_zero() {
                thread::sleep(delay);
            }
        }
        match backend.generate(request) {
            Ok(reply) => {
                let allowed = request.prompt.chunk_ids();
                let mut used: Vec<ChunkId> = Vec::new();
                for id in reply.cited.iter().cloned().chain(cited_ids(&reply.answer)) {
                    if allowed.contains(&id) && !used.contains(&id) {
                        used.push(id);
                    }
                }
                return Ok(AnswerResult {
                    answer_text: reply.answer,
                    evidence_used: used,
                    prompt_tokens: reply.prompt_tokens,
                    latency_ms: start.elapsed().as_millis() as u64,
                    backend_id: backend.id().to_string(),
                });
            }
            Err(BackendFailure::ContextOverflow) => {
                return Err(GenError::ContextOverflow {
                    token_estimate: request.prompt.token_estimate,
                })
            }
            Err(BackendFailure::Permanent(m)) => return Err(GenError::Backend { attempts: attempt, message: m }),
            Err(BackendFailure::Transient(m)) => {
                log::warn!("backend {} attempt {attempt} failed: {m}", backend.id());
                last = m;
            }
        }
    }
    Err(GenError::Backend {
        attempts,
        message: last,
    })
}

/// Options a backend factory may read.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BackendOptions {
    pub endpoint: Option<String>,
    pub transcript: Option<std::path::PathBuf>,
    pub latency_base_ms: Option<f64>,
    pub latency_per_token_ms: Option<f64>,
    pub max_inflight: Option<usize>,
}

type BackendFactory = Box<dyn Fn(&BackendOptions) -> Result<Arc<dyn LlmBackend>, GenError> + Send + Sync>;

/// Backends constructible by name.
pub struct BackendRegistry {
    factories: BTreeMap<String, BackendFactory>,
}

impl BackendRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("echo", |_| Ok(Arc::new(EchoBackend) as Arc<dyn LlmBackend>));
        r.register("extractive", |_| Ok(Arc::new(ExtractiveBackend) as Arc<dyn LlmBackend>));
        r.register("scripted", |o| {
            let path = o
                .transcript
                .as_ref()
                .ok_or_else(|| GenError::Backend {
                    attempts: 0,
                    message: "scripted backend needs a transcript file".into(),
                })?;
            Ok(Arc::new(ScriptedBackend::load(path)?) as Arc<dyn LlmBackend>)
        });
        r.register("simulated", |o| {
            Ok(Arc::new(SimulatedLatencyBackend::new(
                Arc::new(ExtractiveBackend),
                o.latency_base_ms.unwrap_or(2.0),
                o.latency_per_token_ms.unwrap_or(0.002),
            )) as Arc<dyn LlmBackend>)
        });
        r.register("http", |o| {
            let endpoint = o.endpoint.clone().ok_or_else(|| GenError::Backend {
                attempts: 0,
                message: "http backend needs an endpoint".into(),
            })?;
            Ok(Arc::new(HttpBackend::new(endpoint, o.max_inflight.unwrap_or(4))) as Arc<dyn LlmBackend>)
        });
        r
    }

    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&BackendOptions) -> Result<Arc<dyn LlmBackend>, GenError> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Box::new(factory));
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn build(&self, name: &str, options: &BackendOptions) -> Result<Arc<dyn LlmBackend>, GenError> {
        let factory = self.factories.get(name).ok_or_else(|| GenError::Backend {
            attempts: 0,
            message: format!("unknown backend `{name}` (known: {})", self.names().join(", ")),
        })?;
        factory(options)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doc_model::{ImageChunk, MemoryBlobs, Modality, TextChunk};
    use crate::sampler::EvidenceEntry;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn doc() -> (ParsedDocument, MemoryBlobs) {
        let mut blobs = MemoryBlobs::new();
        let hash = blobs.insert(b"png".to_vec());
        let text = |i: usize, s: &str| {
            Chunk::Text(TextChunk {
                chunk_id: ChunkId::new(format!("t{i}")),
                order_index: i,
                section_path: vec![],
                text: s.into(),
            })
        };
        let d = ParsedDocument::new(
            "d",
            "d.pdf",
            vec![
                text(0, "Alpha beta."),
                Chunk::Image(ImageChunk {
                    chunk_id: "i0".into(),
                    order_index: 1,
                    caption: "Figure 1: gamma".into(),
                    figure_label: Some("Figure 1".into()),
                    image_ref: ImageRef { hash },
                }),
                text(2, "Delta, epsilon"),
            ],
        )
        .unwrap();
        (d, blobs)
    }

    fn evidence(ids: &[(&str, Modality)]) -> SampledEvidence {
        SampledEvidence {
            entries: ids
                .iter()
                .enumerate()
                .map(|(i, (id, m))| EvidenceEntry {
                    chunk_id: ChunkId::new(*id),
                    modality: *m,
                    score: 1.0 - i as f64 * 0.1,
                    rank: i + 1,
                    order_index: 0,
                })
                .collect(),
            query_text: "q".into(),
        }
    }

    #[test]
    fn token_estimator() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("Hello, world!"), 4);
        assert_eq!(estimate_tokens("a  b\tc"), 3);
        assert_eq!(estimate_tokens("x=1.5"), 5);
    }

    #[test]
    fn parts_follow_rank_order() {
        let (d, _) = doc();
        let ev = evidence(&[("t2", Modality::Text), ("i0", Modality::Image)]);
        let p = assemble_prompt("What?", &ev, &d, DEFAULT_TEMPLATE).unwrap();
        let ids: Vec<_> = p.chunk_ids().iter().map(|c| c.to_string()).collect();
        assert_eq!(ids, vec!["t2", "i0"]);
        let expected = estimate_tokens(&p.instruction) + 2 + 3 + IMAGE_TOKEN_COST + 4;
        assert_eq!(p.token_estimate, expected);

        let r = assemble_prompt("What?", &ev, &d, "grounded-reading-order").unwrap();
        assert_eq!(r.chunk_ids()[0].as_str(), "i0");
    }

    #[test]
    fn dangling_or_empty_evidence_rejected() {
        let (d, _) = doc();
        let missing = evidence(&[("t9", Modality::Text)]);
        assert!(matches!(assemble_prompt("q", &missing, &d, DEFAULT_TEMPLATE), Err(GenError::Integrity(_))));
        assert!(matches!(assemble_prompt("q", &evidence(&[]), &d, DEFAULT_TEMPLATE), Err(GenError::Integrity(_))));
        assert!(matches!(
            assemble_prompt("q", &evidence(&[("t0", Modality::Text)]), &d, "nope"),
            Err(GenError::Template(_))
        ));
    }

    #[test]
    fn citations_are_parsed() {
        let ids = cited_ids("See [t1] and [i0, t1]. [");
        assert_eq!(ids, vec![ChunkId::new("t1"), ChunkId::new("i0")]);
    }

    struct Flaky {
        calls: AtomicUsize,
        fail_first: usize,
    }

    impl LlmBackend for Flaky {
        fn id(&self) -> &str {
            "flaky"
        }
        fn generate(&self, request: &GenerateRequest) -> Result<BackendReply, BackendFailure> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.fail_first {
                return Err(BackendFailure::Transient("503".into()));
            }
            Ok(BackendReply {
                answer: "ok [t0] [zz]".into(),
                prompt_tokens: request.prompt.token_estimate,
                cited: vec![],
            })
        }
    }

    #[test]
    fn retries_then_gives_up() {
        let (d, blobs) = doc();
        let p = assemble_prompt("q", &evidence(&[("t0", Modality::Text)]), &d, DEFAULT_TEMPLATE).unwrap();
        let req = GenerateRequest::load(p, &blobs).unwrap();

        let always = Flaky {
            calls: AtomicUsize::new(0),
            fail_first: usize::MAX,
        };
        let err = generate_answer(&always, &req, &RetryPolicy::immediate()).unwrap_err();
        assert!(matches!(err, GenError::Backend { attempts: 3, .. }));
        assert_eq!(always.calls.load(Ordering::SeqCst), 3);

        let twice = Flaky {
            calls: AtomicUsize::new(0),
            fail_first: 2,
        };
        let ok = generate_answer(&twice, &req, &RetryPolicy::immediate()).unwrap();
        assert_eq!(ok.evidence_used, vec![ChunkId::new("t0")]);
        assert_eq!(ok.prompt_tokens, req.prompt.token_estimate);
    }

    #[test]
    fn backoff_schedule() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay(1), Duration::from_millis(200));
        assert_eq!(p.delay(2), Duration::from_millis(800));
        assert_eq!(RetryPolicy::immediate().delay(2), Duration::ZERO);
    }

    #[test]
    fn registry_builds_by_name() {
        let r = BackendRegistry::with_builtins();
        assert_eq!(r.build("echo", &BackendOptions::default()).unwrap().id(), "echo");
        assert!(r.build("http", &BackendOptions::default()).is_err());
        assert!(r.build("missing", &BackendOptions::default()).is_err());
    }
}
