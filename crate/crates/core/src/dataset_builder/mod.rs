//! QA corpus construction: pick evidence chunks with a strategy, prompt a
//! generator, parse its markers, filter the pairs and export them.

mod corpus;
mod filter;
mod parse;
mod strategies;
mod templates;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::doc_model::{BlobSource, Chunk, ChunkId, Modality, ParsedDocument};
use crate::generation::{generate_answer, GenError, GenerateRequest, LlmBackend, PromptAssembly, PromptPart, RetryPolicy};
use crate::limits::TokenBucket;

pub use corpus::{export_corpus, read_records, write_records, CorpusRecord, CorpusStats};
pub use filter::{
    filter_qa, word_count, FilterRule, FilterRules, FilterThresholds, MissingQuestionMark, NonEnglish, TooLongAnswer,
    TooShortQuestion,
};
pub use parse::{parse_generation, GeneratedItem, Markers};
pub use strategies::{
    figure_refs, sections, CrossParagraph, EvidenceStrategy, ImageOnly, ImageText, Section, SelectContext,
    StrategyRegistry, TextOnly, DEFAULT_RELATEDNESS,
};
pub use templates::{phases, render, Phase, TemplateKey, TemplateLibrary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    TextOnly,
    ImageOnly,
    ImageText,
    Section,
    CrossParagraph,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::TextOnly,
        StrategyKind::ImageOnly,
        StrategyKind::ImageText,
        StrategyKind::Section,
        StrategyKind::CrossParagraph,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::TextOnly => "text_only",
            StrategyKind::ImageOnly => "image_only",
            StrategyKind::ImageText => "image_text",
            StrategyKind::Section => "section",
            StrategyKind::CrossParagraph => "cross_paragraph",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| DatasetError::Format(format!("unknown strategy `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(DatasetError::Format(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{strategy} cannot be applied: {reason}")]
    StrategyUnsatisfiable { strategy: StrategyKind, reason: String },
    #[error("template: {0}")]
    Template(String),
    #[error("could not parse generator output: {0}")]
    GenerationParse(String),
    #[error("generator declined the document")]
    SkipDocument,
    #[error(transparent)]
    Generation(#[from] GenError),
    #[error("corpus format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceSelection {
    pub strategy: StrategyKind,
    pub chunk_ids: Vec<ChunkId>,
    pub doc_id: String,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterStatus {
    Kept,
    Rejected(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAPair {
    pub id: String,
    pub question: String,
    /// One or two variants: concise first, then detailed.
    pub answers: Vec<String>,
    pub evidence: EvidenceSelection,
    pub generator_id: String,
    pub split: Split,
    pub filter_status: FilterStatus,
}

/// Deterministic in `(doc, strategy, seed)`.
pub fn select_evidence(
    doc: &ParsedDocument,
    strategy: &dyn EvidenceStrategy,
    ctx: &SelectContext<'_>,
    seed: u64,
) -> Result<EvidenceSelection, DatasetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chunk_ids = strategy.select(doc, ctx, &mut rng)?;
    Ok(EvidenceSelection {
        strategy: strategy.kind(),
        chunk_ids,
        doc_id: doc.doc_id().to_string(),
        rng_seed: seed,
    })
}

/// Checks the modality and structure a selection must have for its strategy.
pub fn validate_selection(sel: &EvidenceSelection, doc: &ParsedDocument) -> Result<(), String> {
    if sel.doc_id != doc.doc_id() {
        return Err(format!("selection is for {}, not {}", sel.doc_id, doc.doc_id()));
    }
    if sel.chunk_ids.is_empty() {
        return Err("empty selection".into());
    }
    let mut chunks = Vec::with_capacity(sel.chunk_ids.len());
    for id in &sel.chunk_ids {
        chunks.push(doc.chunk(id).ok_or_else(|| format!("{id} is not in the document"))?);
    }
    let texts = chunks.iter().filter(|c| c.modality() == Modality::Text).count();
    let images = chunks.len() - texts;
    let ok = match sel.strategy {
        StrategyKind::TextOnly => chunks.len() == 1 && texts == 1,
        StrategyKind::ImageOnly => chunks.len() == 1 && images == 1,
        StrategyKind::ImageText => texts >= 1 && images >= 1,
        StrategyKind::Section => sections(doc).iter().any(|(_, ids)| ids == &sel.chunk_ids),
        StrategyKind::CrossParagraph => {
            let orders: Vec<usize> = chunks.iter().map(|c| c.order_index()).collect();
            texts == chunks.len()
                && (2..=4).contains(&chunks.len())
                && orders
                    .iter()
                    .enumerate()
                    .all(|(i, a)| orders[i + 1..].iter().all(|b| a.abs_diff(*b) >= 2))
        }
    };
    if ok {
        Ok(())
    } else {
        Err(format!("selection {:?} does not fit {}", sel.chunk_ids, sel.strategy))
    }
}

/// A generation prompt ready for a backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub key: TemplateKey,
    pub text: String,
    pub images: Vec<PromptPart>,
}

impl RenderedPrompt {
    pub fn to_assembly(&self) -> PromptAssembly {
        PromptAssembly::new(&self.key.id(), self.text.clone(), String::new(), self.images.clone())
    }
}

fn material(sel: &EvidenceSelection, doc: &ParsedDocument) -> Result<(String, Vec<PromptPart>), DatasetError> {
    let mut lines = Vec::new();
    let mut images = Vec::new();
    if sel.strategy == StrategyKind::Section {
        if let Some((path, _)) = sections(doc).into_iter().find(|(_, ids)| ids == &sel.chunk_ids) {
            if !path.is_empty() {
                lines.push(format!("Section: {}", path.join(" > ")));
            }
        }
    }
    for id in &sel.chunk_ids {
        let chunk = doc
            .chunk(id)
            .ok_or_else(|| DatasetError::Format(format!("{id} is not in {}", doc.doc_id())))?;
        match chunk {
            Chunk::Text(t) if sel.strategy == StrategyKind::CrossParagraph => {
                lines.push(format!("idx {}: {}", t.order_index, t.text));
            }
            Chunk::Text(t) => lines.push(t.text.clone()),
            Chunk::Image(i) => {
                let label = i.figure_label.as_deref().unwrap_or(i.chunk_id.as_str());
                lines.push(format!("[image {label}] {}", i.caption));
                images.push(PromptPart::Image {
                    chunk_id: i.chunk_id.clone(),
                    image_ref: i.image_ref.clone(),
                    caption: i.caption.clone(),
                });
            }
        }
    }
    Ok((lines.join("\n\n"), images))
}

fn numbered(questions: &[String]) -> String {
    questions
        .iter()
        .enumerate()
        .map(|(i, q)| format!("{}. {q}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Renders the template for one phase. `questions` feeds the answer phases.
pub fn build_prompt(
    selection: &EvidenceSelection,
    doc: &ParsedDocument,
    library: &TemplateLibrary,
    split: Split,
    phase: Phase,
    questions: &[String],
) -> Result<RenderedPrompt, DatasetError> {
    let key = TemplateKey::new(selection.strategy, split, phase);
    let template = library.get(&key)?;
    let (material, images) = material(selection, doc)?;
    let first = questions.first().map(String::as_str).unwrap_or("");
    Ok(RenderedPrompt {
        key,
        text: render(template, &material, first, &numbered(questions)),
        images,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildJob {
    pub doc_index: usize,
    pub strategy: StrategyKind,
    pub split: Split,
    pub seed: u64,
}

#[derive(Debug, Default)]
pub struct BuildOutcome {
    pub kept: Vec<QAPair>,
    pub rejected: Vec<QAPair>,
    /// Jobs that produced nothing, with the reason.
    pub skipped: Vec<(BuildJob, String)>,
}

pub struct DatasetBuilder {
    pub backend: Arc<dyn LlmBackend>,
    pub generator_id: String,
    pub templates: TemplateLibrary,
    pub strategies: StrategyRegistry,
    pub rules: FilterRules,
    pub retry: RetryPolicy,
    pub rate_limit: Option<Arc<TokenBucket>>,
    pub max_parallel: usize,
}

impl DatasetBuilder {
    pub fn new(backend: Arc<dyn LlmBackend>) -> Self {
        Self {
            generator_id: backend.id().to_string(),
            backend,
            templates: TemplateLibrary::builtin(),
            strategies: StrategyRegistry::with_builtins(),
            rules: FilterRules::default(),
            retry: RetryPolicy::default(),
            rate_limit: None,
            max_parallel: 4,
        }
    }

    fn call(&self, prompt: &RenderedPrompt, blobs: &dyn BlobSource) -> Result<String, DatasetError> {
        if let Some(bucket) = &self.rate_limit {
            bucket.acquire();
        }
        let request = GenerateRequest::load(prompt.to_assembly(), blobs)?;
        Ok(generate_answer(self.backend.as_ref(), &request, &self.retry)?.answer_text)
    }

    /// Unfiltered pairs for one document and strategy.
    pub fn generate_pairs(
        &self,
        doc: &ParsedDocument,
        blobs: &dyn BlobSource,
        ctx: &SelectContext<'_>,
        job: &BuildJob,
    ) -> Result<Vec<QAPair>, DatasetError> {
        let strategy = self
            .strategies
            .get(job.strategy)
            .ok_or_else(|| DatasetError::Template(format!("strategy {} is not registered", job.strategy)))?;
        let selection = select_evidence(doc, strategy, ctx, job.seed)?;
        let prompt = |phase, qs: &[String]| build_prompt(&selection, doc, &self.templates, job.split, phase, qs);
        for &phase in phases(job.strategy, job.split) {
            self.templates.get(&TemplateKey::new(job.strategy, job.split, phase))?;
        }

        let qa: Vec<(String, Vec<String>)> = match (job.strategy, job.split) {
            (StrategyKind::CrossParagraph, Split::Train) => {
                let raw = self.call(&prompt(Phase::Question, &[])?, blobs)?;
                let q = parse_generation(&raw, Markers::Questions)?
                    .into_iter()
                    .find_map(|it| it.question)
                    .expect("parser returns items with questions");
                let raw = self.call(&prompt(Phase::Answer, std::slice::from_ref(&q))?, blobs)?;
                let answers = parse_generation(&raw, Markers::Answers)?
                    .into_iter()
                    .flat_map(|it| it.answers)
                    .take(2)
                    .collect();
                vec![(q, answers)]
            }
            (_, Split::Train) => {
                let raw = self.call(&prompt(Phase::Generate, &[])?, blobs)?;
                parse_generation(&raw, Markers::QuestionsAndAnswers)?
                    .into_iter()
                    .map(|it| (it.question.unwrap_or_default(), it.answers.into_iter().take(2).collect()))
                    .collect()
            }
            (_, Split::Test) => {
                let raw = self.call(&prompt(Phase::Question, &[])?, blobs)?;
                let questions: Vec<String> = parse_generation(&raw, Markers::Questions)?
                    .into_iter()
                    .filter_map(|it| it.question)
                    .collect();
                let mut per_question: Vec<Vec<String>> = vec![Vec::new(); questions.len()];
                for phase in [Phase::AnswerConcise, Phase::AnswerKeywords] {
                    let raw = self.call(&prompt(phase, &questions)?, blobs)?;
                    for it in parse_generation(&raw, Markers::Answers)? {
                        let slot = (it.index as usize).checked_sub(1).and_then(|i| per_question.get_mut(i));
                        if let (Some(slot), Some(a)) = (slot, it.answers.into_iter().next()) {
                            slot.push(a);
                        }
                    }
                }
                questions.into_iter().zip(per_question).collect()
            }
        };

        Ok(qa
            .into_iter()
            .filter(|(_, answers)| !answers.is_empty())
            .enumerate()
            .map(|(n, (question, answers))| QAPair {
                id: format!("{}:{}:{}:{}:{}", doc.doc_id(), job.strategy, job.split, job.seed, n + 1),
                question,
                answers,
                evidence: selection.clone(),
                generator_id: self.generator_id.clone(),
                split: job.split,
                filter_status: FilterStatus::Kept,
            })
            .collect())
    }

    /// Runs the jobs on up to `max_parallel` threads and filters the result.
    /// Output order follows job order regardless of scheduling.
    pub fn build(
        &self,
        docs: &[ParsedDocument],
        blobs: &dyn BlobSource,
        ctx: &SelectContext<'_>,
        jobs: &[BuildJob],
    ) -> BuildOutcome {
        let next = AtomicUsize::new(0);
        let results: Mutex<BTreeMap<usize, Result<Vec<QAPair>, String>>> = Mutex::new(BTreeMap::new());
        std::thread::scope(|s| {
            for _ in 0..self.max_parallel.clamp(1, jobs.len().max(1)) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(job) = jobs.get(i) else { break };
                    let r = match docs.get(job.doc_index) {
                        Some(doc) => self.generate_pairs(doc, blobs, ctx, job).map_err(|e| e.to_string()),
                        None => Err(format!("no document at index {}", job.doc_index)),
                    };
                    results.lock().insert(i, r);
                });
            }
        });
        let mut outcome = BuildOutcome::default();
        let mut all = Vec::new();
        for (i, r) in results.into_inner() {
            match r {
                Ok(pairs) if !pairs.is_empty() => all.extend(pairs),
                Ok(_) => outcome.skipped.push((jobs[i], "no pairs".into())),
                Err(e) => outcome.skipped.push((jobs[i], e)),
            }
        }
        let (kept, rejected) = filter_qa(all, &self.rules);
        outcome.kept = kept;
        outcome.rejected = rejected;
        outcome
    }
}
