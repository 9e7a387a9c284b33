//! Evidence selection strategies, registered by name.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;

use super::{DatasetError, StrategyKind};
use crate::doc_model::{Chunk, ChunkId, Modality, ParsedDocument};
use crate::embedding::{cosine_similarity, EmbeddingCache, EmbeddingVector, Providers};

pub const DEFAULT_RELATEDNESS: f64 = 0.6;

/// Embeddings a strategy may consult.
#[derive(Clone, Copy)]
pub struct SelectContext<'a> {
    pub cache: Option<&'a EmbeddingCache>,
    pub providers: Option<&'a Providers>,
}

impl<'a> SelectContext<'a> {
    pub fn none() -> Self {
        Self {
            cache: None,
            providers: None,
        }
    }

    pub fn with_embeddings(cache: &'a EmbeddingCache, providers: &'a Providers) -> Self {
        Self {
            cache: Some(cache),
            providers: Some(providers),
        }
    }

    fn vector(&self, chunk: &Chunk) -> Option<EmbeddingVector> {
        let provider = self.providers?.for_modality(chunk.modality());
        self.cache?
            .get(provider.id(), &chunk.content_hash())
            .map(|r| r.vector.clone())
    }
}

pub trait EvidenceStrategy: Send + Sync {
    fn kind(&self) -> StrategyKind;

    /// Chunk ids in reading order.
    fn select(&self, doc: &ParsedDocument, ctx: &SelectContext<'_>, rng: &mut ChaCha8Rng) -> Result<Vec<ChunkId>, DatasetError>;
}

fn unsatisfiable(kind: StrategyKind, reason: impl Into<String>) -> DatasetError {
    DatasetError::StrategyUnsatisfiable {
        strategy: kind,
        reason: reason.into(),
    }
}

pub struct TextOnly;

impl EvidenceStrategy for TextOnly {
    fn kind(&self) -> StrategyKind {
        StrategyKind::TextOnly
    }

    fn select(&self, doc: &ParsedDocument, _: &SelectContext<'_>, rng: &mut ChaCha8Rng) -> Result<Vec<ChunkId>, DatasetError> {
        let texts: Vec<_> = doc.text_chunks().collect();
        let pick = texts.choose(rng).ok_or_else(|| unsatisfiable(self.kind(), "no text chunks"))?;
        Ok(vec![pick.chunk_id.clone()])
    }
}

pub struct ImageOnly;

impl EvidenceStrategy for ImageOnly {
    fn kind(&self) -> StrategyKind {
        StrategyKind::ImageOnly
    }

    fn select(&self, doc: &ParsedDocument, _: &SelectContext<'_>, rng: &mut ChaCha8Rng) -> Result<Vec<ChunkId>, DatasetError> {
        let images: Vec<_> = doc.image_chunks().collect();
        let pick = images.choose(rng).ok_or_else(|| unsatisfiable(self.kind(), "no image chunks"))?;
        Ok(vec![pick.chunk_id.clone()])
    }
}

fn label_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(figure|fig\.|table)\s*~?(\d+)").expect("valid regex"))
}

/// Canonical `(kind, number)` form of every figure or table reference in `text`.
pub fn figure_refs(text: &str) -> Vec<(String, u32)> {
    label_regex()
        .captures_iter(text)
        .filter_map(|c| {
            let kind = if c[1].eq_ignore_ascii_case("table") { "table" } else { "figure" };
            Some((kind.to_string(), c[2].parse().ok()?))
        })
        .collect()
}

/// A paragraph that mentions a figure or table label, together with the
/// image carrying that label.
pub struct ImageText;

impl EvidenceStrategy for ImageText {
    fn kind(&self) -> StrategyKind {
        StrategyKind::ImageText
    }

    fn select(&self, doc: &ParsedDocument, _: &SelectContext<'_>, rng: &mut ChaCha8Rng) -> Result<Vec<ChunkId>, DatasetError> {
        let mut by_label: BTreeMap<(String, u32), &ChunkId> = BTreeMap::new();
        for image in doc.image_chunks() {
            if let Some(label) = &image.figure_label {
                if let Some(key) = figure_refs(label).into_iter().next() {
                    by_label.entry(key).or_insert(&image.chunk_id);
                }
            }
        }
        let mut pairs: Vec<(&ChunkId, &ChunkId)> = Vec::new();
        for text in doc.text_chunks() {
            for key in figure_refs(&text.text) {
                if let Some(image) = by_label.get(&key) {
                    if !pairs.contains(&(&text.chunk_id, image)) {
                        pairs.push((&text.chunk_id, image));
                    }
                }
            }
        }
        let (t, i) = pairs
            .choose(rng)
            .ok_or_else(|| unsatisfiable(self.kind(), "no paragraph references a labelled image"))?;
        let mut ids = vec![(*t).clone(), (*i).clone()];
        sort_reading(doc, &mut ids);
        Ok(ids)
    }
}

/// Every chunk of one section, chosen uniformly among sections.
pub struct Section;

impl EvidenceStrategy for Section {
    fn kind(&self) -> StrategyKind {
        StrategyKind::Section
    }

    fn select(&self, doc: &ParsedDocument, _: &SelectContext<'_>, rng: &mut ChaCha8Rng) -> Result<Vec<ChunkId>, DatasetError> {
        let sections = sections(doc);
        let (_, ids) = sections
            .choose(rng)
            .ok_or_else(|| unsatisfiable(self.kind(), "document has no sections"))?;
        Ok(ids.clone())
    }
}

/// Sections in order of first appearance with their chunks.
pub fn sections(doc: &ParsedDocument) -> Vec<(Vec<String>, Vec<ChunkId>)> {
    let mut out: Vec<(Vec<String>, Vec<ChunkId>)> = Vec::new();
    for (chunk, path) in doc.section_of_chunks() {
        match out.iter_mut().find(|(p, _)| p.as_slice() == path) {
            Some((_, ids)) => ids.push(chunk.id().clone()),
            None => out.push((path.to_vec(), vec![chunk.id().clone()])),
        }
    }
    out
}

/// Two to four related, pairwise non-adjacent paragraphs. Relatedness is
/// embedding cosine at or above `threshold`.
pub struct CrossParagraph {
    pub threshold: f64,
}

impl Default for CrossParagraph {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_RELATEDNESS,
        }
    }
}

impl EvidenceStrategy for CrossParagraph {
    fn kind(&self) -> StrategyKind {
        StrategyKind::CrossParagraph
    }

    fn select(&self, doc: &ParsedDocument, ctx: &SelectContext<'_>, rng: &mut ChaCha8Rng) -> Result<Vec<ChunkId>, DatasetError> {
        let mut texts = Vec::new();
        for chunk in doc.chunks().iter().filter(|c| c.modality() == Modality::Text) {
            let v = ctx
                .vector(chunk)
                .ok_or_else(|| unsatisfiable(self.kind(), format!("no cached embedding for {}", chunk.id())))?;
            texts.push((chunk.id().clone(), chunk.order_index(), v));
        }
        let target = rng.random_range(2..=4usize);
        let mut seeds: Vec<usize> = (0..texts.len()).collect();
        seeds.shuffle(rng);
        for seed in seeds {
            let mut chosen = vec![seed];
            let mut candidates: Vec<usize> = (0..texts.len()).filter(|&i| i != seed).collect();
            candidates.shuffle(rng);
            for c in candidates {
                if chosen.len() == target {
                    break;
                }
                let fits = chosen.iter().all(|&s| {
                    texts[s].1.abs_diff(texts[c].1) >= 2
                        && cosine_similarity(&texts[s].2, &texts[c].2).is_ok_and(|cos| cos >= self.threshold)
                });
                if fits {
                    chosen.push(c);
                }
            }
            if chosen.len() >= 2 {
                chosen.sort_by_key(|&i| texts[i].1);
                return Ok(chosen.into_iter().map(|i| texts[i].0.clone()).collect());
            }
        }
        Err(unsatisfiable(self.kind(), "no two non-adjacent paragraphs are related enough"))
    }
}

fn sort_reading(doc: &ParsedDocument, ids: &mut [ChunkId]) {
    ids.sort_by_key(|id| doc.chunk(id).map_or(usize::MAX, Chunk::order_index));
}

pub struct StrategyRegistry {
    strategies: BTreeMap<StrategyKind, Box<dyn EvidenceStrategy>>,
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        Self {
            strategies: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(TextOnly));
        r.register(Box::new(ImageOnly));
        r.register(Box::new(ImageText));
        r.register(Box::new(Section));
        r.register(Box::new(CrossParagraph::default()));
        r
    }

    /// Replaces any strategy of the same kind.
    pub fn register(&mut self, strategy: Box<dyn EvidenceStrategy>) {
        self.strategies.insert(strategy.kind(), strategy);
    }

    pub fn get(&self, kind: StrategyKind) -> Option<&dyn EvidenceStrategy> {
        self.strategies.get(&kind).map(|b| b.as_ref())
    }

    pub fn by_name(&self, name: &str) -> Option<&dyn EvidenceStrategy> {
        self.get(name.parse().ok()?)
    }

    pub fn kinds(&self) -> Vec<StrategyKind> {
        self.strategies.keys().copied().collect()
    }
}
