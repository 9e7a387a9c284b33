//! Sparse sampler: score every chunk against the query and keep the top k
//! over the joint pool of text and image chunks.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapter_train::LinearAdapter;
use crate::doc_model::{ChunkId, Modality, ParsedDocument};
use crate::embedding::{cosine_similarity, embed_text, EmbedError, EmbeddingCache, EmbeddingVector, Providers};

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("no cached embedding for chunks {0:?}")]
    CacheMiss(Vec<ChunkId>),
    #[error("invalid sampler config: {0}")]
    Config(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredChunk {
    pub chunk_id: ChunkId,
    pub modality: Modality,
    pub order_index: usize,
    pub score: f64,
}

/// Higher score first, then lower `order_index`.
pub fn tie_rule(a: &ScoredChunk, b: &ScoredChunk) -> Ordering {
    b.score.total_cmp(&a.score).then(a.order_index.cmp(&b.order_index))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreSet {
    text: Vec<ScoredChunk>,
    image: Vec<ScoredChunk>,
    /// Similarity evaluations performed to build this set.
    pub evaluations: usize,
}

impl ScoreSet {
    pub fn from_entries(entries: impl IntoIterator<Item = ScoredChunk>) -> Self {
        let (text, image): (Vec<_>, Vec<_>) = entries.into_iter().partition(|e| e.modality == Modality::Text);
        Self {
            text,
            image,
            evaluations: 0,
        }
    }

    pub fn text_scores(&self) -> BTreeMap<ChunkId, f64> {
        self.text.iter().map(|e| (e.chunk_id.clone(), e.score)).collect()
    }

    pub fn image_scores(&self) -> BTreeMap<ChunkId, f64> {
        self.image.iter().map(|e| (e.chunk_id.clone(), e.score)).collect()
    }

    pub fn entries(&self) -> impl Iterator<Item = &ScoredChunk> {
        self.text.iter().chain(&self.image)
    }

    pub fn len(&self) -> usize {
        self.text.len() + self.image.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub k: usize,
    /// Minimum number of images among the selected entries (when available).
    pub modality_floor: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            modality_floor: 0,
        }
    }
}

impl SamplerConfig {
    pub fn with_k(k: usize) -> Self {
        Self {
            k,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SampleError> {
        if self.k == 0 {
            return Err(SampleError::Config("k must be at least 1".into()));
        }
        if self.modality_floor > self.k {
            return Err(SampleError::Config("modality_floor cannot exceed k".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceEntry {
    pub chunk_id: ChunkId,
    pub modality: Modality,
    pub score: f64,
    pub rank: usize,
    pub order_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledEvidence {
    pub entries: Vec<EvidenceEntry>,
    pub query_text: String,
}

impl SampledEvidence {
    pub fn chunk_ids(&self) -> Vec<ChunkId> {
        self.entries.iter().map(|e| e.chunk_id.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// One cosine score per chunk, looked up from the cache under the active
/// provider for the chunk's modality.
pub fn score_all(
    query_vec: &EmbeddingVector,
    doc: &ParsedDocument,
    cache: &EmbeddingCache,
    providers: &Providers,
) -> Result<ScoreSet, SampleError> {
    let mut missing = Vec::new();
    let mut entries = Vec::with_capacity(doc.len());
    let mut evaluations = 0;
    for chunk in doc.chunks() {
        let provider = providers.for_modality(chunk.modality());
        match cache.get(provider.id(), &chunk.content_hash()) {
            Some(record) => {
                let score = cosine_similarity(query_vec, &record.vector)?;
                evaluations += 1;
                entries.push(ScoredChunk {
                    chunk_id: chunk.id().clone(),
                    modality: chunk.modality(),
                    order_index: chunk.order_index(),
                    score,
                });
            }
            None => missing.push(chunk.id().clone()),
        }
    }
    if !missing.is_empty() {
        return Err(SampleError::CacheMiss(missing));
    }
    let mut set = ScoreSet::from_entries(entries);
    set.evaluations = evaluations;
    Ok(set)
}

/// The `k` best chunks over both modalities, ordered by [`tie_rule`].
pub fn top_k(scores: &ScoreSet, config: &SamplerConfig) -> Vec<EvidenceEntry> {
    let mut ranked: Vec<&ScoredChunk> = scores.entries().collect();
    ranked.sort_by(|a, b| tie_rule(a, b));
    let k = config.k.min(ranked.len());
    let mut selected: Vec<&ScoredChunk> = ranked[..k].to_vec();

    if config.modality_floor > 0 {
        let images_total = ranked.iter().filter(|e| e.modality == Modality::Image).count();
        let want = config.modality_floor.min(images_total).min(k);
        let have = selected.iter().filter(|e| e.modality == Modality::Image).count();
        if have < want {
            let extra: Vec<&ScoredChunk> = ranked[k..]
                .iter()
                .filter(|e| e.modality == Modality::Image)
                .take(want - have)
                .copied()
                .collect();
            // Drop the lowest-ranked text entries to make room.
            let mut to_drop = extra.len();
            for i in (0..selected.len()).rev() {
                if to_drop == 0 {
                    break;
                }
                if selected[i].modality == Modality::Text {
                    selected.remove(i);
                    to_drop -= 1;
                }
            }
            selected.extend(extra);
            selected.sort_by(|a, b| tie_rule(a, b));
        }
    }

    selected
        .into_iter()
        .enumerate()
        .map(|(i, e)| EvidenceEntry {
            chunk_id: e.chunk_id.clone(),
            modality: e.modality,
            score: e.score,
            rank: i + 1,
            order_index: e.order_index,
        })
        .collect()
}

/// Embed the query (optionally through an adapter), score and select.
/// Query embeddings are never cached.
pub fn sample(
    query: &str,
    doc: &ParsedDocument,
    providers: &Providers,
    cache: &EmbeddingCache,
    config: &SamplerConfig,
    adapter: Option<&LinearAdapter>,
) -> Result<(SampledEvidence, ScoreSet), SampleError> {
    config.validate()?;
    let mut query_vec = embed_text(providers.text.as_ref(), query)?;
    if let Some(adapter) = adapter {
        query_vec = adapter.apply_vector(&query_vec).map_err(|e| SampleError::Config(e.to_string()))?;
    }
    let scores = score_all(&query_vec, doc, cache, providers)?;
    let entries = top_k(&scores, config);
    Ok((
        SampledEvidence {
            entries,
            query_text: query.to_string(),
        },
        scores,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sc(id: &str, modality: Modality, order: usize, score: f64) -> ScoredChunk {
        ScoredChunk {
            chunk_id: id.into(),
            modality,
            order_index: order,
            score,
        }
    }

    #[test]
    fn joint_pool_with_order_tie_break() {
        // i0 (order 1) beats t2 (order 3) on equal scores.
        let set = ScoreSet::from_entries([
            sc("t0", Modality::Text, 0, 0.9),
            sc("i0", Modality::Image, 1, 0.8),
            sc("t1", Modality::Text, 2, 0.2),
            sc("t2", Modality::Text, 3, 0.8),
        ]);
        let picked = top_k(&set, &SamplerConfig::with_k(2));
        let ids: Vec<_> = picked.iter().map(|e| e.chunk_id.as_str()).collect();
        assert_eq!(ids, vec!["t0", "i0"]);
        assert_eq!(picked.iter().map(|e| e.rank).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn k_beyond_population_returns_all() {
        let set = ScoreSet::from_entries([sc("a", Modality::Text, 0, 0.1), sc("b", Modality::Text, 1, 0.5)]);
        let picked = top_k(&set, &SamplerConfig::with_k(10));
        assert_eq!(picked.len(), 2);
        assert_eq!(picked[0].chunk_id.as_str(), "b");
    }

    #[test]
    fn modality_floor_pulls_in_images() {
        let set = ScoreSet::from_entries([
            sc("t0", Modality::Text, 0, 0.9),
            sc("t1", Modality::Text, 1, 0.8),
            sc("t2", Modality::Text, 2, 0.7),
            sc("i0", Modality::Image, 3, 0.1),
            sc("i1", Modality::Image, 4, 0.2),
        ]);
        let cfg = SamplerConfig { k: 3, modality_floor: 1 };
        let ids: Vec<_> = top_k(&set, &cfg).into_iter().map(|e| e.chunk_id.to_string()).collect();
        assert_eq!(ids, vec!["t0", "t1", "i1"]);
    }

    #[test]
    fn zero_k_rejected() {
        assert!(SamplerConfig::with_k(0).validate().is_err());
        assert_eq!(SamplerConfig::default().k, 5);
    }
}
