//! Seeded planted-topic corpora for training and retrieval tests.
//!
//! Every chunk carries one topic token, distinct within its document, so
//! the evidence for a question about that topic is known by construction.
//! With `rotate` set, raw query vectors are passed through a fixed random
//! orthogonal map before use: the query space then starts out misaligned
//! with the chunk space and an adapter has something to learn.

use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{sample_negatives, LinearAdapter, Provenance, TrainError, TrainingBatch};
use crate::doc_model::{Chunk, ChunkId, ImageChunk, ImageRef, MemoryBlobs, ParsedDocument, TextChunk};
use crate::embedding::{
    embed_chunk_cached, embed_text, random_orthonormal, EmbeddingCache, EmbeddingVector, OfflineEmbedder, Providers,
    DEFAULT_PLANTED_WEIGHT,
};
use crate::sampler::{score_all, top_k, SamplerConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSpec {
    pub seed: u64,
    pub dims: usize,
    pub topics: usize,
    pub docs: usize,
    pub text_per_doc: usize,
    pub images_per_doc: usize,
    pub train_queries: usize,
    pub heldout_queries: usize,
    pub rotate: bool,
    pub weight: f64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            dims: 64,
            topics: 48,
            docs: 5,
            text_per_doc: 32,
            images_per_doc: 8,
            train_queries: 200,
            heldout_queries: 100,
            rotate: true,
            weight: DEFAULT_PLANTED_WEIGHT,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedQuery {
    pub doc_index: usize,
    pub question: String,
    pub topic: String,
    /// Raw query vector (rotated when the corpus is rotated).
    pub query_vec: EmbeddingVector,
    pub positive: ChunkId,
}

pub struct PlantedCorpus {
    pub spec: PlantedSpec,
    pub embedder: Arc<OfflineEmbedder>,
    pub providers: Providers,
    pub cache: EmbeddingCache,
    pub blobs: MemoryBlobs,
    pub docs: Vec<ParsedDocument>,
    pub train: Vec<PlantedQuery>,
    pub heldout: Vec<PlantedQuery>,
    rotation: Option<LinearAdapter>,
}

const TRAIN_TEMPLATES: &[&str] = &[
    "What does the study report about {t}?",
    "Summarize the findings on {t} in part {n}.",
    "How is {t} measured in experiment {n}?",
    "Which result concerns {t}?",
];

const HELDOUT_TEMPLATES: &[&str] = &[
    "Explain the role of {t} in trial {n}.",
    "What evidence supports the {t} claim?",
];

pub fn topic_name(i: usize) -> String {
    format!("topic{i:02}")
}

impl PlantedCorpus {
    pub fn generate(spec: PlantedSpec) -> Result<Self, TrainError> {
        let per_doc = spec.text_per_doc + spec.images_per_doc;
        if per_doc == 0 || per_doc > spec.topics || spec.topics >= spec.dims || spec.docs == 0 {
            return Err(TrainError::Config(
                "planted corpus needs 0 < chunks per doc <= topics < dims and at least one document".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let vocab: Vec<String> = (0..spec.topics).map(topic_name).collect();
        let embedder = Arc::new(OfflineEmbedder::planted(spec.seed, spec.dims, vocab.clone(), spec.weight));
        let providers = Providers::shared(embedder.clone());
        let cache = EmbeddingCache::new(spec.dims);
        let mut blobs = MemoryBlobs::new();
        let mut docs = Vec::with_capacity(spec.docs);
        let mut topic_of_chunk: Vec<Vec<(ChunkId, String)>> = Vec::with_capacity(spec.docs);

        for d in 0..spec.docs {
            let doc_id = format!("planted-{d}");
            let mut topics: Vec<usize> = (0..spec.topics).collect();
            topics.shuffle(&mut rng);
            topics.truncate(per_doc);
            let mut is_image = vec![false; per_doc];
            is_image[..spec.images_per_doc].iter_mut().for_each(|b| *b = true);
            is_image.shuffle(&mut rng);

            let mut chunks = Vec::with_capacity(per_doc);
            let mut labels = Vec::with_capacity(per_doc);
            let (mut nt, mut ni) = (0, 0);
            for (order, (&topic, &image)) in topics.iter().zip(&is_image).enumerate() {
                let name = &vocab[topic];
                if image {
                    let mut bytes = vec![0u8; 48];
                    rng.fill(&mut bytes[..]);
                    let hash = blobs.insert(bytes);
                    let id = ChunkId::new(format!("i{ni}"));
                    ni += 1;
                    let label = format!("Figure {ni}");
                    chunks.push(Chunk::Image(ImageChunk {
                        chunk_id: id.clone(),
                        order_index: order,
                        caption: format!("{label}: overview of {name} in {doc_id}."),
                        figure_label: Some(label),
                        image_ref: ImageRef { hash },
                    }));
                    labels.push((id, name.clone()));
                } else {
                    let id = ChunkId::new(format!("t{nt}"));
                    nt += 1;
                    chunks.push(Chunk::Text(TextChunk {
                        chunk_id: id.clone(),
                        order_index: order,
                        section_path: vec![format!("Part {}", order / 8 + 1)],
                        text: format!(
                            "In {doc_id} the {name} measurements were repeated {} times and the result held.",
                            rng.random_range(2..50)
                        ),
                    }));
                    labels.push((id, name.clone()));
                }
            }
            let doc = ParsedDocument::new(doc_id.clone(), format!("{doc_id}.pdf"), chunks)
                .map_err(|e| TrainError::Config(e.to_string()))?;
            for chunk in doc.chunks() {
                embed_chunk_cached(&cache, &providers, &blobs, chunk).map_err(|e| TrainError::Domain(e.to_string()))?;
            }
            docs.push(doc);
            topic_of_chunk.push(labels);
        }

        let rotation = if spec.rotate {
            let rows = random_orthonormal(&mut rng, spec.dims, spec.dims);
            Some(LinearAdapter::from_weights(spec.dims, spec.dims, rows.concat())?)
        } else {
            None
        };

        let make_queries = |count: usize, templates: &[&str], rng: &mut ChaCha8Rng| -> Result<Vec<PlantedQuery>, TrainError> {
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                let doc_index = rng.random_range(0..docs.len());
                let (positive, topic) = topic_of_chunk[doc_index]
                    .choose(rng)
                    .cloned()
                    .expect("documents are non-empty");
                let template = templates.choose(rng).expect("templates are non-empty");
                let question = template
                    .replace("{t}", &topic)
                    .replace("{n}", &rng.random_range(1..1000).to_string());
                let raw = embed_text(embedder.as_ref(), &question).map_err(|e| TrainError::Domain(e.to_string()))?;
                let query_vec = match &rotation {
                    Some(r) => r.apply_vector(&raw)?,
                    None => raw,
                };
                out.push(PlantedQuery {
                    doc_index,
                    question,
                    topic,
                    query_vec,
                    positive,
                });
            }
            Ok(out)
        };
        let train = make_queries(spec.train_queries, TRAIN_TEMPLATES, &mut rng)?;
        let heldout = make_queries(spec.heldout_queries, HELDOUT_TEMPLATES, &mut rng)?;

        Ok(Self {
            spec,
            embedder,
            providers,
            cache,
            blobs,
            docs,
            train,
            heldout,
            rotation,
        })
    }

    pub fn rotation(&self) -> Option<&LinearAdapter> {
        self.rotation.as_ref()
    }

    fn chunk_vec(&self, doc: &ParsedDocument, id: &ChunkId) -> Vec<f64> {
        let chunk = doc.chunk(id).expect("planted ids resolve");
        let provider = self.providers.for_modality(chunk.modality());
        self.cache
            .get(provider.id(), &chunk.content_hash())
            .expect("planted chunks are cached at generation")
            .vector
            .to_f64()
    }

    /// One batch per training query: its evidence chunk as the positive and
    /// sampled negatives from the same document.
    pub fn training_batches(&self, seed: u64) -> Result<Vec<TrainingBatch>, TrainError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.train
            .iter()
            .map(|q| {
                let doc = &self.docs[q.doc_index];
                let positives = vec![q.positive.clone()];
                let negatives = sample_negatives(doc, &positives, &mut rng)?;
                let mut batch = TrainingBatch::new(
                    q.query_vec.to_f64(),
                    vec![self.chunk_vec(doc, &q.positive)],
                    negatives.iter().map(|id| self.chunk_vec(doc, id)).collect(),
                )?;
                batch.provenance = Some(Provenance {
                    doc_id: doc.doc_id().to_string(),
                    positive_ids: positives,
                    negative_ids: negatives,
                    strategy: "planted".into(),
                });
                Ok(batch)
            })
            .collect()
    }

    /// Fraction of queries whose evidence chunk lands in the sampler's top k.
    pub fn recall_at_k(&self, queries: &[PlantedQuery], adapter: Option<&LinearAdapter>, k: usize) -> Result<f64, TrainError> {
        if queries.is_empty() {
            return Err(TrainError::Config("no queries".into()));
        }
        let config = SamplerConfig::with_k(k);
        let mut hits = 0usize;
        for q in queries {
            let vec = match adapter {
                Some(a) => a.apply_vector(&q.query_vec)?,
                None => q.query_vec.clone(),
            };
            let scores = score_all(&vec, &self.docs[q.doc_index], &self.cache, &self.providers)
                .map_err(|e| TrainError::Domain(e.to_string()))?;
            if top_k(&scores, &config).iter().any(|e| e.chunk_id == q.positive) {
                hits += 1;
            }
        }
        Ok(hits as f64 / queries.len() as f64)
    }
}
