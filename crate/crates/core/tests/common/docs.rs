//! Small documents built in code.

use std::sync::Arc;

use sparsedoc_core::doc_model::{Chunk, ImageChunk, ImageRef, MemoryBlobs, ParsedDocument, TextChunk};
use sparsedoc_core::embedding::{embed_chunk_cached, EmbeddingCache, OfflineEmbedder, Providers};

/// `n_text` paragraphs with an image after every fourth one, `m_image` in total.
pub fn mixed_doc(doc_id: &str, n_text: usize, m_image: usize) -> (ParsedDocument, MemoryBlobs) {
    let mut blobs = MemoryBlobs::new();
    let mut chunks = Vec::new();
    let mut images = 0;
    for t in 0..n_text {
        let order = chunks.len();
        chunks.push(Chunk::Text(TextChunk {
            chunk_id: format!("t{t}").into(),
            order_index: order,
            section_path: vec![format!("Section {}", t / 5 + 1)],
            text: format!("Paragraph {t} of {doc_id} reports measurement series {t} with care. See Figure {}.", t / 4 + 1),
        }));
        if t % 4 == 3 && images < m_image {
            let order = chunks.len();
            let hash = blobs.insert(format!("{doc_id}-image-{images}").into_bytes());
            chunks.push(Chunk::Image(ImageChunk {
                chunk_id: format!("i{images}").into(),
                order_index: order,
                caption: format!("Figure {}: plot of series {t} in {doc_id}.", images + 1),
                figure_label: Some(format!("Figure {}", images + 1)),
                image_ref: ImageRef { hash },
            }));
            images += 1;
        }
    }
    while images < m_image {
        let order = chunks.len();
        let hash = blobs.insert(format!("{doc_id}-image-{images}").into_bytes());
        chunks.push(Chunk::Image(ImageChunk {
            chunk_id: format!("i{images}").into(),
            order_index: order,
            caption: format!("Figure {}: extra plot in {doc_id}.", images + 1),
            figure_label: Some(format!("Figure {}", images + 1)),
            image_ref: ImageRef { hash },
        }));
        images += 1;
    }
    (ParsedDocument::new(doc_id, format!("{doc_id}.pdf"), chunks).unwrap(), blobs)
}

/// `n` text chunks of exactly `words` distinct words each.
pub fn uniform_text_doc(doc_id: &str, n: usize, words: usize) -> ParsedDocument {
    let chunks = (0..n)
        .map(|i| {
            let text = (0..words).map(|w| format!("w{i}x{w}")).collect::<Vec<_>>().join(" ");
            Chunk::Text(TextChunk {
                chunk_id: format!("t{i}").into(),
                order_index: i,
                section_path: vec![],
                text,
            })
        })
        .collect();
    ParsedDocument::new(doc_id, format!("{doc_id}.pdf"), chunks).unwrap()
}

/// Vocabulary of the planted embedder used by [`builder_corpus`].
pub const BUILDER_TOPICS: &[&str] = &["sampler", "adapter", "cache", "latency"];

fn text(id: &str, order: usize, section: &str, body: String) -> Chunk {
    Chunk::Text(TextChunk {
        chunk_id: id.into(),
        order_index: order,
        section_path: vec![section.into()],
        text: body,
    })
}

/// Two documents with sections, labelled figures referenced from the text,
/// and non-adjacent paragraphs sharing a topic, embedded into a cache with a
/// planted-topic embedder.
pub fn builder_corpus() -> (Vec<ParsedDocument>, MemoryBlobs, EmbeddingCache, Providers) {
    let mut blobs = MemoryBlobs::new();
    let mut docs = Vec::new();
    for (d, name) in ["alpha", "beta"].into_iter().enumerate() {
        let mut chunks = Vec::new();
        let push_text = |chunks: &mut Vec<Chunk>, section: &str, body: String| {
            let n = chunks.iter().filter(|c: &&Chunk| matches!(c, Chunk::Text(_))).count();
            let order = chunks.len();
            chunks.push(text(&format!("t{n}"), order, section, body));
        };
        push_text(&mut chunks, "Introduction", format!("Report {name} introduces a sampler that reads only a few chunks."));
        push_text(&mut chunks, "Introduction", format!("Report {name} stores every vector in a cache on disk."));
        push_text(&mut chunks, "Method", format!("In {name} the sampler scores all chunks, see Figure 1 for the pipeline."));
        let order = chunks.len();
        let hash = blobs.insert(format!("{name}-figure-1").into_bytes());
        chunks.push(Chunk::Image(ImageChunk {
            chunk_id: "i0".into(),
            order_index: order,
            caption: format!("Figure 1: the {name} pipeline from query to answer."),
            figure_label: Some("Figure 1".into()),
            image_ref: ImageRef { hash },
        }));
        push_text(&mut chunks, "Method", format!("The adapter of {name} is a linear map trained for {} epochs.", 10 + d));
        push_text(&mut chunks, "Results", format!("Table 2 lists the latency of {name} on long inputs."));
        let order = chunks.len();
        let hash = blobs.insert(format!("{name}-table-2").into_bytes());
        chunks.push(Chunk::Image(ImageChunk {
            chunk_id: "i1".into(),
            order_index: order,
            caption: format!("Table 2: latency of {name} by input length."),
            figure_label: Some("Table 2".into()),
            image_ref: ImageRef { hash },
        }));
        push_text(&mut chunks, "Results", format!("With the sampler, {name} answers with a short prompt."));
        docs.push(ParsedDocument::new(name, format!("{name}.pdf"), chunks).unwrap());
    }
    let topics = BUILDER_TOPICS.iter().map(|s| s.to_string()).collect();
    let providers = Providers::shared(Arc::new(OfflineEmbedder::planted(3, 32, topics, 0.9)));
    let cache = EmbeddingCache::new(32);
    for doc in &docs {
        for chunk in doc.chunks() {
            embed_chunk_cached(&cache, &providers, &blobs, chunk).unwrap();
        }
    }
    (docs, blobs, cache, providers)
}
