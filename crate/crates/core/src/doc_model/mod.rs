//! Interleaved document model.
//!
//! A parsed document is a reading-ordered sequence of text paragraphs and
//! images (figures and tables saved as image blobs). The canonical on-disk
//! form is a single markup file with `<text>` and `<image>` elements plus a
//! content-addressed `blobs/` directory next to it.

mod blobs;
pub mod external;
mod format;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use blobs::{fetch_blob, BlobSource, DirBlobs, MemoryBlobs};
pub use external::{external_parse, ExternalParser, Imported, ParserDialect};
pub use format::{parse_interleaved, read_document, serialize_document, write_document};

#[derive(Debug, Error)]
pub enum DocError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("document integrity violated: {0}")]
    Integrity(String),
    #[error("image blob {0} is missing or does not match its hash")]
    MissingBlob(ContentHash),
    #[error("external parser failed (status {status:?}): {diagnostics}")]
    ExternalTool {
        status: Option<i32>,
        diagnostics: String,
    },
    #[error("cannot convert parser output: {0}")]
    Conversion(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Opaque chunk identifier, unique within a document.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChunkId(String);

impl ChunkId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ChunkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ChunkId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

impl From<String> for ChunkId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

/// `sha256:<hex>` digest of some content.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContentHash(String);

impl ContentHash {
    const PREFIX: &'static str = "sha256:";

    pub fn of_bytes(bytes: &[u8]) -> Self {
        Self(format!("{}{}", Self::PREFIX, hex::encode(Sha256::digest(bytes))))
    }

    /// Hash of several byte segments, each prefixed by its length so that
    /// segment boundaries are unambiguous.
    pub fn of_parts(parts: &[&[u8]]) -> Self {
        let mut hasher = Sha256::new();
        for part in parts {
            hasher.update((part.len() as u64).to_le_bytes());
            hasher.update(part);
        }
        Self(format!("{}{}", Self::PREFIX, hex::encode(hasher.finalize())))
    }

    pub fn parse(s: &str) -> Option<Self> {
        let hex_part = s.strip_prefix(Self::PREFIX)?;
        if hex_part.len() == 64 && hex_part.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase()) {
            Some(Self(s.to_string()))
        } else {
            None
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Hex digest without the algorithm prefix; used as the blob file name.
    pub fn hex(&self) -> &str {
        &self.0[Self::PREFIX.len()..]
    }
}

impl fmt::Display for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Text => "text",
            Modality::Image => "image",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextChunk {
    pub chunk_id: ChunkId,
    pub order_index: usize,
    pub section_path: Vec<String>,
    pub text: String,
}

/// Content-addressed reference to an image blob stored at `blobs/<hex>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub hash: ContentHash,
}

impl ImageRef {
    pub fn for_bytes(bytes: &[u8]) -> Self {
        Self {
            hash: ContentHash::of_bytes(bytes),
        }
    }

    pub fn locator(&self) -> String {
        format!("blobs/{}", self.hash.hex())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageChunk {
    pub chunk_id: ChunkId,
    pub order_index: usize,
    pub caption: String,
    pub figure_label: Option<String>,
    pub image_ref: ImageRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Chunk {
    Text(TextChunk),
    Image(ImageChunk),
}

impl Chunk {
    pub fn id(&self) -> &ChunkId {
        match self {
            Chunk::Text(t) => &t.chunk_id,
            Chunk::Image(i) => &i.chunk_id,
        }
    }

    pub fn order_index(&self) -> usize {
        match self {
            Chunk::Text(t) => t.order_index,
            Chunk::Image(i) => i.order_index,
        }
    }

    pub fn modality(&self) -> Modality {
        match self {
            Chunk::Text(_) => Modality::Text,
            Chunk::Image(_) => Modality::Image,
        }
    }

    pub fn as_text(&self) -> Option<&TextChunk> {
        match self {
            Chunk::Text(t) => Some(t),
            Chunk::Image(_) => None,
        }
    }

    pub fn as_image(&self) -> Option<&ImageChunk> {
        match self {
            Chunk::Image(i) => Some(i),
            Chunk::Text(_) => None,
        }
    }

    /// Text shown to a reader: paragraph text, or the caption of an image.
    pub fn display_text(&self) -> &str {
        match self {
            Chunk::Text(t) => &t.text,
            Chunk::Image(i) => &i.caption,
        }
    }

    /// Key under which this chunk's embedding is cached. Image keys cover
    /// the blob hash and the caption, since both are embedded together.
    pub fn content_hash(&self) -> ContentHash {
        match self {
            Chunk::Text(t) => text_content_hash(&t.text),
            Chunk::Image(i) => image_content_hash(&i.image_ref, &i.caption),
        }
    }
}

pub fn text_content_hash(text: &str) -> ContentHash {
    ContentHash::of_parts(&[b"text", text.as_bytes()])
}

pub fn image_content_hash(image_ref: &ImageRef, caption: &str) -> ContentHash {
    ContentHash::of_parts(&[b"image", image_ref.hash.as_str().as_bytes(), caption.as_bytes()])
}

/// Immutable, validated interleaved document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedDocument {
    doc_id: String,
    source_name: String,
    chunks: Vec<Chunk>,
    n_text: usize,
    m_image: usize,
}

impl ParsedDocument {
    /// Builds a document, sorting chunks by `order_index` and checking that
    /// indices are exactly `0..N` and ids are unique.
    pub fn new(
        doc_id: impl Into<String>,
        source_name: impl Into<String>,
        mut chunks: Vec<Chunk>,
    ) -> Result<Self, DocError> {
        let doc_id = doc_id.into();
        if doc_id.is_empty() {
            return Err(DocError::Integrity("empty document id".into()));
        }
        if chunks.is_empty() {
            return Err(DocError::Integrity("no chunks".into()));
        }
        chunks.sort_by_key(Chunk::order_index);
        let mut ids = BTreeSet::new();
        for (expected, chunk) in chunks.iter().enumerate() {
            let order = chunk.order_index();
            if order != expected {
                let what = if order < expected { "duplicate" } else { "missing" };
                let at = if order < expected { order } else { expected };
                return Err(DocError::Integrity(format!("{what} order index {at}")));
            }
            if chunk.id().as_str().is_empty() {
                return Err(DocError::Integrity(format!("empty chunk id at order {order}")));
            }
            if !ids.insert(chunk.id().clone()) {
                return Err(DocError::Integrity(format!("duplicate chunk id {}", chunk.id())));
            }
            if let Chunk::Text(t) = chunk {
                if t.text.trim().is_empty() {
                    return Err(DocError::Integrity(format!("text chunk {} is blank", t.chunk_id)));
                }
                if t.section_path.iter().any(|h| h.is_empty()) {
                    return Err(DocError::Integrity(format!(
                        "text chunk {} has an empty section heading",
                        t.chunk_id
                    )));
                }
            }
        }
        let n_text = chunks.iter().filter(|c| c.modality() == Modality::Text).count();
        let m_image = chunks.len() - n_text;
        Ok(Self {
            doc_id,
            source_name: source_name.into(),
            chunks,
            n_text,
            m_image,
        })
    }

    pub fn doc_id(&self) -> &str {
        &self.doc_id
    }

    pub fn source_name(&self) -> &str {
        &self.source_name
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn n_text(&self) -> usize {
        self.n_text
    }

    pub fn m_image(&self) -> usize {
        self.m_image
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn chunk(&self, id: &ChunkId) -> Option<&Chunk> {
        self.chunks.iter().find(|c| c.id() == id)
    }

    pub fn text_chunks(&self) -> impl Iterator<Item = &TextChunk> {
        self.chunks.iter().filter_map(Chunk::as_text)
    }

    pub fn image_chunks(&self) -> impl Iterator<Item = &ImageChunk> {
        self.chunks.iter().filter_map(Chunk::as_image)
    }

    /// Section path of every chunk. Images carry no heading of their own and
    /// belong to the section of the closest preceding text chunk (the root
    /// section when none precedes them).
    pub fn section_of_chunks(&self) -> Vec<(&Chunk, &[String])> {
        let mut current: &[String] = &[];
        self.chunks
            .iter()
            .map(|c| {
                if let Chunk::Text(t) = c {
                    current = &t.section_path;
                }
                (c, current)
            })
            .collect()
    }

    /// Checks that every image blob resolves and hashes to its reference.
    pub fn verify_blobs(&self, blobs: &dyn BlobSource) -> Result<(), DocError> {
        for image in self.image_chunks() {
            blobs::fetch_verified(blobs, &image.image_ref)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn text(id: &str, order: usize, body: &str) -> Chunk {
        Chunk::Text(TextChunk {
            chunk_id: id.into(),
            order_index: order,
            section_path: vec![],
            text: body.into(),
        })
    }

    #[test]
    fn chunks_sorted_and_counted() {
        let img = Chunk::Image(ImageChunk {
            chunk_id: "i0".into(),
            order_index: 1,
            caption: String::new(),
            figure_label: None,
            image_ref: ImageRef::for_bytes(b"png"),
        });
        let doc = ParsedDocument::new("d", "d.pdf", vec![text("t1", 2, "b"), img, text("t0", 0, "a")]).unwrap();
        assert_eq!(doc.n_text(), 2);
        assert_eq!(doc.m_image(), 1);
        let orders: Vec<_> = doc.chunks().iter().map(Chunk::order_index).collect();
        assert_eq!(orders, vec![0, 1, 2]);
    }

    #[test]
    fn gaps_and_duplicates_rejected() {
        let err = ParsedDocument::new("d", "", vec![text("a", 0, "x"), text("b", 2, "y")]).unwrap_err();
        assert!(matches!(err, DocError::Integrity(m) if m.contains("missing")));
        let err = ParsedDocument::new("d", "", vec![text("a", 0, "x"), text("b", 0, "y")]).unwrap_err();
        assert!(matches!(err, DocError::Integrity(m) if m.contains("duplicate order")));
        let err = ParsedDocument::new("d", "", vec![text("a", 0, "x"), text("a", 1, "y")]).unwrap_err();
        assert!(matches!(err, DocError::Integrity(m) if m.contains("duplicate chunk id")));
        let err = ParsedDocument::new("d", "", vec![text("a", 0, "  \n")]).unwrap_err();
        assert!(matches!(err, DocError::Integrity(_)));
    }

    #[test]
    fn equal_blobs_equal_hashes() {
        assert_eq!(ImageRef::for_bytes(b"abc"), ImageRef::for_bytes(b"abc"));
        assert_ne!(ImageRef::for_bytes(b"abc"), ImageRef::for_bytes(b"abd"));
        let h = ContentHash::of_bytes(b"abc");
        assert_eq!(ContentHash::parse(h.as_str()), Some(h.clone()));
        assert!(ContentHash::parse("md5:00").is_none());
        assert_eq!(ImageRef { hash: h.clone() }.locator(), format!("blobs/{}", h.hex()));
    }

    #[test]
    fn images_inherit_preceding_section() {
        let mut t0 = text("t0", 1, "a");
        if let Chunk::Text(t) = &mut t0 {
            t.section_path = vec!["Method".into()];
        }
        let i_first = Chunk::Image(ImageChunk {
            chunk_id: "i0".into(),
            order_index: 0,
            caption: "c".into(),
            figure_label: None,
            image_ref: ImageRef::for_bytes(b"1"),
        });
        let i_after = Chunk::Image(ImageChunk {
            chunk_id: "i1".into(),
            order_index: 2,
            caption: "c".into(),
            figure_label: None,
            image_ref: ImageRef::for_bytes(b"2"),
        });
        let doc = ParsedDocument::new("d", "", vec![i_first, t0, i_after]).unwrap();
        let sections: Vec<_> = doc.section_of_chunks().into_iter().map(|(_, s)| s.to_vec()).collect();
        assert_eq!(sections, vec![vec![], vec!["Method".to_string()], vec!["Method".to_string()]]);
    }
}
