//! On-disk layout:
//!
//! ```text
//! <root>/documents/<doc_id>/document.xml
//! <root>/documents/<doc_id>/blobs/<hex>
//! <root>/caches/<provider>.wkec
//! <root>/corpora/<name>.jsonl
//! <root>/adapters/<name>.wkad
//! <root>/staging/            scratch space for atomic writes
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::doc_model::{read_document, write_document, BlobSource, DirBlobs, ParsedDocument};
use crate::embedding::ProviderId;

use super::EngineError;

pub const DOCUMENT_FILE: &str = "document.xml";

static STAGING_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Names used as directory or file stems: ASCII letters, digits, `.`, `_`
/// and `-`, not starting with `.`, at most 128 bytes.
pub fn check_name(kind: &str, name: &str) -> Result<(), EngineError> {
    let ok = !name.is_empty()
        && name.len() <= 128
        && !name.starts_with('.')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'));
    if ok {
        Ok(())
    } else {
        Err(EngineError::Invalid(format!("{kind} name `{name}` must use only [A-Za-z0-9._-]")))
    }
}

/// File stem for a provider id; `/` and other separators become `_`.
pub fn provider_file_stem(id: &ProviderId) -> String {
    id.as_str()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-') { c } else { '_' })
        .collect()
}

#[derive(Debug, Clone)]
pub struct DocumentStore {
    root: PathBuf,
}

impl DocumentStore {
    /// Creates the directory tree if needed and checks that it is writable.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, EngineError> {
        let store = Self { root: root.into() };
        for dir in [store.documents_dir(), store.caches_dir(), store.corpora_dir(), store.adapters_dir(), store.staging_dir()] {
            fs::create_dir_all(&dir)
                .map_err(|e| EngineError::Config(format!("store root {} is not writable: {e}", store.root.display())))?;
        }
        let probe = store.staging_dir().join(format!(".probe-{}", std::process::id()));
        fs::write(&probe, b"")
            .and_then(|_| fs::remove_file(&probe))
            .map_err(|e| EngineError::Config(format!("store root {} is not writable: {e}", store.root.display())))?;
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn documents_dir(&self) -> PathBuf {
        self.root.join("documents")
    }

    pub fn caches_dir(&self) -> PathBuf {
        self.root.join("caches")
    }

    pub fn corpora_dir(&self) -> PathBuf {
        self.root.join("corpora")
    }

    pub fn adapters_dir(&self) -> PathBuf {
        self.root.join("adapters")
    }

    pub fn staging_dir(&self) -> PathBuf {
        self.root.join("staging")
    }

    pub fn doc_dir(&self, doc_id: &str) -> PathBuf {
        self.documents_dir().join(doc_id)
    }

    pub fn doc_blobs(&self, doc_id: &str) -> DirBlobs {
        DirBlobs::new(self.doc_dir(doc_id))
    }

    pub fn cache_path(&self, provider: &ProviderId) -> PathBuf {
        self.caches_dir().join(format!("{}.wkec", provider_file_stem(provider)))
    }

    pub fn corpus_path(&self, name: &str) -> Result<PathBuf, EngineError> {
        check_name("corpus", name)?;
        Ok(self.corpora_dir().join(format!("{name}.jsonl")))
    }

    pub fn adapter_path(&self, name: &str) -> Result<PathBuf, EngineError> {
        check_name("adapter", name)?;
        Ok(self.adapters_dir().join(format!("{name}.wkad")))
    }

    pub fn doc_ids(&self) -> Result<Vec<String>, EngineError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(self.documents_dir())? {
            let entry = entry?;
            if entry.path().join(DOCUMENT_FILE).is_file() {
                if let Some(name) = entry.file_name().to_str() {
                    ids.push(name.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn load_document(&self, doc_id: &str) -> Result<ParsedDocument, EngineError> {
        check_name("document", doc_id)?;
        let path = self.doc_dir(doc_id).join(DOCUMENT_FILE);
        if !path.is_file() {
            return Err(EngineError::NotFound(format!("document {doc_id}")));
        }
        Ok(read_document(&path)?)
    }

    /// Writes the document and its blobs under a staging directory, then
    /// swaps it into place with a rename so readers never see a partial copy.
    pub fn write_document(&self, doc: &ParsedDocument, blobs: &dyn BlobSource) -> Result<(), EngineError> {
        check_name("document", doc.doc_id())?;
        let n = STAGING_COUNTER.fetch_add(1, Ordering::Relaxed);
        let stage = self.staging_dir().join(format!("{}-{}-{n}", doc.doc_id(), std::process::id()));
        let result = (|| {
            fs::create_dir_all(&stage)?;
            write_document(doc, blobs, &stage.join(DOCUMENT_FILE))?;
            let target = self.doc_dir(doc.doc_id());
            if target.exists() {
                let old = self.staging_dir().join(format!("old-{}-{}-{n}", doc.doc_id(), std::process::id()));
                fs::rename(&target, &old)?;
                fs::rename(&stage, &target)?;
                fs::remove_dir_all(&old)?;
            } else {
                fs::rename(&stage, &target)?;
            }
            Ok::<(), EngineError>(())
        })();
        if result.is_err() && stage.exists() {
            let _ = fs::remove_dir_all(&stage);
        }
        result
    }
}
