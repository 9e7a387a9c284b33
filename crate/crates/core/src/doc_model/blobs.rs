use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{ContentHash, DocError, ImageRef};

/// Read access to image blobs by content hash.
pub trait BlobSource: Send + Sync {
    fn get(&self, hash: &ContentHash) -> Option<Vec<u8>>;
}

/// Blobs stored as `<root>/blobs/<hex>`, the layout beside a document file.
#[derive(Debug, Clone)]
pub struct DirBlobs {
    root: PathBuf,
}

impl DirBlobs {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, hash: &ContentHash) -> PathBuf {
        self.root.join("blobs").join(hash.hex())
    }

    /// Stores `bytes` under their content hash; existing blobs are left as is.
    pub fn put(&self, bytes: &[u8]) -> std::io::Result<ContentHash> {
        let hash = ContentHash::of_bytes(bytes);
        let path = self.path_for(&hash);
        if !path.exists() {
            fs::create_dir_all(path.parent().expect("blob path has a parent"))?;
            fs::write(&path, bytes)?;
        }
        Ok(hash)
    }
}

impl BlobSource for DirBlobs {
    fn get(&self, hash: &ContentHash) -> Option<Vec<u8>> {
        fs::read(self.path_for(hash)).ok()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MemoryBlobs {
    blobs: BTreeMap<ContentHash, Vec<u8>>,
}

impl MemoryBlobs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, bytes: Vec<u8>) -> ContentHash {
        let hash = ContentHash::of_bytes(&bytes);
        self.blobs.insert(hash.clone(), bytes);
        hash
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ContentHash, &Vec<u8>)> {
        self.blobs.iter()
    }

    pub fn len(&self) -> usize {
        self.blobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blobs.is_empty()
    }
}

impl BlobSource for MemoryBlobs {
    fn get(&self, hash: &ContentHash) -> Option<Vec<u8>> {
        self.blobs.get(hash).cloned()
    }
}

pub(crate) fn fetch_verified(blobs: &dyn BlobSource, image_ref: &ImageRef) -> Result<Vec<u8>, DocError> {
    let bytes = blobs
        .get(&image_ref.hash)
        .ok_or_else(|| DocError::MissingBlob(image_ref.hash.clone()))?;
    if ContentHash::of_bytes(&bytes) != image_ref.hash {
        return Err(DocError::MissingBlob(image_ref.hash.clone()));
    }
    Ok(bytes)
}

/// Fetches a blob and checks its hash.
pub fn fetch_blob(blobs: &dyn BlobSource, image_ref: &ImageRef) -> Result<Vec<u8>, DocError> {
    fetch_verified(blobs, image_ref)
}
