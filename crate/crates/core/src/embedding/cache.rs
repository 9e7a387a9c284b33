//! Persistent embedding cache keyed by `(provider_id, content_hash)`.
//!
//! File layout (little-endian):
//!
//! ```text
//! magic "WKEC" | version u16 | record count u64 | records...
//! record: provider_id (u32 len + utf8) | content_hash (u32 len + utf8)
//!         | chunk_id (u32 len + utf8) | modality u8 (0 text, 1 image)
//!         | dims u32 | dims x f32
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use parking_lot::RwLock;

use super::{EmbedError, EmbeddingRecord, EmbeddingVector, ProviderId, UNIT_NORM_TOLERANCE};
use crate::doc_model::{ChunkId, ContentHash, Modality};

pub const CACHE_MAGIC: &[u8; 4] = b"WKEC";
pub const CACHE_VERSION: u16 = 1;

type Key = (ProviderId, ContentHash);

#[derive(Debug, Default)]
struct Inner {
    dims: Option<usize>,
    records: BTreeMap<Key, Arc<EmbeddingRecord>>,
}

/// Many readers, serialized writers. Records are shared behind `Arc`, so a
/// reader racing a writer sees either no record or a complete one.
#[derive(Debug, Default)]
pub struct EmbeddingCache {
    inner: RwLock<Inner>,
}

impl EmbeddingCache {
    /// Cache whose records must all have `dims` components.
    pub fn new(dims: usize) -> Self {
        Self {
            inner: RwLock::new(Inner {
                dims: Some(dims),
                records: BTreeMap::new(),
            }),
        }
    }

    /// Cache that adopts the dims of the first record put into it.
    pub fn untyped() -> Self {
        Self::default()
    }

    pub fn dims(&self) -> Option<usize> {
        self.inner.read().dims
    }

    pub fn len(&self) -> usize {
        self.inner.read().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, provider_id: &ProviderId, content_hash: &ContentHash) -> Option<Arc<EmbeddingRecord>> {
        self.inner
            .read()
            .records
            .get(&(provider_id.clone(), content_hash.clone()))
            .cloned()
    }

    pub fn contains(&self, provider_id: &ProviderId, content_hash: &ContentHash) -> bool {
        self.get(provider_id, content_hash).is_some()
    }

    /// Inserts or replaces the record under its key.
    pub fn put(&self, record: EmbeddingRecord) -> Result<(), EmbedError> {
        if record.provider_id.as_str().is_empty() {
            return Err(EmbedError::InvalidRecord("empty provider id".into()));
        }
        let norm = record.vector.norm();
        if (norm - 1.0).abs() >= UNIT_NORM_TOLERANCE {
            return Err(EmbedError::InvalidRecord(format!("vector norm {norm} is not 1")));
        }
        let mut inner = self.inner.write();
        match inner.dims {
            Some(d) if d != record.vector.dims() => {
                return Err(EmbedError::Dims {
                    left: d,
                    right: record.vector.dims(),
                })
            }
            Some(_) => {}
            None => inner.dims = Some(record.vector.dims()),
        }
        let key = (record.provider_id.clone(), record.content_hash.clone());
        inner.records.insert(key, Arc::new(record));
        Ok(())
    }

    /// Inserts all records or none.
    pub fn put_all(&self, records: Vec<EmbeddingRecord>) -> Result<(), EmbedError> {
        let staged = EmbeddingCache {
            inner: RwLock::new(Inner {
                dims: self.dims(),
                records: BTreeMap::new(),
            }),
        };
        for r in &records {
            staged.put(r.clone())?;
        }
        let staged = staged.inner.into_inner();
        let mut inner = self.inner.write();
        if inner.dims.is_none() {
            inner.dims = staged.dims;
        }
        inner.records.extend(staged.records);
        Ok(())
    }

    pub fn records(&self) -> Vec<Arc<EmbeddingRecord>> {
        self.inner.read().records.values().cloned().collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let inner = self.inner.read();
        let mut out = Vec::new();
        out.extend_from_slice(CACHE_MAGIC);
        out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        out.extend_from_slice(&(inner.records.len() as u64).to_le_bytes());
        for r in inner.records.values() {
            put_str(&mut out, r.provider_id.as_str());
            put_str(&mut out, r.content_hash.as_str());
            put_str(&mut out, r.chunk_id.as_str());
            out.push(match r.modality {
                Modality::Text => 0,
                Modality::Image => 1,
            });
            out.extend_from_slice(&(r.vector.dims() as u32).to_le_bytes());
            for v in r.vector.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EmbedError> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != CACHE_MAGIC {
            return Err(EmbedError::CacheFormat("bad magic".into()));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != CACHE_VERSION {
            return Err(EmbedError::CacheVersion {
                found: version,
                expected: CACHE_VERSION,
            });
        }
        let count = u64::from_le_bytes(r.array()?);
        let cache = EmbeddingCache::untyped();
        for i in 0..count {
            let provider_id = ProviderId::new(r.string()?);
            let hash_text = r.string()?;
            let content_hash = ContentHash::parse(&hash_text)
                .ok_or_else(|| EmbedError::CacheFormat(format!("record {i}: bad content hash")))?;
            let chunk_id = ChunkId::new(r.string()?);
            let modality = match r.take(1)?[0] {
                0 => Modality::Text,
                1 => Modality::Image,
                m => return Err(EmbedError::CacheFormat(format!("record {i}: bad modality {m}"))),
            };
            let dims = u32::from_le_bytes(r.array()?) as usize;
            let raw = r.take(dims.checked_mul(4).ok_or_else(|| EmbedError::CacheFormat("dims overflow".into()))?)?;
            let values: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let vector = EmbeddingVector::from_unit(values)
                .map_err(|m| EmbedError::CacheFormat(format!("record {i}: {m}")))?;
            cache
                .put(EmbeddingRecord {
                    chunk_id,
                    modality,
                    content_hash,
                    provider_id,
                    vector,
                })
                .map_err(|e| EmbedError::CacheFormat(format!("record {i}: {e}")))?;
        }
        if r.pos != bytes.len() {
            return Err(EmbedError::CacheFormat("trailing bytes".into()));
        }
        if cache.len() as u64 != count {
            return Err(EmbedError::CacheFormat("duplicate keys".into()));
        }
        Ok(cache)
    }

    /// Writes atomically (temporary file, then rename).
    pub fn persist(&self, path: &Path) -> Result<(), EmbedError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EmbedError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], EmbedError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| EmbedError::CacheFormat(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], EmbedError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn string(&mut self) -> Result<String, EmbedError> {
        let len = u32::from_le_bytes(self.array()?) as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| EmbedError::CacheFormat("non-utf8 key".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(provider: &str, text: &str, values: &[f64]) -> EmbeddingRecord {
        EmbeddingRecord {
            chunk_id: ChunkId::new("c"),
            modality: Modality::Text,
            content_hash: crate::doc_model::text_content_hash(text),
            provider_id: ProviderId::new(provider),
            vector: EmbeddingVector::normalized(values).unwrap(),
        }
    }

    #[test]
    fn map_laws() {
        let cache = EmbeddingCache::new(2);
        let r = record("p", "x", &[1.0, 2.0]);
        assert!(cache.get(&r.provider_id, &r.content_hash).is_none());
        cache.put(r.clone()).unwrap();
        assert_eq!(*cache.get(&r.provider_id, &r.content_hash).unwrap(), r);
        // same content under another provider is a different key
        assert!(cache.get(&ProviderId::new("q"), &r.content_hash).is_none());
    }

    #[test]
    fn dims_fixed_per_cache() {
        let cache = EmbeddingCache::untyped();
        cache.put(record("p", "x", &[1.0, 2.0])).unwrap();
        assert!(matches!(cache.put(record("p", "y", &[1.0, 2.0, 3.0])), Err(EmbedError::Dims { .. })));
    }

    #[test]
    fn corrupt_and_versioned_files() {
        let cache = EmbeddingCache::new(2);
        cache.put(record("p", "x", &[1.0, 2.0])).unwrap();
        let bytes = cache.to_bytes();
        assert!(matches!(EmbeddingCache::from_bytes(&bytes[..bytes.len() - 1]), Err(EmbedError::CacheFormat(_))));
        assert!(matches!(EmbeddingCache::from_bytes(b"NOPE"), Err(EmbedError::CacheFormat(_))));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(
            EmbeddingCache::from_bytes(&v2),
            Err(EmbedError::CacheVersion { found: 2, expected: 1 })
        ));
        let mut trailing = bytes;
        trailing.push(0);
        assert!(matches!(EmbeddingCache::from_bytes(&trailing), Err(EmbedError::CacheFormat(_))));
    }

    #[test]
    fn put_all_is_atomic() {
        let cache = EmbeddingCache::new(2);
        let good = record("p", "x", &[1.0, 0.0]);
        let bad = record("p", "y", &[1.0, 0.0, 0.0]);
        assert!(cache.put_all(vec![good, bad]).is_err());
        assert!(cache.is_empty());
    }

    #[test]
    fn concurrent_readers_never_see_torn_records() {
        let cache = Arc::new(EmbeddingCache::new(64));
        let r = record("p", "x", &(1..=64).map(f64::from).collect::<Vec<_>>());
        let key = (r.provider_id.clone(), r.content_hash.clone());
        std::thread::scope(|s| {
            for _ in 0..4 {
                let cache = cache.clone();
                let key = key.clone();
                let expected = r.clone();
                s.spawn(move || {
                    for _ in 0..2000 {
                        if let Some(got) = cache.get(&key.0, &key.1) {
                            assert_eq!(*got, expected);
                        }
                    }
                });
            }
            cache.put(r.clone()).unwrap();
        });
    }
}
