//! Binary embedding store.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        4 bytes  "TTEC"
//! version      u16
//! dimension    u32
//! count        u64
//! count × { key: 32-byte SHA-256 of (model_id, text), vector: dimension × f64 }
//! crc32        u32      over every preceding byte
//! ```
//!
//! Records are written in ascending key order so equal contents give equal
//! bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::{content_key, EmbedError, Embedder};

pub const CACHE_MAGIC: &[u8; 4] = b"TTEC";
pub const CACHE_VERSION: u16 = 1;

const HEADER_LEN: usize = 4 + 2 + 4 + 8;
const KEY_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingCache {
    dimension: usize,
    entries: BTreeMap<[u8; KEY_LEN], Vec<f64>>,
}

impl EmbeddingCache {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension,
            entries: BTreeMap::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, model_id: &str, text: &str, vector: Vec<f64>) -> Result<(), EmbedError> {
        self.insert_key(content_key(model_id, text), vector)
    }

    pub fn insert_key(&mut self, key: [u8; KEY_LEN], vector: Vec<f64>) -> Result<(), EmbedError> {
        if vector.len() != self.dimension {
            return Err(EmbedError::DimensionMismatch {
                expected: self.dimension,
                got: vector.len(),
            });
        }
        self.entries.insert(key, vector);
        Ok(())
    }

    pub fn get(&self, model_id: &str, text: &str) -> Result<&[f64], EmbedError> {
        let key = content_key(model_id, text);
        self.entries
            .get(&key)
            .map(Vec::as_slice)
            .ok_or_else(|| EmbedError::CacheMiss(hex(&key)))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(
            HEADER_LEN + self.entries.len() * (KEY_LEN + 8 * self.dimension) + 4,
        );
        buf.extend_from_slice(CACHE_MAGIC);
        buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.dimension as u32).to_le_bytes());
        buf.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (key, vector) in &self.entries {
            buf.extend_from_slice(key);
            for v in vector {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EmbedError> {
        let corrupt = |m: &str| EmbedError::CorruptCache(m.to_owned());
        if bytes.len() < HEADER_LEN + 4 {
            return Err(corrupt("file shorter than header"));
        }
        if &bytes[..4] != CACHE_MAGIC {
            return Err(corrupt("bad magic bytes"));
        }
        let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
        if version != CACHE_VERSION {
            return Err(EmbedError::CacheVersion {
                found: version,
                expected: CACHE_VERSION,
            });
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err(corrupt("checksum mismatch"));
        }
        let dimension = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(bytes[10..18].try_into().unwrap());
        let record = KEY_LEN + 8 * dimension;
        let expected = (count as u128) * (record as u128);
        if expected != (body.len() - HEADER_LEN) as u128 {
            return Err(corrupt("record count does not match file length"));
        }
        let mut cache = Self::new(dimension);
        for chunk in body[HEADER_LEN..].chunks_exact(record) {
            let key: [u8; KEY_LEN] = chunk[..KEY_LEN].try_into().unwrap();
            let vector = chunk[KEY_LEN..]
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            if cache.entries.insert(key, vector).is_some() {
                return Err(corrupt("duplicate key"));
            }
        }
        Ok(cache)
    }
}

/// Writes the cache through a sibling temp file and a rename.
pub fn write_cache(path: &Path, cache: &EmbeddingCache) -> Result<(), EmbedError> {
    let io = |e: std::io::Error| EmbedError::Io(format!("{}: {e}", path.display()));
    let tmp = path.with_extension("ttec.tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(&cache.to_bytes()).map_err(io)?;
        f.sync_all().map_err(io)?;
    }
    fs::rename(&tmp, path).map_err(io)
}

pub fn read_cache(path: &Path) -> Result<EmbeddingCache, EmbedError> {
    let bytes = fs::read(path).map_err(|e| EmbedError::Io(format!("{}: {e}", path.display())))?;
    EmbeddingCache::from_bytes(&bytes)
}

/// Serves vectors from a cache file; anything not in the file is a miss.
#[derive(Debug)]
pub struct FileCacheEmbedder {
    model_id: String,
    cache: EmbeddingCache,
}

impl FileCacheEmbedder {
    pub fn open(model_id: String, dimension: usize, path: &Path) -> Result<Self, EmbedError> {
        let cache = read_cache(path)?;
        Self::from_cache(model_id, dimension, cache)
    }

    pub fn from_cache(
        model_id: String,
        dimension: usize,
        cache: EmbeddingCache,
    ) -> Result<Self, EmbedError> {
        if cache.dimension() != dimension {
            return Err(EmbedError::DimensionMismatch {
                expected: dimension,
                got: cache.dimension(),
            });
        }
        Ok(Self { model_id, cache })
    }
}

impl Embedder for FileCacheEmbedder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn dimension(&self) -> usize {
        self.cache.dimension()
    }

    fn embed_raw(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
        texts
            .iter()
            .map(|t| self.cache.get(&self.model_id, t).map(<[f64]>::to_vec))
            .collect()
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
