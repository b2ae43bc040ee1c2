use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{EmbedError, EmbeddingVector};

/// Encoder output width used unless a store says otherwise.
pub const DEFAULT_DIM: usize = 768;

const MAGIC: &[u8; 4] = b"ZEB1";
const HEADER_LEN: usize = 12;

/// Embeddings keyed by ECG id or observation text, all of one dimension.
///
/// Records keep their insertion order so a store read from disk writes back
/// byte-for-byte.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    entries: IndexMap<String, EmbeddingVector>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreFormat {
    Binary,
    Jsonl,
}

impl StoreFormat {
    /// `.jsonl` means JSON Lines; anything else is the binary format.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") => StoreFormat::Jsonl,
            _ => StoreFormat::Binary,
        }
    }
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Result<Self, EmbedError> {
        if dim == 0 || dim > u32::MAX as usize {
            return Err(EmbedError::InvalidDim(dim));
        }
        Ok(Self {
            dim,
            entries: IndexMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, id: impl Into<String>, v: EmbeddingVector) -> Result<(), EmbedError> {
        let id = id.into();
        if v.dim() != self.dim {
            return Err(EmbedError::DimMismatch {
                expected: self.dim,
                found: v.dim(),
            });
        }
        if id.len() > u16::MAX as usize {
            return Err(EmbedError::IdTooLong(id.len()));
        }
        if self.entries.contains_key(&id) {
            return Err(EmbedError::DuplicateId(id));
        }
        self.entries.insert(id, v);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingVector> {
        self.entries.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &EmbeddingVector)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Read either format, detected from the first bytes.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EmbedError> {
        if bytes.starts_with(MAGIC) {
            read_store(bytes)
        } else if bytes.iter().find(|b| !b.is_ascii_whitespace()) == Some(&b'{') {
            read_jsonl(bytes)
        } else {
            Err(EmbedError::BadMagic)
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmbedError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EmbedError> {
        let path = path.as_ref();
        let bytes = match StoreFormat::from_path(path) {
            StoreFormat::Binary => write_store(self),
            StoreFormat::Jsonl => write_jsonl(self)?.into_bytes(),
        };
        std::fs::write(path, bytes)?;
        Ok(())
    }
}

/// Serialize to the `ZEB1` binary layout.
///
/// Header: `"ZEB1"`, record count (u32 LE), dim (u32 LE). Each record: id
/// length in bytes (u16 LE), UTF-8 id, then `dim` f32 LE values.
pub fn write_store(store: &EmbeddingStore) -> Vec<u8> {
    let record_len: usize =
        store.entries.keys().map(|k| 2 + k.len()).sum::<usize>() + store.len() * store.dim * 4;
    let mut out = Vec::with_capacity(HEADER_LEN + record_len);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    out.extend_from_slice(&(store.dim as u32).to_le_bytes());
    for (id, v) in &store.entries {
        out.extend_from_slice(&(id.len() as u16).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        for x in v.as_slice() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

/// Parse the `ZEB1` binary layout.
pub fn read_store(bytes: &[u8]) -> Result<EmbeddingStore, EmbedError> {
    if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
        return Err(EmbedError::BadMagic);
    }
    let mut cursor = Cursor { bytes, pos: 4 };
    let count = cursor.u32("header")? as usize;
    let dim = cursor.u32("header")? as usize;
    let mut store = EmbeddingStore::new(dim)?;
    for record in 0..count {
        let what = format!("record {record} of {count}");
        let id_len = cursor.u16(&what)? as usize;
        let id = std::str::from_utf8(cursor.take(id_len, &what)?)
            .map_err(|_| EmbedError::InvalidUtf8)?
            .to_string();
        let raw = cursor.take(dim * 4, &what)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        store.insert(id, EmbeddingVector::new(values))?;
    }
    if cursor.pos != bytes.len() {
        return Err(EmbedError::TrailingData(bytes.len() - cursor.pos));
    }
    Ok(store)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], EmbedError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                EmbedError::TruncatedFile(format!(
                    "{what}: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ))
            })?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u16(&mut self, what: &str) -> Result<u16, EmbedError> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32, EmbedError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[derive(Serialize, Deserialize)]
struct JsonlHeader {
    zeb_jsonl: u32,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct JsonlRecord {
    id: String,
    values: Vec<f32>,
}

/// Serialize as JSON Lines: a header line then one record per line.
pub fn write_jsonl(store: &EmbeddingStore) -> Result<String, EmbedError> {
    let mut out = serde_json::to_string(&JsonlHeader {
        zeb_jsonl: 1,
        dim: store.dim,
    })?;
    out.push('\n');
    for (id, v) in &store.entries {
        out.push_str(&serde_json::to_string(&JsonlRecord {
            id: id.clone(),
            values: v.as_slice().to_vec(),
        })?);
        out.push('\n');
    }
    Ok(out)
}

fn read_jsonl(bytes: &[u8]) -> Result<EmbeddingStore, EmbedError> {
    let text = std::str::from_utf8(bytes).map_err(|_| EmbedError::InvalidUtf8)?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or(EmbedError::BadMagic)?;
    let header: JsonlHeader = serde_json::from_str(first).map_err(|_| EmbedError::BadMagic)?;
    if header.zeb_jsonl != 1 {
        return Err(EmbedError::BadMagic);
    }
    let mut store = EmbeddingStore::new(header.dim)?;
    for (n, line) in lines {
        let record: JsonlRecord =
            serde_json::from_str(line).map_err(|e| EmbedError::Malformed {
                line: n + 1,
                message: e.to_string(),
            })?;
        store.insert(record.id, EmbeddingVector::new(record.values))?;
    }
    Ok(store)
}
