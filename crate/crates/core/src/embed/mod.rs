//! Frozen text embeddings: the builtin encoder, the `EMBT` table format, and
//! corpus encoding.

mod builtin;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use builtin::{tokenize, BuiltinEncoder, BuiltinEncoderSpec};

use crate::dataset::Dataset;
use crate::io::IoError;

pub const MAGIC: &[u8; 4] = b"EMBT";
pub const VERSION: u32 = 1;
/// Magic, version, dim and count.
pub const HEADER_BYTES: usize = 4 + 4 + 4 + 8;
pub const NORM_TOLERANCE: f64 = 1e-5;
pub const ACTION_PREFIX: &str = "act:";

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("malformed embedding file: {0}")]
    Format(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("duplicate embedding id `{0}`")]
    DuplicateId(String),
    #[error("no text available for id `{0}`")]
    MissingText(String),
    #[error("embedding for `{0}` has zero norm")]
    ZeroVector(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

pub fn action_key(action: &str) -> String {
    format!("{ACTION_PREFIX}{action}")
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableMeta {
    pub encoder: String,
    pub created_at: String,
}

/// Id → unit-norm `f32` vector map, in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    index: HashMap<String, usize>,
    pub meta: TableMeta,
}

fn normalized(id: &str, mut v: Vec<f32>) -> Result<Vec<f32>, EmbedError> {
    let norm = v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(EmbedError::ZeroVector(id.to_string()));
    }
    if (norm - 1.0).abs() > NORM_TOLERANCE {
        for x in &mut v {
            *x = (f64::from(*x) / norm) as f32;
        }
    }
    Ok(v)
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
            meta: TableMeta::default(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Inserts a vector, L2-normalizing it unless it is already unit norm
    /// within tolerance.
    pub fn insert(&mut self, id: impl Into<String>, v: Vec<f32>) -> Result<(), EmbedError> {
        let id = id.into();
        if v.len() != self.dim {
            return Err(EmbedError::DimensionMismatch {
                expected: self.dim,
                found: v.len(),
            });
        }
        if self.index.contains_key(&id) {
            return Err(EmbedError::DuplicateId(id));
        }
        let v = normalized(&id, v)?;
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(&v);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index
            .get(id)
            .map(|&i| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.ids
            .iter()
            .enumerate()
            .map(move |(i, id)| (id.as_str(), &self.data[i * self.dim..(i + 1) * self.dim]))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, EmbedError> {
        let body: usize = self.ids.iter().map(|id| 2 + id.len()).sum();
        let mut out = Vec::with_capacity(HEADER_BYTES + body + self.data.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let dim = u32::try_from(self.dim)
            .map_err(|_| EmbedError::Format(format!("dim {} exceeds u32", self.dim)))?;
        out.extend_from_slice(&dim.to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        for (id, v) in self.iter() {
            let len = u16::try_from(id.len())
                .map_err(|_| EmbedError::Format(format!("id `{id}` longer than 65535 bytes")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EmbedError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(EmbedError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(EmbedError::Format(format!("unsupported version {version}")));
        }
        let dim = r.u32()? as usize;
        let count = r.u64()?;
        let mut t = EmbeddingTable::new(dim);
        for _ in 0..count {
            let len = r.u16()? as usize;
            let id = std::str::from_utf8(r.take(len)?)
                .map_err(|_| EmbedError::Format("id is not UTF-8".into()))?
                .to_string();
            let raw = r.take(dim * 4)?;
            let v = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            t.insert(id, v).map_err(|e| match e {
                EmbedError::DuplicateId(id) => EmbedError::Format(format!("duplicate id `{id}`")),
                other => other,
            })?;
        }
        if r.pos != bytes.len() {
            return Err(EmbedError::Format(format!(
                "{} trailing bytes after {count} entries",
                bytes.len() - r.pos
            )));
        }
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<(), EmbedError> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| IoError::io(path, e).into())
    }

    pub fn load(path: &Path) -> Result<Self, EmbedError> {
        let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn load_with_dim(path: &Path, dim: usize) -> Result<Self, EmbedError> {
        let t = Self::load(path)?;
        if t.dim != dim {
            return Err(EmbedError::DimensionMismatch {
                expected: dim,
                found: t.dim,
            });
        }
        Ok(t)
    }

    /// SHA-256 of the serialized table; used to prove nothing mutated it.
    pub fn checksum(&self) -> String {
        crate::io::sha256_hex(&self.to_bytes().unwrap_or_default())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], EmbedError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| EmbedError::Format(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16, EmbedError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, EmbedError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, EmbedError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Encodes `(id, text)` pairs in parallel, keeping input order.
pub fn encode_all(
    encoder: &BuiltinEncoder,
    items: &[(String, String)],
) -> Result<EmbeddingTable, EmbedError> {
    let vecs: Vec<Vec<f32>> = items.par_iter().map(|(_, t)| encoder.encode(t)).collect();
    let mut table = EmbeddingTable::new(encoder.spec().dim);
    for ((id, _), v) in items.iter().zip(vecs) {
        table.insert(id.clone(), v)?;
    }
    table.meta.encoder = format!("builtin-ngram-{}", encoder.spec().dim);
    Ok(table)
}

/// `(id, text)` pairs for every distinct state (sorted by id) followed by
/// every distinct action (keyed `act:<id>`, sorted).
pub fn corpus_items(ds: &Dataset) -> Result<Vec<(String, String)>, EmbedError> {
    let mut states: BTreeMap<crate::world::StateId, &str> = BTreeMap::new();
    for s in &ds.states {
        states.entry(s.id).or_insert(&s.text);
    }
    for t in &ds.transitions {
        for id in [t.s, t.s_next] {
            if !states.contains_key(&id) {
                return Err(EmbedError::MissingText(id.to_string()));
            }
        }
    }
    let mut actions: BTreeMap<String, &str> = BTreeMap::new();
    for a in &ds.actions {
        actions.entry(action_key(&a.id)).or_insert(&a.id);
    }
    let mut items: Vec<(String, String)> = states
        .into_iter()
        .map(|(id, t)| (id.to_string(), t.to_string()))
        .collect();
    items.extend(actions.into_iter().map(|(k, t)| (k, t.to_string())));
    Ok(items)
}

/// `(goal:<domain>/<problem>, text)` pairs, sorted by key.
pub fn goal_items(ds: &Dataset) -> Vec<(String, String)> {
    let goals: BTreeMap<&str, &str> = ds.goals.iter().map(|g| (g.id.as_str(), g.text.as_str())).collect();
    goals
        .into_iter()
        .map(|(k, t)| (k.to_string(), t.to_string()))
        .collect()
}

pub fn embed_corpus(ds: &Dataset, encoder: &BuiltinEncoder) -> Result<EmbeddingTable, EmbedError> {
    encode_all(encoder, &corpus_items(ds)?)
}

/// Every id the model needs must be present in an externally produced table.
pub fn check_coverage(ds: &Dataset, table: &EmbeddingTable) -> Result<(), EmbedError> {
    for (id, _) in corpus_items(ds)? {
        if !table.contains(&id) {
            return Err(EmbedError::MissingText(id));
        }
    }
    Ok(())
}
