//! Step embeddings and cosine similarity.
//!
//! The default backend is a deterministic signed feature-hashing embedder
//! over word unigrams and bigrams. A remote encoder can be plugged in
//! behind the same trait; vectors are L2-normalized either way.

use crate::error::{Error, Result};

pub const DEFAULT_DIMENSION: usize = 256;

/// Unit-norm vector of configured dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    /// Normalize `values` to unit L2 norm. Errors on the zero vector.
    pub fn from_values(mut values: Vec<f64>) -> Result<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroVector {
                text: String::new(),
            });
        }
        for v in &mut values {
            *v /= norm;
        }
        Ok(Embedding { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Inner product of unit vectors, clamped to [-1, 1].
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let dot: f64 = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| x * y)
        .sum();
    Ok(dot.clamp(-1.0, 1.0))
}

/// Embedding backend abstraction used by tree construction.
pub trait Embedder: Sync {
    fn embed(&self, text: &str) -> Result<Embedding>;
    fn dim(&self) -> usize;
}

/// Deterministic local embedder: signed hashing of word unigrams and
/// bigrams into `d` buckets.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    d: usize,
}

impl HashingEmbedder {
    pub fn new(d: usize) -> Result<Self> {
        if d < 8 {
            return Err(Error::BadDimension(d));
        }
        Ok(HashingEmbedder { d })
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        HashingEmbedder {
            d: DEFAULT_DIMENSION,
        }
    }
}

// FNV-1a; std's DefaultHasher is not stable across releases.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl Embedder for HashingEmbedder {
    fn embed(&self, text: &str) -> Result<Embedding> {
        let lower = text.to_lowercase();
        let tokens: Vec<&str> = lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .collect();
        if tokens.is_empty() {
            return Err(Error::ZeroVector { text: text.into() });
        }
        let mut values = vec![0.0f64; self.d];
        let mut add = |feature: &str| {
            let h = fnv1a(feature.as_bytes());
            let bucket = (h % self.d as u64) as usize;
            let sign = if (h >> 63) & 1 == 1 { -1.0 } else { 1.0 };
            values[bucket] += sign;
        };
        for t in &tokens {
            add(t);
        }
        for pair in tokens.windows(2) {
            add(&format!("{}\u{1f}{}", pair[0], pair[1]));
        }
        Embedding::from_values(values).map_err(|_| Error::ZeroVector { text: text.into() })
    }

    fn dim(&self) -> usize {
        self.d
    }
}

/// Wire-level remote embedding interface; see `remote` for the HTTP client.
pub trait EmbeddingBackend {
    fn embed_raw(&self, text: &str) -> Result<Vec<f64>>;
}

/// Remote embedder adapter: fetches a provider vector, checks the
/// dimension, and L2-normalizes locally.
pub struct RemoteEmbedder<B: EmbeddingBackend + Sync> {
    backend: B,
    d: usize,
}

impl<B: EmbeddingBackend + Sync> RemoteEmbedder<B> {
    pub fn new(backend: B, d: usize) -> Result<Self> {
        if d < 8 {
            return Err(Error::BadDimension(d));
        }
        Ok(RemoteEmbedder { backend, d })
    }
}

impl<B: EmbeddingBackend + Sync> Embedder for RemoteEmbedder<B> {
    fn embed(&self, text: &str) -> Result<Embedding> {
        let raw = self.backend.embed_raw(text)?;
        if raw.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: raw.len(),
            });
        }
        Embedding::from_values(raw)
    }

    fn dim(&self) -> usize {
        self.d
    }
}
