//! Text embedding providers.
//!
//! [`TrigramProvider`] is the offline default: character trigrams of the
//! normalized text, padded with one space on each side, are hashed with
//! 64-bit FNV-1a into a fixed number of buckets and the count vector is
//! L2-normalized. [`RemoteEmbeddingProvider`] calls an HTTP batch endpoint and
//! caches vectors by content hash.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::retry::{Attempt, RetryPolicy};
use crate::types::normalize_label;

pub const FALLBACK_DIMENSION: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbeddingError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("provider returned dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding contains non-finite values")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn scaled(&self, c: f64) -> Result<Self, EmbeddingError> {
        Self::new(self.values.iter().map(|v| v * c).collect())
    }
}

pub trait EmbeddingProvider: Send + Sync + std::fmt::Debug {
    fn name(&self) -> &str;
    fn dimension(&self) -> usize;
    /// Embeds every text; callers guarantee none is blank.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError>;
}

pub fn embed_text(
    provider: &dyn EmbeddingProvider,
    text: &str,
) -> Result<EmbeddingVector, EmbeddingError> {
    if text.trim().is_empty() {
        return Err(EmbeddingError::EmptyText);
    }
    let mut out = provider.embed_batch(&[text])?;
    let v = out
        .pop()
        .ok_or_else(|| EmbeddingError::ProviderUnavailable("empty batch reply".into()))?;
    if v.dimension() != provider.dimension() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: provider.dimension(),
            got: v.dimension(),
        });
    }
    Ok(v)
}

pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Deterministic hashed character-trigram embedding.
#[derive(Debug, Clone)]
pub struct TrigramProvider {
    dimension: usize,
}

impl Default for TrigramProvider {
    fn default() -> Self {
        Self::new(FALLBACK_DIMENSION)
    }
}

impl TrigramProvider {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        Self { dimension }
    }

    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let padded: Vec<char> = format!(" {} ", normalize_label(text)).chars().collect();
        let mut counts = vec![0.0f64; self.dimension];
        let mut buf = String::with_capacity(12);
        for w in padded.windows(3) {
            buf.clear();
            buf.extend(w);
            let bucket = (fnv1a64(buf.as_bytes()) % self.dimension as u64) as usize;
            counts[bucket] += 1.0;
        }
        let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 0.0 {
            counts.iter_mut().for_each(|c| *c /= norm);
        }
        counts
    }
}

impl EmbeddingProvider for TrigramProvider {
    fn name(&self) -> &str {
        "trigram"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        texts
            .iter()
            .map(|t| EmbeddingVector::new(self.embed_one(t)))
            .collect()
    }
}

type ContentHash = [u8; 32];

fn content_hash(text: &str) -> ContentHash {
    Sha256::digest(text.as_bytes()).into()
}

/// Content-hash keyed vector cache, optionally persisted to a binary file.
///
/// File layout is a sequence of entries: 32-byte SHA-256 of the text, `u32`
/// little-endian dimension, then `dimension` little-endian `f64` values.
#[derive(Debug, Default)]
pub struct EmbeddingCache {
    entries: RwLock<HashMap<ContentHash, EmbeddingVector>>,
    path: Option<PathBuf>,
    file_lock: Mutex<()>,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut entries = HashMap::new();
        match fs::read(&path) {
            Ok(bytes) => {
                let mut rest = bytes.as_slice();
                while rest.len() >= 36 {
                    let hash: ContentHash = rest[..32].try_into().unwrap();
                    let dim = u32::from_le_bytes(rest[32..36].try_into().unwrap()) as usize;
                    let end = 36 + dim * 8;
                    if rest.len() < end {
                        break;
                    }
                    let values = rest[36..end]
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    if let Ok(v) = EmbeddingVector::new(values) {
                        entries.insert(hash, v);
                    }
                    rest = &rest[end..];
                }
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(e),
        }
        Ok(Self {
            entries: RwLock::new(entries),
            path: Some(path),
            file_lock: Mutex::new(()),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, text: &str) -> Option<EmbeddingVector> {
        self.entries.read().get(&content_hash(text)).cloned()
    }

    pub fn insert(&self, text: &str, vector: EmbeddingVector) -> io::Result<()> {
        let hash = content_hash(text);
        {
            let mut entries = self.entries.write();
            if entries.contains_key(&hash) {
                return Ok(());
            }
            entries.insert(hash, vector.clone());
        }
        if let Some(path) = &self.path {
            let _guard = self.file_lock.lock();
            let mut buf = Vec::with_capacity(36 + vector.dimension() * 8);
            buf.extend_from_slice(&hash);
            buf.extend_from_slice(&(vector.dimension() as u32).to_le_bytes());
            for v in vector.values() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            f.write_all(&buf)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteEmbeddingConfig {
    pub url: String,
    #[serde(default)]
    pub model: String,
    #[serde(default)]
    pub auth_token: Option<String>,
    pub dimension: usize,
    #[serde(default)]
    pub cache_path: Option<PathBuf>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
}

fn default_timeout_secs() -> u64 {
    30
}

#[derive(Serialize)]
struct EmbedRequestBody<'a> {
    model: &'a str,
    input: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponseBody {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f64>,
}

/// HTTP batch embedding client (`{"model", "input": [..]}` in,
/// `{"data": [{"index", "embedding"}]}` out).
#[derive(Debug)]
pub struct RemoteEmbeddingProvider {
    config: RemoteEmbeddingConfig,
    client: reqwest::blocking::Client,
    cache: EmbeddingCache,
}

impl RemoteEmbeddingProvider {
    pub fn new(config: RemoteEmbeddingConfig) -> Result<Self, EmbeddingError> {
        let cache = match &config.cache_path {
            Some(p) => EmbeddingCache::open(p)
                .map_err(|e| EmbeddingError::ProviderUnavailable(format!("cache: {e}")))?,
            None => EmbeddingCache::in_memory(),
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| EmbeddingError::ProviderUnavailable(e.to_string()))?;
        Ok(Self {
            config,
            client,
            cache,
        })
    }

    pub fn cache(&self) -> &EmbeddingCache {
        &self.cache
    }

    fn fetch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let body = EmbedRequestBody {
            model: &self.config.model,
            input: texts,
        };
        let reply: EmbedResponseBody = self.config.retry.run(|_| {
            let mut req = self.client.post(&self.config.url).json(&body);
            if let Some(token) = &self.config.auth_token {
                req = req.bearer_auth(token);
            }
            let resp = req
                .send()
                .map_err(|e| Attempt::Retry(EmbeddingError::ProviderUnavailable(e.to_string())))?;
            let status = resp.status();
            if status.is_server_error() || status.as_u16() == 429 {
                return Err(Attempt::Retry(EmbeddingError::ProviderUnavailable(format!(
                    "HTTP {status}"
                ))));
            }
            if !status.is_success() {
                return Err(Attempt::Fatal(EmbeddingError::ProviderUnavailable(format!(
                    "HTTP {status}"
                ))));
            }
            resp.json()
                .map_err(|e| Attempt::Fatal(EmbeddingError::ProviderUnavailable(e.to_string())))
        })?;
        if reply.data.len() != texts.len() {
            return Err(EmbeddingError::ProviderUnavailable(format!(
                "expected {} vectors, got {}",
                texts.len(),
                reply.data.len()
            )));
        }
        let mut data = reply.data;
        if data.iter().all(|d| d.index.is_some()) {
            data.sort_by_key(|d| d.index);
        }
        data.into_iter()
            .map(|d| {
                if d.embedding.len() != self.config.dimension {
                    return Err(EmbeddingError::DimensionMismatch {
                        expected: self.config.dimension,
                        got: d.embedding.len(),
                    });
                }
                EmbeddingVector::new(d.embedding)
            })
            .collect()
    }
}

impl EmbeddingProvider for RemoteEmbeddingProvider {
    fn name(&self) -> &str {
        if self.config.model.is_empty() {
            "remote"
        } else {
            &self.config.model
        }
    }

    fn dimension(&self) -> usize {
        self.config.dimension
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let mut out: Vec<Option<EmbeddingVector>> = texts.iter().map(|t| self.cache.get(t)).collect();
        let missing: Vec<&str> = texts
            .iter()
            .zip(&out)
            .filter(|(_, v)| v.is_none())
            .map(|(t, _)| *t)
            .collect();
        if !missing.is_empty() {
            let fetched = self.fetch(&missing)?;
            for (text, vector) in missing.iter().zip(fetched) {
                if let Err(e) = self.cache.insert(text, vector) {
                    tracing::warn!(error = %e, "failed to persist embedding cache entry");
                }
            }
            for (slot, text) in out.iter_mut().zip(texts) {
                if slot.is_none() {
                    *slot = self.cache.get(text);
                }
            }
        }
        out.into_iter()
            .map(|v| v.ok_or_else(|| EmbeddingError::ProviderUnavailable("cache miss".into())))
            .collect()
    }
}
