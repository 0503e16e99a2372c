//! Instruction embeddings, cosine scoring, and similarity ranking over a memory.

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::http::{HttpConfig, JsonClient, ProviderError};
use crate::memory::{Memory, SuccessLog};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RetrievalError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding provider failed: {0}")]
    Provider(#[from] ProviderError),
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("rank {index} requested but only {available} entries are ranked")]
    IndexOutOfRange { index: usize, available: usize },
}

/// Unit-norm (or zero) embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// L2-normalizes `values`; an all-zero input stays zero.
    pub fn normalized(mut values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        Self(values)
    }

    /// Wraps raw values without normalizing.
    pub fn raw(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn dimension(&self) -> usize;
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, RetrievalError>;
}

pub fn embed(provider: &dyn EmbeddingProvider, text: &str) -> Result<EmbeddingVector, RetrievalError> {
    if text.trim().is_empty() {
        return Err(RetrievalError::EmptyText);
    }
    provider.embed_text(text)
}

pub const DEFAULT_DIMENSION: usize = 256;
pub const DEFAULT_NGRAM: usize = 3;
pub const DEFAULT_HASH_SEED: u64 = 0x6d74_705f_6d65_6d30;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over UTF-8 bytes with the offset basis mixed with `seed`.
pub fn seeded_fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET ^ seed;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Lowercased words with every non-alphanumeric character treated as a separator.
pub fn words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

/// Character n-grams of each word padded as `<word>`.
pub fn char_ngrams(text: &str, n: usize) -> Vec<String> {
    let mut grams = Vec::new();
    for word in words(text) {
        let padded: Vec<char> = std::iter::once('<')
            .chain(word.chars())
            .chain(std::iter::once('>'))
            .collect();
        if padded.len() <= n {
            grams.push(padded.iter().collect());
        } else {
            grams.extend(padded.windows(n).map(|w| w.iter().collect::<String>()));
        }
    }
    grams
}

/// Offline deterministic embedder: signed feature hashing of character n-grams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HashedNgramEmbedder {
    pub dimension: usize,
    pub ngram: usize,
    pub seed: u64,
}

impl Default for HashedNgramEmbedder {
    fn default() -> Self {
        Self {
            dimension: DEFAULT_DIMENSION,
            ngram: DEFAULT_NGRAM,
            seed: DEFAULT_HASH_SEED,
        }
    }
}

impl EmbeddingProvider for HashedNgramEmbedder {
    fn name(&self) -> &str {
        "hashed-ngram"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, RetrievalError> {
        if text.trim().is_empty() {
            return Err(RetrievalError::EmptyText);
        }
        let mut counts = vec![0.0; self.dimension];
        for gram in char_ngrams(text.trim(), self.ngram) {
            let h = seeded_fnv1a(self.seed, gram.as_bytes());
            let bucket = (h % self.dimension as u64) as usize;
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            counts[bucket] += sign;
        }
        Ok(EmbeddingVector::normalized(counts))
    }
}

/// Remote embedding service: POST `{"input", "model"}` -> `{"embedding": [...]}`.
/// At most one retry per call.
pub struct RemoteEmbedder {
    config: HttpConfig,
    dimension: usize,
    client: JsonClient,
}

impl RemoteEmbedder {
    pub fn new(config: HttpConfig, dimension: usize) -> Self {
        Self {
            config,
            dimension,
            client: JsonClient::new(),
        }
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn name(&self) -> &str {
        &self.config.model
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, RetrievalError> {
        let body = json!({"input": text, "model": self.config.model});
        let (value, attempts) =
            self.client
                .post(&self.config, &self.config.endpoint, &body, 2)?;
        let malformed = |message: String| ProviderError::MalformedResponse { attempts, message };
        let values: Vec<f64> = value
            .get("embedding")
            .and_then(|e| e.as_array())
            .ok_or_else(|| malformed("missing \"embedding\" array".into()))?
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| malformed("non-numeric embedding value".into())))
            .collect::<Result<_, _>>()?;
        if values.len() != self.dimension {
            return Err(RetrievalError::DimensionMismatch {
                left: values.len(),
                right: self.dimension,
            });
        }
        Ok(EmbeddingVector::normalized(values))
    }
}

/// Cosine similarity, accumulated in index order and clamped to [-1, 1].
/// Zero vectors score 0 against everything.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, RetrievalError> {
    if a.dimension() != b.dimension() {
        return Err(RetrievalError::DimensionMismatch {
            left: a.dimension(),
            right: b.dimension(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.values().iter().zip(b.values()) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub memory_index: usize,
    pub score: f64,
}

/// Memory indices by descending score; ties keep insertion order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRanking {
    pub query_instruction: String,
    pub entries: Vec<RankedEntry>,
}

impl RetrievalRanking {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Scores every log against `instruction` and returns the full ranking.
pub fn rank_memory(
    provider: &dyn EmbeddingProvider,
    instruction: &str,
    memory: &Memory,
) -> Result<RetrievalRanking, RetrievalError> {
    let query = embed(provider, instruction)?;
    let mut entries = Vec::with_capacity(memory.len());
    for (memory_index, log) in memory.iter().enumerate() {
        let v = embed(provider, &log.instruction)?;
        entries.push(RankedEntry {
            memory_index,
            score: cosine_similarity(&query, &v)?,
        });
    }
    // stable sort: equal scores stay in insertion order
    entries.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(RetrievalRanking {
        query_instruction: instruction.to_string(),
        entries,
    })
}

/// The log at 0-based rank `i`.
pub fn retrieve_ith<'m>(
    ranking: &RetrievalRanking,
    memory: &'m Memory,
    i: usize,
) -> Result<&'m SuccessLog, RetrievalError> {
    let entry = ranking.entries.get(i).ok_or(RetrievalError::IndexOutOfRange {
        index: i,
        available: ranking.len(),
    })?;
    memory
        .logs
        .get(entry.memory_index)
        .ok_or(RetrievalError::IndexOutOfRange {
            index: entry.memory_index,
            available: memory.len(),
        })
}
