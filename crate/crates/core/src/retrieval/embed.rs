//! Text embedding providers: a native hashed character-trigram model and a
//! client for remote embedding services.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::{join_url, HttpError, JsonClient, RetryPolicy};

/// Dimension of the lexical provider's vectors.
pub const LEXICAL_DIM: usize = 1024;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EmbedError {
    #[error(transparent)]
    Transport(#[from] HttpError),
    #[error("embedding protocol violation: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub components: Vec<f64>,
    pub provider_id: String,
}

impl EmbeddingVector {
    pub fn norm(&self) -> f64 {
        self.components.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Cosine similarity; 0.0 when either vector is zero.
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        let dot: f64 = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a * b)
            .sum();
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            0.0
        } else {
            dot / denom
        }
    }
}

pub trait EmbeddingProvider: Send + Sync {
    fn id(&self) -> &str;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError>;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut v = self.embed_batch(&[text])?;
        v.pop()
            .ok_or_else(|| EmbedError::Protocol("no vector returned".into()))
    }
}

/// Hashed character-trigram term frequencies, L2-normalized.
///
/// Texts shorter than three characters contribute the whole text as a
/// single gram so every nonempty text has a nonzero vector.
#[derive(Debug, Clone)]
pub struct LexicalProvider {
    dim: usize,
    id: String,
}

impl Default for LexicalProvider {
    fn default() -> Self {
        Self::new(LEXICAL_DIM)
    }
}

impl LexicalProvider {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self {
            dim,
            id: format!("lexical-3gram-{dim}"),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn vectorize(&self, text: &str) -> Vec<f64> {
        let mut counts = vec![0.0f64; self.dim];
        let chars: Vec<char> = text.chars().collect();
        let mut gram = String::with_capacity(12);
        let mut add = |g: &[char]| {
            gram.clear();
            gram.extend(g);
            counts[(fnv1a(gram.as_bytes()) % self.dim as u64) as usize] += 1.0;
        };
        if chars.len() < 3 {
            if !chars.is_empty() {
                add(&chars);
            }
        } else {
            chars.windows(3).for_each(&mut add);
        }
        let norm = counts.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            counts.iter_mut().for_each(|x| *x /= norm);
        }
        counts
    }
}

/// 64-bit FNV-1a; stable across platforms and toolchains.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl EmbeddingProvider for LexicalProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        Ok(texts
            .iter()
            .map(|t| EmbeddingVector {
                components: self.vectorize(t),
                provider_id: self.id.clone(),
            })
            .collect())
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
    dim: usize,
}

/// Client for `POST {base}/embed` services.
pub struct RemoteProvider {
    url: String,
    id: String,
    batch_size: usize,
    http: JsonClient,
}

impl RemoteProvider {
    pub fn new(base_url: &str, policy: RetryPolicy) -> Self {
        Self {
            url: join_url(base_url, "embed"),
            id: format!("remote:{}", base_url.trim_end_matches('/')),
            batch_size: 64,
            http: JsonClient::new(policy),
        }
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    fn call(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let resp: EmbedResponse = self.http.post_json(&self.url, &EmbedRequest { texts })?;
        if resp.embeddings.len() != texts.len() {
            return Err(EmbedError::Protocol(format!(
                "sent {} texts, got {} embeddings",
                texts.len(),
                resp.embeddings.len()
            )));
        }
        if let Some(bad) = resp.embeddings.iter().find(|v| v.len() != resp.dim) {
            return Err(EmbedError::Protocol(format!(
                "vector of length {} but dim is {}",
                bad.len(),
                resp.dim
            )));
        }
        if resp.embeddings.iter().flatten().any(|x| !x.is_finite()) {
            return Err(EmbedError::Protocol("non-finite component".into()));
        }
        Ok(resp.embeddings)
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let mut out = Vec::with_capacity(texts.len());
        let mut dim = None;
        for chunk in texts.chunks(self.batch_size) {
            for components in self.call(chunk)? {
                if *dim.get_or_insert(components.len()) != components.len() {
                    return Err(EmbedError::Protocol("dimension changed between batches".into()));
                }
                out.push(EmbeddingVector {
                    components,
                    provider_id: self.id.clone(),
                });
            }
        }
        Ok(out)
    }
}
