//! Sources of per-token phrase embeddings for the embedding kernel.
//!
//! Vectors come either from a precomputed cache file or from an embedding
//! service speaking the `/embed` + `/health` JSON protocol. Both are exposed
//! through [`EmbeddingProvider`], keyed by the phrase's stem sequence.
//!
//! Cache file: one JSON object per line,
//! `{"phrase": str, "model_id": str, "tokens": [str], "vectors": [[float]]}`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::{read_jsonl_records, Keyphrase};
use crate::error::{Error, Result};
use crate::matching::TokenEmbeddingSet;
use crate::textnorm::NormalizedPhrase;

/// Internally synchronized source of phrase embeddings.
pub trait EmbeddingProvider: Send + Sync {
    fn embeddings(&self, phrase: &NormalizedPhrase) -> Result<Arc<TokenEmbeddingSet>>;

    /// Warms the provider for a batch of phrases; a no-op by default.
    fn prefetch(&self, _phrases: &[&NormalizedPhrase]) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub phrase: String,
    pub model_id: String,
    pub tokens: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
}

impl CacheEntry {
    fn into_set(self) -> Result<TokenEmbeddingSet> {
        let key = Keyphrase::new(self.phrase.as_str()).stemmed;
        if key.is_empty() {
            return Err(Error::EmptyPhrase(self.phrase));
        }
        TokenEmbeddingSet::new(key, self.tokens, self.vectors)
    }
}

/// Embeddings held in memory, loaded from a cache file or built directly.
#[derive(Debug, Default)]
pub struct CacheProvider {
    sets: HashMap<Vec<String>, Arc<TokenEmbeddingSet>>,
}

impl CacheProvider {
    /// Builds from entries; the first entry wins when two share a stem key.
    pub fn from_entries(entries: impl IntoIterator<Item = CacheEntry>) -> Result<Self> {
        let mut sets = HashMap::new();
        for entry in entries {
            let set = entry.into_set()?;
            sets.entry(set.key.clone()).or_insert_with(|| Arc::new(set));
        }
        Ok(CacheProvider { sets })
    }

    /// Loads a cache file, keeping only entries for `model_id` when given.
    pub fn load(path: &Path, model_id: Option<&str>) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let entries = read_jsonl_records(BufReader::new(file), path, |line| {
            let entry: CacheEntry = serde_json::from_str(line).map_err(|e| e.to_string())?;
            entry.clone().into_set().map_err(|e| e.to_string())?;
            Ok(entry)
        })?;
        Self::from_entries(
            entries
                .into_iter()
                .filter(|e| model_id.is_none_or(|m| e.model_id == m)),
        )
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn get(&self, stems: &[String]) -> Option<Arc<TokenEmbeddingSet>> {
        self.sets.get(stems).cloned()
    }
}

impl EmbeddingProvider for CacheProvider {
    fn embeddings(&self, phrase: &NormalizedPhrase) -> Result<Arc<TokenEmbeddingSet>> {
        self.get(&phrase.stems)
            .ok_or_else(|| Error::MissingEmbedding(phrase.raw().to_string()))
    }
}

pub fn write_cache(path: &Path, entries: &[CacheEntry]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for entry in entries {
        let line = serde_json::to_string(entry).expect("cache entry serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize)]
struct EmbedRequest<'a> {
    phrases: Vec<&'a str>,
    model_id: &'a str,
}

#[derive(Debug, Deserialize)]
struct EmbedResult {
    phrase: String,
    tokens: Vec<String>,
    vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    dimension: usize,
    results: Vec<EmbedResult>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct HealthStatus {
    pub model_id: String,
    pub dimension: usize,
}

/// Client for an embedding service, memoizing every phrase it fetches.
pub struct HttpProvider {
    base_url: String,
    model_id: String,
    batch_limit: usize,
    client: reqwest::blocking::Client,
    cache: RwLock<HashMap<Vec<String>, Arc<TokenEmbeddingSet>>>,
}

impl std::fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpProvider")
            .field("base_url", &self.base_url)
            .field("model_id", &self.model_id)
            .field("batch_limit", &self.batch_limit)
            .finish()
    }
}

impl HttpProvider {
    pub const DEFAULT_BATCH_LIMIT: usize = 64;

    pub fn new(base_url: &str, model_id: &str) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| Error::Embedding(e.to_string()))?;
        Ok(HttpProvider {
            base_url: base_url.trim_end_matches('/').to_string(),
            model_id: model_id.to_string(),
            batch_limit: Self::DEFAULT_BATCH_LIMIT,
            client,
            cache: RwLock::new(HashMap::new()),
        })
    }

    pub fn with_batch_limit(mut self, batch_limit: usize) -> Self {
        self.batch_limit = batch_limit.max(1);
        self
    }

    fn url(&self, endpoint: &str) -> String {
        format!("{}/{endpoint}", self.base_url)
    }

    fn network_error(&self, url: &str, e: reqwest::Error) -> Error {
        Error::Network {
            url: url.to_string(),
            message: e.to_string(),
        }
    }

    pub fn health(&self) -> Result<HealthStatus> {
        let url = self.url("health");
        let resp = self
            .client
            .get(&url)
            .send()
            .map_err(|e| self.network_error(&url, e))?;
        match resp.status().as_u16() {
            200 => resp.json().map_err(|e| self.network_error(&url, e)),
            503 => Err(Error::Embedding(format!("{url}: model still loading"))),
            code => Err(Error::Embedding(format!("{url}: unexpected status {code}"))),
        }
    }

    fn fetch(&self, phrases: &[&NormalizedPhrase]) -> Result<()> {
        let url = self.url("embed");
        let request = EmbedRequest {
            phrases: phrases.iter().map(|p| p.raw()).collect(),
            model_id: &self.model_id,
        };
        let resp = self
            .client
            .post(&url)
            .json(&request)
            .send()
            .map_err(|e| self.network_error(&url, e))?;
        let status = resp.status().as_u16();
        match status {
            200 => {}
            404 => {
                return Err(Error::Embedding(format!(
                    "{url}: unknown model_id {:?}",
                    self.model_id
                )))
            }
            413 => {
                return Err(Error::Embedding(format!(
                    "{url}: batch of {} phrases exceeds the service limit",
                    phrases.len()
                )))
            }
            400 => {
                let body = resp.text().unwrap_or_default();
                return Err(Error::Embedding(format!("{url}: bad request: {body}")));
            }
            code => return Err(Error::Embedding(format!("{url}: unexpected status {code}"))),
        }
        let body: EmbedResponse = resp.json().map_err(|e| self.network_error(&url, e))?;
        if body.results.len() != phrases.len() {
            return Err(Error::Embedding(format!(
                "{url}: asked for {} phrases, got {} results",
                phrases.len(),
                body.results.len()
            )));
        }
        let mut fetched = Vec::with_capacity(phrases.len());
        for (phrase, result) in phrases.iter().zip(body.results) {
            if result.phrase != phrase.raw() {
                return Err(Error::Embedding(format!(
                    "{url}: result for {:?} returned out of order (expected {:?})",
                    result.phrase,
                    phrase.raw()
                )));
            }
            let set = TokenEmbeddingSet::new(phrase.stems.clone(), result.tokens, result.vectors)?;
            if set.dimension() != body.dimension {
                return Err(Error::DimensionMismatch {
                    left: body.dimension,
                    right: set.dimension(),
                });
            }
            fetched.push(set);
        }
        let mut cache = self.cache.write().expect("embedding cache poisoned");
        for set in fetched {
            cache
                .entry(set.key.clone())
                .or_insert_with(|| Arc::new(set));
        }
        Ok(())
    }

    fn cached(&self, stems: &[String]) -> Option<Arc<TokenEmbeddingSet>> {
        self.cache
            .read()
            .expect("embedding cache poisoned")
            .get(stems)
            .cloned()
    }
}

impl EmbeddingProvider for HttpProvider {
    fn embeddings(&self, phrase: &NormalizedPhrase) -> Result<Arc<TokenEmbeddingSet>> {
        if let Some(hit) = self.cached(&phrase.stems) {
            return Ok(hit);
        }
        self.fetch(&[phrase])?;
        self.cached(&phrase.stems)
            .ok_or_else(|| Error::MissingEmbedding(phrase.raw().to_string()))
    }

    fn prefetch(&self, phrases: &[&NormalizedPhrase]) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        let missing: Vec<&NormalizedPhrase> = phrases
            .iter()
            .copied()
            .filter(|p| self.cached(&p.stems).is_none() && seen.insert(&p.stems))
            .collect();
        for chunk in missing.chunks(self.batch_limit) {
            self.fetch(chunk)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(phrase: &str, vectors: Vec<Vec<f64>>) -> CacheEntry {
        CacheEntry {
            phrase: phrase.into(),
            model_id: "m".into(),
            tokens: (0..vectors.len()).map(|i| format!("t{i}")).collect(),
            vectors,
        }
    }

    #[test]
    fn lookup_is_by_stems() {
        let provider = CacheProvider::from_entries(vec![
            entry("Graph Models", vec![vec![1.0, 0.0], vec![0.0, 1.0]]),
            entry("graph model", vec![vec![0.0, 1.0]]),
        ])
        .unwrap();
        assert_eq!(provider.len(), 1);
        let set = provider
            .embeddings(&NormalizedPhrase::parse("graph model").unwrap())
            .unwrap();
        assert_eq!(set.vectors.len(), 2);
        assert!(matches!(
            provider.embeddings(&NormalizedPhrase::parse("other").unwrap()),
            Err(Error::MissingEmbedding(_))
        ));
    }

    #[test]
    fn rejects_non_unit_vectors() {
        assert!(CacheProvider::from_entries(vec![entry("x", vec![vec![2.0, 0.0]])]).is_err());
    }
}
