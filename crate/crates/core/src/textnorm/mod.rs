//! Tokenization, stemming, duplicate removal and present/absent classification.
//!
//! Every module that needs word tokens goes through [`tokenize`] so that
//! keyphrases and documents share one convention: lowercase, whitespace split,
//! leading and trailing non-alphanumeric characters stripped, internal
//! punctuation (hyphens, apostrophes) kept.

mod porter;

use std::collections::{HashMap, HashSet};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Keyphrase};
use crate::error::{Error, Result};

pub use porter::stem;

/// A token together with the character offset (not byte offset) of its first
/// retained character in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OffsetToken {
    pub text: String,
    pub char_offset: usize,
}

pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_with_offsets(text)
        .into_iter()
        .map(|t| t.text)
        .collect()
}

pub fn tokenize_with_offsets(text: &str) -> Vec<OffsetToken> {
    let mut out = Vec::new();
    let mut word: Vec<(usize, char)> = Vec::new();
    let mut flush = |word: &mut Vec<(usize, char)>| {
        let start = word.iter().position(|(_, c)| c.is_alphanumeric());
        let end = word.iter().rposition(|(_, c)| c.is_alphanumeric());
        if let (Some(start), Some(end)) = (start, end) {
            let text: String = word[start..=end]
                .iter()
                .flat_map(|(_, c)| c.to_lowercase())
                .collect();
            out.push(OffsetToken {
                text,
                char_offset: word[start].0,
            });
        }
        word.clear();
    };
    for (i, c) in text.chars().enumerate() {
        if c.is_whitespace() {
            flush(&mut word);
        } else {
            word.push((i, c));
        }
    }
    flush(&mut word);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PresenceLabel {
    Present,
    Absent,
}

/// A keyphrase together with its stemmed lowercase tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedPhrase {
    pub original: Keyphrase,
    pub stems: Vec<String>,
}

impl NormalizedPhrase {
    /// Tokenizes, stems and validates a raw phrase in one step.
    pub fn parse(raw: &str) -> Result<Self> {
        normalize(&Keyphrase::new(raw))
    }

    pub fn raw(&self) -> &str {
        &self.original.raw
    }
}

pub fn normalize(phrase: &Keyphrase) -> Result<NormalizedPhrase> {
    let stems: Vec<String> = phrase.tokens.iter().map(|t| stem(t)).collect();
    if stems.is_empty() || stems.iter().any(String::is_empty) {
        return Err(Error::EmptyPhrase(phrase.raw.clone()));
    }
    Ok(NormalizedPhrase {
        original: phrase.clone(),
        stems,
    })
}

/// Anything carrying a stemmed token sequence.
pub trait Stemmed {
    fn stems(&self) -> &[String];
}

impl Stemmed for Keyphrase {
    fn stems(&self) -> &[String] {
        &self.stemmed
    }
}

impl Stemmed for NormalizedPhrase {
    fn stems(&self) -> &[String] {
        &self.stems
    }
}

impl<T: Stemmed> Stemmed for &T {
    fn stems(&self) -> &[String] {
        (*self).stems()
    }
}

/// Keeps the first occurrence of each distinct stem sequence.
pub fn dedup<T: Stemmed + Clone>(phrases: &[T]) -> Vec<T> {
    let mut seen: HashSet<&[String]> = HashSet::new();
    let mut out = Vec::new();
    for p in phrases {
        if seen.insert(p.stems()) {
            out.push(p.clone());
        }
    }
    out
}

/// Stemmed token sequence of a document with per-token character offsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocStems {
    pub stems: Vec<String>,
    pub offsets: Vec<usize>,
    pub char_len: usize,
}

impl DocStems {
    pub fn from_text(text: &str) -> Self {
        let tokens = tokenize_with_offsets(text);
        let (stems, offsets) = tokens
            .into_iter()
            .map(|t| (stem(&t.text), t.char_offset))
            .unzip();
        DocStems {
            stems,
            offsets,
            char_len: text.chars().count(),
        }
    }

    /// Token index of the earliest contiguous match of `needle`.
    pub fn find(&self, needle: &[String]) -> Option<usize> {
        if needle.is_empty() || needle.len() > self.stems.len() {
            return None;
        }
        self.stems.windows(needle.len()).position(|w| w == needle)
    }
}

/// Shared normalizer holding memoized document stem sequences.
///
/// Safe to share between threads; the cache is keyed by `doc_id`.
#[derive(Debug, Default)]
pub struct Normalizer {
    cache: RwLock<HashMap<String, Arc<DocStems>>>,
}

impl Normalizer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn doc_stems(&self, doc: &Document) -> Arc<DocStems> {
        if let Some(hit) = self
            .cache
            .read()
            .expect("normalizer cache poisoned")
            .get(&doc.doc_id)
        {
            return Arc::clone(hit);
        }
        let computed = Arc::new(DocStems::from_text(&doc.text));
        let mut cache = self.cache.write().expect("normalizer cache poisoned");
        Arc::clone(cache.entry(doc.doc_id.clone()).or_insert(computed))
    }

    pub fn classify_presence(&self, phrase: &NormalizedPhrase, doc: &Document) -> PresenceLabel {
        if self.doc_stems(doc).find(&phrase.stems).is_some() {
            PresenceLabel::Present
        } else {
            PresenceLabel::Absent
        }
    }

    /// Character offset in the original text of the first token of the
    /// earliest match, if the phrase occurs at all.
    pub fn first_occurrence(&self, phrase: &NormalizedPhrase, doc: &Document) -> Option<usize> {
        let stems = self.doc_stems(doc);
        stems.find(&phrase.stems).map(|i| stems.offsets[i])
    }
}
