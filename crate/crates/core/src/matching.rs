//! Phrase-pair similarity kernels and the threshold / rescaling wrapper.
//!
//! Three kernels are available:
//!
//! - **Exact**: 1 when the stem sequences are equal, else 0.
//! - **KMR** (keyphrase match rate): `1 - ed(a, b) / max(|a|, |b|)` where `ed`
//!   is word-level Levenshtein distance over stems. Padding the shorter phrase
//!   to the longer length turns deletions into substitutions of equal cost, so
//!   dividing the unpadded distance by the padded length is the same quantity
//!   and stays in `[0, 1]`.
//! - **EmbeddingGreedy**: BERTScore-style greedy matching of unit-norm token
//!   vectors, optionally rescaled against a baseline `b` as `(s - b) / (1 - b)`.
//!
//! [`apply`] computes the kernel, rescales, then zeroes scores below the
//! threshold (default 0.4).

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::textnorm::NormalizedPhrase;

pub const DEFAULT_THRESHOLD: f64 = 0.4;

/// Unit-norm tolerance for embedding vectors.
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Exact,
    Kmr,
    EmbeddingGreedy,
}

impl ScoreKind {
    /// Column label used in reports, e.g. `F1`, `F_KMR`, `F_BS`.
    pub fn metric_label(self) -> &'static str {
        match self {
            ScoreKind::Exact => "F1",
            ScoreKind::Kmr => "F_KMR",
            ScoreKind::EmbeddingGreedy => "F_BS",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreFunction {
    pub kind: ScoreKind,
    pub threshold: f64,
    /// Baseline `b` in `[0, 1)` for EmbeddingGreedy rescaling.
    pub rescale_baseline: Option<f64>,
    /// Compare the raw kernel value against the threshold before rescaling.
    pub threshold_before_rescale: bool,
}

impl ScoreFunction {
    pub fn new(kind: ScoreKind, threshold: f64, rescale_baseline: Option<f64>) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::Validation(format!(
                "threshold {threshold} is outside [0, 1]"
            )));
        }
        if let Some(b) = rescale_baseline {
            if kind != ScoreKind::EmbeddingGreedy {
                return Err(Error::Validation(
                    "baseline rescaling only applies to the embedding kernel".into(),
                ));
            }
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Validation(format!(
                    "rescale baseline {b} is outside [0, 1)"
                )));
            }
        }
        Ok(ScoreFunction {
            kind,
            threshold,
            rescale_baseline,
            threshold_before_rescale: false,
        })
    }

    pub fn exact() -> Self {
        Self::new(ScoreKind::Exact, DEFAULT_THRESHOLD, None).expect("valid defaults")
    }

    pub fn kmr() -> Self {
        Self::new(ScoreKind::Kmr, DEFAULT_THRESHOLD, None).expect("valid defaults")
    }

    pub fn embedding_greedy(rescale_baseline: Option<f64>) -> Result<Self> {
        Self::new(
            ScoreKind::EmbeddingGreedy,
            DEFAULT_THRESHOLD,
            rescale_baseline,
        )
    }

    pub fn with_threshold(self, threshold: f64) -> Result<Self> {
        Self::new(self.kind, threshold, self.rescale_baseline).map(|f| ScoreFunction {
            threshold_before_rescale: self.threshold_before_rescale,
            ..f
        })
    }
}

/// Per-token unit vectors for one phrase, keyed by its stem sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenEmbeddingSet {
    pub key: Vec<String>,
    pub tokens: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
}

impl TokenEmbeddingSet {
    pub fn new(key: Vec<String>, tokens: Vec<String>, vectors: Vec<Vec<f64>>) -> Result<Self> {
        let set = TokenEmbeddingSet {
            key,
            tokens,
            vectors,
        };
        set.validate()?;
        Ok(set)
    }

    /// Convenience for fixtures: tokens are left empty.
    pub fn from_vectors(vectors: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(Vec::new(), Vec::new(), vectors)
    }

    pub fn dimension(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.dimension();
        if self.vectors.is_empty() || dim == 0 {
            return Err(Error::Validation(format!(
                "embedding set for {:?} has no vectors",
                self.key.join(" ")
            )));
        }
        if !self.tokens.is_empty() && self.tokens.len() != self.vectors.len() {
            return Err(Error::Validation(format!(
                "embedding set for {:?} has {} tokens but {} vectors",
                self.key.join(" "),
                self.tokens.len(),
                self.vectors.len()
            )));
        }
        for v in &self.vectors {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    left: dim,
                    right: v.len(),
                });
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm.is_nan() || (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::Validation(format!(
                    "embedding vector for {:?} has norm {norm}, expected 1",
                    self.key.join(" ")
                )));
            }
        }
        Ok(())
    }
}

pub fn exact_score(a: &NormalizedPhrase, b: &NormalizedPhrase) -> f64 {
    if a.stems == b.stems {
        1.0
    } else {
        0.0
    }
}

/// Word-level Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn kmr(a: &NormalizedPhrase, b: &NormalizedPhrase) -> Result<f64> {
    kmr_tokens(&a.stems, &b.stems).ok_or_else(|| {
        let empty = if a.stems.is_empty() { a } else { b };
        Error::EmptyPhrase(empty.raw().to_string())
    })
}

/// `None` when either side is empty.
pub fn kmr_tokens<T: PartialEq>(a: &[T], b: &[T]) -> Option<f64> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let padded_len = a.len().max(b.len());
    let ter = edit_distance(a, b) as f64 / padded_len as f64;
    Some(1.0 - ter)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Unrescaled greedy-matching F over two token embedding sets. Negative
/// precision or recall collapses the score to 0.
pub fn embedding_greedy_raw(a: &TokenEmbeddingSet, b: &TokenEmbeddingSet) -> Result<f64> {
    if a.dimension() != b.dimension() {
        return Err(Error::DimensionMismatch {
            left: a.dimension(),
            right: b.dimension(),
        });
    }
    if a.vectors.is_empty() || b.vectors.is_empty() {
        return Ok(0.0);
    }
    let greedy = |from: &TokenEmbeddingSet, to: &TokenEmbeddingSet| {
        from.vectors
            .iter()
            .map(|u| {
                to.vectors
                    .iter()
                    .map(|v| dot(u, v))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .sum::<f64>()
            / from.vectors.len() as f64
    };
    let p = greedy(a, b);
    let r = greedy(b, a);
    if p <= 0.0 || r <= 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * p * r / (p + r))
}

fn rescale(raw: f64, baseline: Option<f64>) -> f64 {
    match baseline {
        Some(b) => (raw - b) / (1.0 - b),
        None => raw,
    }
}

pub fn embedding_greedy_score(
    a: &TokenEmbeddingSet,
    b: &TokenEmbeddingSet,
    rescale_baseline: Option<f64>,
) -> Result<f64> {
    let raw = embedding_greedy_raw(a, b)?;
    Ok(rescale(raw, rescale_baseline).clamp(0.0, 1.0))
}

/// Kernel value for a (prediction, gold) pair after rescaling and thresholding.
pub fn apply(
    score_fn: &ScoreFunction,
    a: &NormalizedPhrase,
    b: &NormalizedPhrase,
    embeddings: Option<&dyn EmbeddingProvider>,
) -> Result<f64> {
    let thresholded = |v: f64| if v < score_fn.threshold { 0.0 } else { v };
    match score_fn.kind {
        ScoreKind::Exact => Ok(exact_score(a, b)),
        ScoreKind::Kmr => kmr(a, b).map(thresholded),
        ScoreKind::EmbeddingGreedy => {
            let provider =
                embeddings.ok_or_else(|| Error::MissingEmbedding(a.raw().to_string()))?;
            let ea = provider.embeddings(a)?;
            let eb = provider.embeddings(b)?;
            let raw = embedding_greedy_raw(&ea, &eb)?;
            let value = if score_fn.threshold_before_rescale {
                rescale(thresholded(raw), score_fn.rescale_baseline)
            } else {
                thresholded(rescale(raw, score_fn.rescale_baseline).clamp(0.0, 1.0))
            };
            Ok(value.clamp(0.0, 1.0))
        }
    }
}
