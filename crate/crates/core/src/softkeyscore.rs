//! Soft set-to-set F-measure over keyphrase sets.
//!
//! For predictions `P`, gold `G` and a phrase kernel `score`:
//!
//! ```text
//! P_score = 1/|P| * sum_{p in P} max_{g in G} score(p, g)
//! R_score = 1/|G| * sum_{g in G} max_{p in P} score(p, g)
//! F_score = 2 * P_score * R_score / (P_score + R_score)
//! ```
//!
//! With the exact kernel this is the usual exact-match F1. Under `@k`
//! selection with padding, `|P|` is `k` even when fewer predictions exist,
//! which is the same as appending predictions that match nothing.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::embedding::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::matching::{apply, ScoreFunction};
use crate::textnorm::{NormalizedPhrase, Normalizer, PresenceLabel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Selection {
    AtM,
    AtK(usize),
}

impl fmt::Display for Selection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Selection::AtM => write!(f, "@M"),
            Selection::AtK(k) => write!(f, "@{k}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub score_fn: ScoreFunction,
    pub selection: Selection,
    pub pad_short_predictions: bool,
}

impl MetricConfig {
    pub fn new(score_fn: ScoreFunction, selection: Selection) -> Result<Self> {
        if selection == Selection::AtK(0) {
            return Err(Error::Validation("@k selection needs k >= 1".into()));
        }
        Ok(MetricConfig {
            score_fn,
            selection,
            pad_short_predictions: true,
        })
    }

    /// Report name such as `F1@M` or `F_KMR@5`.
    pub fn name(&self) -> String {
        format!("{}{}", self.score_fn.kind.metric_label(), self.selection)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub p_score: f64,
    pub r_score: f64,
    pub f_score: f64,
    /// Real predictions scored.
    pub n_pred_used: usize,
    /// Precision denominator; exceeds `n_pred_used` when padding applies.
    pub effective_count: usize,
    pub n_gold: usize,
}

impl MetricResult {
    pub fn from_pr(
        p_score: f64,
        r_score: f64,
        n_pred_used: usize,
        effective_count: usize,
        n_gold: usize,
    ) -> Self {
        MetricResult {
            p_score,
            r_score,
            f_score: harmonic_mean(p_score, r_score),
            n_pred_used,
            effective_count,
            n_gold,
        }
    }

    /// An empty gold set makes recall meaningless; such results are left out
    /// of corpus averages.
    pub fn is_defined(&self) -> bool {
        self.n_gold > 0
    }
}

pub fn harmonic_mean(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Predictions to score and the precision denominator, in generation order.
pub fn select_predictions<'a, T>(pred: &'a [T], config: &MetricConfig) -> (&'a [T], usize) {
    match config.selection {
        Selection::AtM => (pred, pred.len()),
        Selection::AtK(k) => {
            let used = &pred[..pred.len().min(k)];
            let count = if config.pad_short_predictions {
                k
            } else {
                used.len()
            };
            (used, count)
        }
    }
}

pub fn soft_f(
    pred: &[NormalizedPhrase],
    gold: &[NormalizedPhrase],
    config: &MetricConfig,
    embeddings: Option<&dyn EmbeddingProvider>,
) -> Result<MetricResult> {
    let (used, effective_count) = select_predictions(pred, config);
    if gold.is_empty() || used.is_empty() {
        return Ok(MetricResult::from_pr(
            0.0,
            0.0,
            used.len(),
            effective_count,
            gold.len(),
        ));
    }
    let mut best_for_gold = vec![0.0f64; gold.len()];
    let mut best_for_pred = Vec::with_capacity(used.len());
    for p in used {
        let mut best = 0.0f64;
        for (j, g) in gold.iter().enumerate() {
            let s = apply(&config.score_fn, p, g, embeddings)?;
            best = best.max(s);
            best_for_gold[j] = best_for_gold[j].max(s);
        }
        best_for_pred.push(best);
    }
    let p_score = order_free_sum(best_for_pred) / effective_count as f64;
    let r_score = order_free_sum(best_for_gold) / gold.len() as f64;
    Ok(MetricResult::from_pr(
        p_score,
        r_score,
        used.len(),
        effective_count,
        gold.len(),
    ))
}

/// Sums in ascending order so that permuting either set cannot change the
/// result in the last bit.
fn order_free_sum(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

/// Exact-match F1; identical to [`soft_f`] with the exact kernel.
pub fn classic_f1(
    pred: &[NormalizedPhrase],
    gold: &[NormalizedPhrase],
    selection: Selection,
) -> Result<MetricResult> {
    let config = MetricConfig::new(ScoreFunction::exact(), selection)?;
    soft_f(pred, gold, &config, None)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PresenceSplit {
    pub present_pred: Vec<NormalizedPhrase>,
    pub absent_pred: Vec<NormalizedPhrase>,
    pub present_gold: Vec<NormalizedPhrase>,
    pub absent_gold: Vec<NormalizedPhrase>,
}

impl PresenceSplit {
    pub fn side(&self, label: PresenceLabel) -> (&[NormalizedPhrase], &[NormalizedPhrase]) {
        match label {
            PresenceLabel::Present => (&self.present_pred, &self.present_gold),
            PresenceLabel::Absent => (&self.absent_pred, &self.absent_gold),
        }
    }
}

/// Routes each phrase to the present or absent side by checking the stemmed
/// source document. Order within each side is preserved.
pub fn split_by_presence(
    pred: &[NormalizedPhrase],
    gold: &[NormalizedPhrase],
    doc: &Document,
    normalizer: &Normalizer,
) -> PresenceSplit {
    let mut split = PresenceSplit::default();
    for p in pred {
        match normalizer.classify_presence(p, doc) {
            PresenceLabel::Present => split.present_pred.push(p.clone()),
            PresenceLabel::Absent => split.absent_pred.push(p.clone()),
        }
    }
    for g in gold {
        match normalizer.classify_presence(g, doc) {
            PresenceLabel::Present => split.present_gold.push(g.clone()),
            PresenceLabel::Absent => split.absent_gold.push(g.clone()),
        }
    }
    split
}
