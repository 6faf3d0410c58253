//! Per-document evaluation pipeline and its parallel corpus driver.

use serde::Serialize;

use rayon::prelude::*;

use crate::calibration::{correctness, CalibrationSample};
use crate::confidence::KeyphraseConfidence;
use crate::corpus::{Corpus, Document, PredictionRecord};
use crate::embedding::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::matching::{ScoreFunction, ScoreKind};
use crate::positional::{document_counts, PositionalCounts, SoftMiss};
use crate::softkeyscore::{soft_f, split_by_presence, MetricConfig, MetricResult};
use crate::textnorm::{dedup, normalize, NormalizedPhrase, Normalizer, PresenceLabel};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub metrics: Vec<MetricConfig>,
    /// Drop gold phrases whose stems repeat an earlier gold phrase.
    pub dedup_gold: bool,
    /// Kernel for the soft miss column of the positional report.
    pub positional_kernel: Option<ScoreFunction>,
}

impl EvalConfig {
    pub fn new(metrics: Vec<MetricConfig>) -> Self {
        EvalConfig {
            metrics,
            dedup_gold: false,
            positional_kernel: None,
        }
    }

    pub fn needs_embeddings(&self) -> bool {
        self.metrics
            .iter()
            .map(|m| m.score_fn.kind)
            .chain(self.positional_kernel.map(|k| k.kind))
            .any(|k| k == ScoreKind::EmbeddingGreedy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SplitResults {
    pub all: MetricResult,
    pub present: MetricResult,
    pub absent: MetricResult,
}

impl SplitResults {
    pub fn get(&self, split: Split) -> &MetricResult {
        match split {
            Split::All => &self.all,
            Split::Present => &self.present,
            Split::Absent => &self.absent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    All,
    Present,
    Absent,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Present, Split::Absent, Split::All];

    pub fn name(self) -> &'static str {
        match self {
            Split::All => "all",
            Split::Present => "present",
            Split::Absent => "absent",
        }
    }
}

/// A generated keyphrase with its confidence and exact-match correctness.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredKeyphrase {
    pub phrase: String,
    pub confidence: KeyphraseConfidence,
    pub correct: bool,
}

impl ScoredKeyphrase {
    pub fn sample(&self) -> CalibrationSample {
        CalibrationSample {
            confidence: self.confidence.confidence,
            correct: self.correct,
            presence: self.confidence.presence,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocEvaluation {
    pub doc_id: String,
    /// Parallel to [`EvalConfig::metrics`].
    pub metrics: Vec<SplitResults>,
    pub keyphrases: Vec<ScoredKeyphrase>,
    pub positional: PositionalCounts,
}

fn gold_phrases(doc: &Document, dedup_gold: bool) -> Result<Vec<NormalizedPhrase>> {
    let gold = doc.gold.iter().map(normalize).collect::<Result<Vec<_>>>()?;
    Ok(if dedup_gold { dedup(&gold) } else { gold })
}

/// Predictions with their spans, duplicates removed by stems, in
/// generation order.
fn prediction_phrases(
    pred: Option<&PredictionRecord>,
) -> Vec<(crate::corpus::KeyphraseSpan, NormalizedPhrase)> {
    let Some(pred) = pred else {
        return Vec::new();
    };
    let mut seen = std::collections::HashSet::new();
    pred.normalized()
        .into_iter()
        .filter(|(_, p)| seen.insert(p.stems.clone()))
        .collect()
}

pub fn evaluate_document(
    doc: &Document,
    pred: Option<&PredictionRecord>,
    config: &EvalConfig,
    normalizer: &Normalizer,
    embeddings: Option<&dyn EmbeddingProvider>,
) -> Result<DocEvaluation> {
    let gold = gold_phrases(doc, config.dedup_gold)?;
    let spans_and_preds = prediction_phrases(pred);
    let preds: Vec<NormalizedPhrase> = spans_and_preds.iter().map(|(_, p)| p.clone()).collect();
    let split = split_by_presence(&preds, &gold, doc, normalizer);

    let metrics = config
        .metrics
        .iter()
        .map(|m| {
            let (pp, pg) = split.side(PresenceLabel::Present);
            let (ap, ag) = split.side(PresenceLabel::Absent);
            Ok(SplitResults {
                all: soft_f(&preds, &gold, m, embeddings)?,
                present: soft_f(pp, pg, m, embeddings)?,
                absent: soft_f(ap, ag, m, embeddings)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut keyphrases = Vec::with_capacity(spans_and_preds.len());
    if let Some(record) = pred {
        for (span, phrase) in &spans_and_preds {
            let presence = normalizer.classify_presence(phrase, doc);
            keyphrases.push(ScoredKeyphrase {
                phrase: phrase.raw().to_string(),
                confidence: KeyphraseConfidence::compute(&record.trace, *span, presence)?,
                correct: correctness(phrase, &gold),
            });
        }
    }

    let soft = config.positional_kernel.as_ref().map(|score_fn| SoftMiss {
        score_fn,
        embeddings,
    });
    let positional = document_counts(doc, &split.present_gold, &preds, normalizer, soft)?;

    Ok(DocEvaluation {
        doc_id: doc.doc_id.clone(),
        metrics,
        keyphrases,
        positional,
    })
}

/// Every phrase the embedding kernel may be asked about.
fn all_phrases(corpus: &Corpus, dedup_gold: bool) -> Result<Vec<NormalizedPhrase>> {
    let mut out = Vec::new();
    for (doc, pred) in corpus.pairs() {
        out.extend(gold_phrases(doc, dedup_gold)?);
        out.extend(prediction_phrases(pred).into_iter().map(|(_, p)| p));
    }
    Ok(out)
}

/// Evaluates every document, in corpus order, on a pool of `workers` threads.
pub fn evaluate_corpus(
    corpus: &Corpus,
    config: &EvalConfig,
    embeddings: Option<&dyn EmbeddingProvider>,
    workers: usize,
) -> Result<Vec<DocEvaluation>> {
    if config.needs_embeddings() {
        let provider = embeddings.ok_or_else(|| {
            Error::Embedding("the embedding kernel needs an embeddings source".into())
        })?;
        let phrases = all_phrases(corpus, config.dedup_gold)?;
        let refs: Vec<&NormalizedPhrase> = phrases.iter().collect();
        provider.prefetch(&refs)?;
    }
    let normalizer = Normalizer::new();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Validation(format!("cannot start worker pool: {e}")))?;
    let pairs: Vec<_> = corpus.pairs().collect();
    pool.install(|| {
        pairs
            .par_iter()
            .map(|(doc, pred)| evaluate_document(doc, *pred, config, &normalizer, embeddings))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{KeyphraseSpan, TokenTrace};
    use crate::softkeyscore::Selection;

    fn record(doc_id: &str, phrases: &[(&str, f64)]) -> PredictionRecord {
        let mut tokens = Vec::new();
        let mut probs = Vec::new();
        let mut mask = Vec::new();
        let mut spans = Vec::new();
        for (i, (phrase, p)) in phrases.iter().enumerate() {
            if i > 0 {
                tokens.push(";".to_string());
                probs.push(0.9);
                mask.push(true);
            }
            let start = tokens.len();
            for w in phrase.split_whitespace() {
                tokens.push(w.to_string());
                probs.push(*p);
                mask.push(false);
            }
            spans.push(KeyphraseSpan::new(start, tokens.len() - 1));
        }
        let trace = TokenTrace {
            tokens,
            probs,
            special_mask: mask,
        };
        PredictionRecord::new(doc_id, trace, spans).unwrap()
    }

    fn config() -> EvalConfig {
        EvalConfig::new(vec![
            MetricConfig::new(ScoreFunction::exact(), Selection::AtM).unwrap(),
            MetricConfig::new(ScoreFunction::kmr(), Selection::AtK(5)).unwrap(),
        ])
    }

    #[test]
    fn single_document() {
        let doc = Document::new(
            "d1",
            "Routing tables in BGP networks grow quickly.",
            &["routing tables", "bgp", "internet topology"],
        );
        let pred = record(
            "d1",
            &[
                ("routing table", 0.5),
                ("bgp", 0.8),
                ("bgp", 0.1),
                ("network growth", 0.25),
            ],
        );
        let n = Normalizer::new();
        let e = evaluate_document(&doc, Some(&pred), &config(), &n, None).unwrap();
        let f1 = &e.metrics[0];
        assert_eq!(f1.all.n_pred_used, 3);
        assert!((f1.all.p_score - 2.0 / 3.0).abs() < 1e-15);
        assert!((f1.all.r_score - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f1.present.f_score, 1.0);
        assert_eq!(f1.absent.n_gold, 1);
        assert_eq!(f1.absent.f_score, 0.0);

        assert_eq!(e.keyphrases.len(), 3);
        assert!(e.keyphrases[0].correct && e.keyphrases[1].correct && !e.keyphrases[2].correct);
        assert_eq!(e.keyphrases[2].confidence.presence, PresenceLabel::Absent);
        assert!((e.keyphrases[2].confidence.confidence - 0.25).abs() < 1e-15);
        assert_eq!(e.positional.gold_counts.iter().sum::<usize>(), 2);
    }

    #[test]
    fn document_without_predictions() {
        let doc = Document::new("d", "some text here", &["text"]);
        let e = evaluate_document(&doc, None, &config(), &Normalizer::new(), None).unwrap();
        assert_eq!(e.metrics[0].all.f_score, 0.0);
        assert!(e.metrics[0].all.is_defined());
        assert!(e.keyphrases.is_empty());
        assert_eq!(e.positional.miss_counts, [0, 1, 0, 0, 0]);
    }

    #[test]
    fn corpus_order_is_kept_for_any_worker_count() {
        let docs: Vec<_> = (0..30)
            .map(|i| {
                Document::new(
                    format!("d{i}"),
                    format!("word{i} text body"),
                    &[&format!("word{i}")],
                )
            })
            .collect();
        let preds: Vec<_> = (0..30)
            .step_by(2)
            .map(|i| record(&format!("d{i}"), &[(&format!("word{i}"), 0.5)]))
            .collect();
        let corpus = Corpus::new(docs, preds).unwrap();
        let one = evaluate_corpus(&corpus, &config(), None, 1).unwrap();
        let four = evaluate_corpus(&corpus, &config(), None, 4).unwrap();
        assert_eq!(one, four);
        assert_eq!(one[7].doc_id, "d7");
        assert_eq!(one[8].metrics[0].all.f_score, 1.0);
        assert_eq!(one[7].metrics[0].all.f_score, 0.0);
    }

    #[test]
    fn embedding_kernel_needs_a_provider() {
        let mut c = config();
        c.metrics.push(
            MetricConfig::new(
                ScoreFunction::embedding_greedy(None).unwrap(),
                Selection::AtM,
            )
            .unwrap(),
        );
        assert!(c.needs_embeddings());
        let corpus = Corpus::new(vec![Document::new("d", "text", &["text"])], vec![]).unwrap();
        assert!(evaluate_corpus(&corpus, &c, None, 1).is_err());
    }
}
