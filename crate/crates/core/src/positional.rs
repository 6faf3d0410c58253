//! Where present gold keyphrases sit in their document, and how often they
//! are missed depending on that position.
//!
//! The document is cut into five sections of 20% of its characters each. A
//! located phrase at character offset `c` of a text of `n` characters lands in
//! section `1 + min(4, floor(5c / n))`.

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::embedding::EmbeddingProvider;
use crate::error::Result;
use crate::matching::{apply, ScoreFunction};
use crate::stats::CompensatedSum;
use crate::textnorm::{NormalizedPhrase, Normalizer};

pub const N_SECTIONS: usize = 5;

/// Texts shorter than this put every located phrase in section 1.
pub const MIN_TEXT_CHARS: usize = 5;

/// Character offset of the phrase's earliest stemmed match in `doc`.
pub fn first_occurrence(
    phrase: &NormalizedPhrase,
    doc: &Document,
    normalizer: &Normalizer,
) -> Option<usize> {
    normalizer.first_occurrence(phrase, doc)
}

/// 1-based section of a character offset in a text of `char_len` characters.
pub fn section_for(first_char: usize, char_len: usize) -> usize {
    if char_len < MIN_TEXT_CHARS {
        return 1;
    }
    // Integer arithmetic keeps exact boundaries exact.
    1 + (N_SECTIONS * first_char / char_len).min(N_SECTIONS - 1)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionAssignment {
    pub phrase: NormalizedPhrase,
    pub section: usize,
    pub first_char: usize,
}

/// Sections of the phrases that occur in the document; phrases that do not
/// occur are skipped.
pub fn assign_sections(
    doc: &Document,
    gold_present: &[NormalizedPhrase],
    normalizer: &Normalizer,
) -> Vec<SectionAssignment> {
    let char_len = normalizer.doc_stems(doc).char_len;
    gold_present
        .iter()
        .filter_map(|g| {
            let first_char = first_occurrence(g, doc, normalizer)?;
            Some(SectionAssignment {
                phrase: g.clone(),
                section: section_for(first_char, char_len),
                first_char,
            })
        })
        .collect()
}

/// Per-section tallies; partial tallies merge by addition.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PositionalCounts {
    pub gold_counts: [usize; N_SECTIONS],
    pub miss_counts: [usize; N_SECTIONS],
    /// Sum over gold phrases of `1 - best soft score`, when a soft kernel is used.
    soft_miss: Option<[CompensatedSum; N_SECTIONS]>,
}

impl PositionalCounts {
    pub fn merge(&mut self, other: &PositionalCounts) {
        for i in 0..N_SECTIONS {
            self.gold_counts[i] += other.gold_counts[i];
            self.miss_counts[i] += other.miss_counts[i];
        }
        match (&mut self.soft_miss, &other.soft_miss) {
            (Some(mine), Some(theirs)) => {
                for (a, b) in mine.iter_mut().zip(theirs) {
                    a.merge(b);
                }
            }
            (None, Some(theirs)) => self.soft_miss = Some(*theirs),
            _ => {}
        }
    }

    pub fn finish(&self) -> PositionalReport {
        let percent = |num: f64, i: usize| {
            let n = self.gold_counts[i];
            (n > 0).then(|| 100.0 * num / n as f64)
        };
        let miss_percent = std::array::from_fn(|i| percent(self.miss_counts[i] as f64, i));
        let soft_miss_percent = self
            .soft_miss
            .map(|sums| std::array::from_fn(|i| percent(sums[i].value(), i)));
        PositionalReport {
            gold_counts: self.gold_counts,
            miss_counts: self.miss_counts,
            miss_percent,
            soft_miss_percent,
        }
    }
}

/// Optional soft kernel for the secondary miss column.
#[derive(Clone, Copy)]
pub struct SoftMiss<'a> {
    pub score_fn: &'a ScoreFunction,
    pub embeddings: Option<&'a dyn EmbeddingProvider>,
}

/// Tallies one document. A gold phrase is missed when no prediction has the
/// same stems; its soft miss is one minus its best kernel score.
pub fn document_counts(
    doc: &Document,
    gold: &[NormalizedPhrase],
    predictions: &[NormalizedPhrase],
    normalizer: &Normalizer,
    soft: Option<SoftMiss<'_>>,
) -> Result<PositionalCounts> {
    let mut counts = PositionalCounts {
        soft_miss: soft.map(|_| Default::default()),
        ..Default::default()
    };
    for a in assign_sections(doc, gold, normalizer) {
        let i = a.section - 1;
        counts.gold_counts[i] += 1;
        if !predictions.iter().any(|p| p.stems == a.phrase.stems) {
            counts.miss_counts[i] += 1;
        }
        if let (Some(soft), Some(sums)) = (soft, counts.soft_miss.as_mut()) {
            let mut best = 0.0f64;
            for p in predictions {
                best = best.max(apply(soft.score_fn, p, &a.phrase, soft.embeddings)?);
            }
            sums[i].add(1.0 - best);
        }
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionalReport {
    pub gold_counts: [usize; N_SECTIONS],
    pub miss_counts: [usize; N_SECTIONS],
    /// `None` for sections without gold phrases.
    pub miss_percent: [Option<f64>; N_SECTIONS],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soft_miss_percent: Option<[Option<f64>; N_SECTIONS]>,
}

impl PositionalReport {
    pub fn total_gold(&self) -> usize {
        self.gold_counts.iter().sum()
    }

    /// Sections whose miss rate is undefined.
    pub fn undefined_sections(&self) -> Vec<usize> {
        (1..=N_SECTIONS)
            .filter(|&s| self.miss_percent[s - 1].is_none())
            .collect()
    }
}

/// Exact-match positional report over `(document, gold, predictions)` triples.
pub fn positional_report<'a>(
    docs: impl IntoIterator<Item = (&'a Document, &'a [NormalizedPhrase], &'a [NormalizedPhrase])>,
    normalizer: &Normalizer,
) -> PositionalReport {
    let mut total = PositionalCounts::default();
    for (doc, gold, preds) in docs {
        let counts = document_counts(doc, gold, preds, normalizer, None)
            .expect("exact matching cannot fail");
        total.merge(&counts);
    }
    total.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn phrases(raw: &[&str]) -> Vec<NormalizedPhrase> {
        raw.iter()
            .map(|s| NormalizedPhrase::parse(s).unwrap())
            .collect()
    }

    #[test]
    fn section_boundaries() {
        assert_eq!(section_for(0, 100), 1);
        assert_eq!(section_for(19, 100), 1);
        assert_eq!(section_for(20, 100), 2);
        assert_eq!(section_for(85, 100), 5);
        assert_eq!(section_for(99, 100), 5);
        assert_eq!(section_for(3, 4), 1);
        assert_eq!(section_for(4, 5), 5);
    }

    fn hundred_char_doc() -> Document {
        // "alpha" at 0, "beta" at 20, "gamma" at 85.
        let mut text = vec![' '; 100];
        for (at, word) in [(0, "alpha"), (20, "beta"), (85, "gamma")] {
            for (i, c) in word.chars().enumerate() {
                text[at + i] = c;
            }
        }
        Document::new("d", text.into_iter().collect::<String>(), &[])
    }

    #[test]
    fn assigns_by_first_character() {
        let doc = hundred_char_doc();
        let n = Normalizer::new();
        let got = assign_sections(&doc, &phrases(&["alpha", "beta", "gamma", "delta"]), &n);
        let sections: Vec<_> = got.iter().map(|a| (a.first_char, a.section)).collect();
        assert_eq!(sections, vec![(0, 1), (20, 2), (85, 5)]);
    }

    #[test]
    fn miss_rates() {
        let doc = hundred_char_doc();
        let n = Normalizer::new();
        let gold = phrases(&["alpha", "beta", "gamma"]);

        let all = positional_report([(&doc, gold.as_slice(), gold.as_slice())], &n);
        assert_eq!(all.gold_counts, [1, 1, 0, 0, 1]);
        assert_eq!(
            all.miss_percent,
            [Some(0.0), Some(0.0), None, None, Some(0.0)]
        );
        assert_eq!(all.undefined_sections(), vec![3, 4]);

        let none = positional_report([(&doc, gold.as_slice(), &[][..])], &n);
        assert_eq!(
            none.miss_percent,
            [Some(100.0), Some(100.0), None, None, Some(100.0)]
        );
    }

    #[test]
    fn half_missed_section() {
        let doc = Document::new("d", "graph models and neural nets are here", &[]);
        let n = Normalizer::new();
        let gold = phrases(&["graph model", "neural"]);
        let preds = phrases(&["neural", "other"]);
        let r = positional_report([(&doc, gold.as_slice(), preds.as_slice())], &n);
        assert_eq!(r.gold_counts[0], 1);
        assert_eq!(r.total_gold(), 2);
        let counts = document_counts(&doc, &gold, &preds, &n, None).unwrap();
        assert_eq!(counts.miss_counts.iter().sum::<usize>(), 1);
    }

    #[test]
    fn soft_column_matches_exact_kernel() {
        let doc = hundred_char_doc();
        let n = Normalizer::new();
        let gold = phrases(&["alpha", "beta", "gamma"]);
        let preds = phrases(&["beta"]);
        let exact = ScoreFunction::exact();
        let soft = SoftMiss {
            score_fn: &exact,
            embeddings: None,
        };
        let r = document_counts(&doc, &gold, &preds, &n, Some(soft))
            .unwrap()
            .finish();
        assert_eq!(r.soft_miss_percent.unwrap(), r.miss_percent);

        let kmr = ScoreFunction::kmr();
        let doc = Document::new("d2", "neural graph model", &[]);
        let r = document_counts(
            &doc,
            &phrases(&["graph model"]),
            &phrases(&["graph system"]),
            &n,
            Some(SoftMiss {
                score_fn: &kmr,
                embeddings: None,
            }),
        )
        .unwrap()
        .finish();
        assert_eq!(r.miss_percent[1], Some(100.0));
        assert_eq!(r.soft_miss_percent.unwrap()[1], Some(50.0));
    }

    #[test]
    fn merge_adds_counts() {
        let doc = hundred_char_doc();
        let n = Normalizer::new();
        let gold = phrases(&["alpha", "gamma"]);
        let a = document_counts(&doc, &gold, &gold, &n, None).unwrap();
        let b = document_counts(&doc, &gold, &[], &n, None).unwrap();
        let mut m = a.clone();
        m.merge(&b);
        let r = m.finish();
        assert_eq!(r.gold_counts, [2, 0, 0, 0, 2]);
        assert_eq!(r.miss_percent[0], Some(50.0));
    }
}
