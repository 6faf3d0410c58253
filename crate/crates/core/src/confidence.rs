//! Keyphrase perplexity (KPP), keyphrase confidence and their distributions.
//!
//! For a keyphrase occupying tokens `j..=k` of a generated trace,
//! `KPP = (prod_{i=j..k} p(w_i | w_<i))^(-1/m)` with `m = k - j + 1`.
//! Confidence is `1 / KPP`, the geometric mean of the span's conditional
//! probabilities. Earlier keyphrases in the trace still condition later ones;
//! no correction is attempted for that.

use serde::{Deserialize, Serialize};

use crate::corpus::{KeyphraseSpan, TokenTrace};
use crate::error::{Error, Result};
use crate::stats::{median, quantile_sorted, sorted};
use crate::textnorm::PresenceLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PresenceFilter {
    #[default]
    All,
    Present,
    Absent,
}

impl PresenceFilter {
    pub fn accepts(self, label: PresenceLabel) -> bool {
        match self {
            PresenceFilter::All => true,
            PresenceFilter::Present => label == PresenceLabel::Present,
            PresenceFilter::Absent => label == PresenceLabel::Absent,
        }
    }
}

fn mean_log_prob(probs: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::Validation(
            "perplexity of an empty token sequence".into(),
        ));
    }
    let mut sum = 0.0;
    for &p in probs {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::Validation(format!(
                "probability {p} is outside (0, 1]"
            )));
        }
        sum += p.ln();
    }
    Ok(sum / probs.len() as f64)
}

/// Perplexity of a whole token sequence from its conditional probabilities.
pub fn perplexity(probs: &[f64]) -> Result<f64> {
    Ok((-mean_log_prob(probs)?).exp())
}

fn span_probs<'a>(trace: &'a TokenTrace, span: &KeyphraseSpan) -> Result<&'a [f64]> {
    span.check(trace)?;
    Ok(&trace.probs[span.start..=span.end])
}

pub fn kpp(trace: &TokenTrace, span: &KeyphraseSpan) -> Result<f64> {
    perplexity(span_probs(trace, span)?)
}

pub fn confidence(trace: &TokenTrace, span: &KeyphraseSpan) -> Result<f64> {
    Ok(mean_log_prob(span_probs(trace, span)?)?.exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyphraseConfidence {
    pub span: KeyphraseSpan,
    pub kpp: f64,
    pub confidence: f64,
    pub presence: PresenceLabel,
    /// Conditional probabilities of the span's tokens, in order.
    pub token_probs: Vec<f64>,
}

impl KeyphraseConfidence {
    pub fn compute(
        trace: &TokenTrace,
        span: KeyphraseSpan,
        presence: PresenceLabel,
    ) -> Result<Self> {
        let probs = span_probs(trace, &span)?;
        let mean_log = mean_log_prob(probs)?;
        Ok(KeyphraseConfidence {
            span,
            kpp: (-mean_log).exp(),
            confidence: mean_log.exp(),
            presence,
            token_probs: probs.to_vec(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramConfig {
    pub bin_width: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        HistogramConfig {
            bin_width: 0.1,
            lo: 1.0,
            hi: 5.0,
        }
    }
}

impl HistogramConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bin_width > 0.0
            && self.hi > self.lo
            && self.lo.is_finite()
            && self.hi.is_finite())
        {
            return Err(Error::Validation(format!(
                "histogram needs width > 0 and lo < hi, got width {} over [{}, {})",
                self.bin_width, self.lo, self.hi
            )));
        }
        Ok(())
    }

    fn n_bins(&self) -> usize {
        ((self.hi - self.lo) / self.bin_width).round().max(1.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KppHistogram {
    pub bins: Vec<HistogramBin>,
    /// Values below the configured range.
    pub underflow: usize,
    /// Values at or above the configured upper bound.
    pub overflow: usize,
    pub n: usize,
    /// `None` when no keyphrase passed the filter.
    pub median: Option<f64>,
}

impl KppHistogram {
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

/// Bins KPP values of the keyphrases accepted by `filter`.
pub fn kpp_histogram(
    items: &[KeyphraseConfidence],
    filter: PresenceFilter,
    config: &HistogramConfig,
) -> Result<KppHistogram> {
    config.validate()?;
    let n_bins = config.n_bins();
    let mut bins: Vec<HistogramBin> = (0..n_bins)
        .map(|i| HistogramBin {
            lo: config.lo + i as f64 * config.bin_width,
            hi: if i + 1 == n_bins {
                config.hi
            } else {
                config.lo + (i + 1) as f64 * config.bin_width
            },
            count: 0,
        })
        .collect();
    let values: Vec<f64> = items
        .iter()
        .filter(|c| filter.accepts(c.presence))
        .map(|c| c.kpp)
        .collect();
    let (mut underflow, mut overflow) = (0, 0);
    for &v in &values {
        // Small slack so values sitting on a bin edge land in the upper bin
        // despite rounding in (v - lo) / width.
        let pos = ((v - config.lo) / config.bin_width + 1e-9).floor();
        if v < config.lo {
            underflow += 1;
        } else if v >= config.hi || pos >= n_bins as f64 {
            overflow += 1;
        } else {
            bins[pos.max(0.0) as usize].count += 1;
        }
    }
    Ok(KppHistogram {
        bins,
        underflow,
        overflow,
        n: values.len(),
        median: median(values.iter().copied()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionStats {
    /// 1-based token position within the keyphrase.
    pub position: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionReport {
    pub stats: Vec<PositionStats>,
    /// Positions with no samples.
    pub omitted: Vec<usize>,
}

/// Box-plot summaries of the i-th token's conditional probability, pooled
/// over every accepted keyphrase, for `i = 1..=n_positions`.
pub fn position_stats(
    items: &[KeyphraseConfidence],
    n_positions: usize,
    filter: PresenceFilter,
) -> PositionReport {
    let mut report = PositionReport {
        stats: Vec::new(),
        omitted: Vec::new(),
    };
    for position in 1..=n_positions {
        let pool = sorted(
            items
                .iter()
                .filter(|c| filter.accepts(c.presence))
                .filter_map(|c| c.token_probs.get(position - 1).copied()),
        );
        match box_stats(&pool) {
            Some((q1, median, q3, whisker_low, whisker_high)) => report.stats.push(PositionStats {
                position,
                q1,
                median,
                q3,
                whisker_low,
                whisker_high,
                count: pool.len(),
            }),
            None => report.omitted.push(position),
        }
    }
    report
}

/// Quartiles and 1.5 IQR whiskers of ascending-sorted data. Whiskers reach
/// the most extreme data point inside the fences and never cross the box.
fn box_stats(sorted: &[f64]) -> Option<(f64, f64, f64, f64, f64)> {
    let q1 = quantile_sorted(sorted, 0.25)?;
    let median = quantile_sorted(sorted, 0.5)?;
    let q3 = quantile_sorted(sorted, 0.75)?;
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let low = sorted
        .iter()
        .copied()
        .find(|&v| v >= lo_fence)
        .unwrap_or(q1)
        .min(q1);
    let high = sorted
        .iter()
        .rev()
        .copied()
        .find(|&v| v <= hi_fence)
        .unwrap_or(q3)
        .max(q3);
    Some((q1, median, q3, low, high))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(probs: &[f64]) -> TokenTrace {
        TokenTrace {
            tokens: (0..probs.len()).map(|i| format!("w{i}")).collect(),
            probs: probs.to_vec(),
            special_mask: vec![false; probs.len()],
        }
    }

    fn whole(t: &TokenTrace) -> KeyphraseSpan {
        KeyphraseSpan::new(0, t.len() - 1)
    }

    #[test]
    fn kpp_examples() {
        let t = trace(&[1.0, 1.0]);
        assert_eq!(kpp(&t, &whole(&t)).unwrap(), 1.0);
        let t = trace(&[0.25]);
        assert!((kpp(&t, &whole(&t)).unwrap() - 4.0).abs() < 1e-12);
        let t = trace(&[0.5, 0.5]);
        assert!((kpp(&t, &whole(&t)).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn confidence_examples() {
        let t = trace(&[0.5, 0.5]);
        assert!((confidence(&t, &whole(&t)).unwrap() - 0.5).abs() < 1e-15);
        let t = trace(&[1.0]);
        assert_eq!(confidence(&t, &whole(&t)).unwrap(), 1.0);
        let t = trace(&[0.9, 0.4, 0.9]);
        // cube root of 0.324
        assert!((confidence(&t, &whole(&t)).unwrap() - 0.686_828_545_531_999_1).abs() < 1e-12);
    }

    #[test]
    fn kpp_rejects_special_tokens_and_bad_probs() {
        let mut t = trace(&[0.5, 0.5]);
        t.special_mask[1] = true;
        assert!(kpp(&t, &whole(&t)).is_err());
        let mut t = trace(&[0.5, 0.5]);
        t.probs[0] = 0.0;
        assert!(kpp(&t, &whole(&t)).is_err());
        t.probs[0] = f64::NAN;
        assert!(kpp(&t, &whole(&t)).is_err());
    }

    fn item(kpp: f64, presence: PresenceLabel) -> KeyphraseConfidence {
        KeyphraseConfidence {
            span: KeyphraseSpan::new(0, 0),
            kpp,
            confidence: 1.0 / kpp,
            presence,
            token_probs: vec![1.0 / kpp],
        }
    }

    #[test]
    fn histogram_bins_and_median() {
        let items = vec![
            item(1.2, PresenceLabel::Present),
            item(1.25, PresenceLabel::Present),
        ];
        let h = kpp_histogram(&items, PresenceFilter::All, &HistogramConfig::default()).unwrap();
        let nonempty: Vec<_> = h.bins.iter().filter(|b| b.count > 0).collect();
        assert_eq!(nonempty.len(), 1);
        assert!((nonempty[0].lo - 1.2).abs() < 1e-12);
        assert_eq!(nonempty[0].count, 2);
        assert_eq!(h.bins.len(), 40);

        let empty = kpp_histogram(&[], PresenceFilter::All, &HistogramConfig::default()).unwrap();
        assert!(empty.is_empty());
        assert_eq!(empty.median, None);

        let three: Vec<_> = [1.0, 2.0, 3.0]
            .iter()
            .map(|&k| item(k, PresenceLabel::Absent))
            .collect();
        let h = kpp_histogram(&three, PresenceFilter::Absent, &HistogramConfig::default()).unwrap();
        assert_eq!(h.median, Some(2.0));
        let h =
            kpp_histogram(&three, PresenceFilter::Present, &HistogramConfig::default()).unwrap();
        assert!(h.is_empty());
    }

    #[test]
    fn histogram_edges_and_overflow() {
        let items: Vec<_> = [1.7, 1.3, 5.0, 7.5]
            .iter()
            .map(|&k| item(k, PresenceLabel::Present))
            .collect();
        let h = kpp_histogram(&items, PresenceFilter::All, &HistogramConfig::default()).unwrap();
        assert_eq!(h.bins[7].count, 1);
        assert_eq!(h.bins[3].count, 1);
        assert_eq!(h.overflow, 2);
    }

    #[test]
    fn position_pools() {
        let mut one = item(1.0, PresenceLabel::Present);
        one.token_probs = vec![0.2, 0.4, 0.6];
        let report = position_stats(&[one], 5, PresenceFilter::All);
        assert_eq!(report.stats.len(), 3);
        assert_eq!(report.omitted, vec![4, 5]);

        let items: Vec<_> = [0.2, 0.4, 0.6, 0.8]
            .iter()
            .map(|&p| KeyphraseConfidence {
                token_probs: vec![p],
                ..item(1.0, PresenceLabel::Present)
            })
            .collect();
        let s = &position_stats(&items, 1, PresenceFilter::All).stats[0];
        assert!((s.median - 0.5).abs() < 1e-15);

        let items: Vec<_> = [0.1, 0.1, 0.9]
            .iter()
            .map(|&p| KeyphraseConfidence {
                token_probs: vec![p],
                ..item(1.0, PresenceLabel::Present)
            })
            .collect();
        let s = &position_stats(&items, 1, PresenceFilter::All).stats[0];
        assert_eq!(s.median, 0.1);
        assert!((s.q3 - 0.5).abs() < 1e-15);
        assert!(s.whisker_low <= s.q1 && s.q3 <= s.whisker_high);
    }
}
