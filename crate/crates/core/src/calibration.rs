//! Keyphrase-level expected calibration error and reliability-diagram data.
//!
//! Confidence is the inverse keyphrase perplexity; a keyphrase counts as
//! accurate when its stems exactly match some gold keyphrase. With `k` bins
//! over `[0, 1]`:
//!
//! ```text
//! ECE = sum_i |B_i| / n * |acc(B_i) - confid(B_i)|
//! ```
//!
//! Each bin's term is evaluated as `|correct_i - sum_conf_i| / n`, which is the
//! same quantity without the intermediate divisions.

use serde::{Deserialize, Serialize};

use crate::confidence::PresenceFilter;
use crate::error::{Error, Result};
use crate::stats::{quantile_sorted, sorted, CompensatedSum};
use crate::textnorm::{NormalizedPhrase, PresenceLabel};

pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binning {
    #[default]
    EqualWidth,
    EqualMass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub confidence: f64,
    pub correct: bool,
    pub presence: PresenceLabel,
}

/// Exact stemmed match against any gold phrase.
pub fn correctness(pred: &NormalizedPhrase, gold: &[NormalizedPhrase]) -> bool {
    gold.iter().any(|g| g.stems == pred.stems)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    /// 1-based.
    pub index: usize,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    #[serde(rename = "mean_conf")]
    pub mean_confidence: f64,
    #[serde(rename = "acc")]
    pub accuracy: f64,
}

impl CalibrationBin {
    pub fn midpoint(&self) -> f64 {
        (self.lo + self.hi) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub k: usize,
    pub ece_percent: f64,
    /// ECE as a fraction in `[0, 1]`.
    pub ece: f64,
    pub n: usize,
    pub binning: Binning,
    pub bins: Vec<CalibrationBin>,
}

/// Running per-bin totals. Partial accumulators over disjoint sample sets
/// merge into the same state as one pass over their union.
#[derive(Debug, Clone, PartialEq)]
pub struct BinAccumulator {
    edges: Vec<f64>,
    counts: Vec<usize>,
    correct: Vec<usize>,
    conf_sums: Vec<CompensatedSum>,
    uniform: bool,
}

impl BinAccumulator {
    pub fn equal_width(k: usize) -> Result<Self> {
        check_k(k)?;
        let edges = (0..=k).map(|i| i as f64 / k as f64).collect();
        Ok(Self::with_edges(edges, true))
    }

    /// Bin edges at the empirical `i/k` quantiles of `confidences`; tied
    /// edges leave empty bins.
    pub fn equal_mass(k: usize, confidences: &[f64]) -> Result<Self> {
        check_k(k)?;
        let sorted = sorted(confidences.iter().copied());
        let mut edges = vec![0.0];
        for i in 1..k {
            let q = quantile_sorted(&sorted, i as f64 / k as f64).unwrap_or(i as f64 / k as f64);
            edges.push(q.max(*edges.last().expect("non-empty")));
        }
        edges.push(1.0);
        Ok(Self::with_edges(edges, false))
    }

    fn with_edges(edges: Vec<f64>, uniform: bool) -> Self {
        let k = edges.len() - 1;
        BinAccumulator {
            edges,
            counts: vec![0; k],
            correct: vec![0; k],
            conf_sums: vec![CompensatedSum::default(); k],
            uniform,
        }
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    fn bin_of(&self, confidence: f64) -> usize {
        let k = self.k();
        if self.uniform {
            ((confidence * k as f64).floor() as usize).min(k - 1)
        } else {
            // Number of interior edges at or below the value.
            self.edges[1..k].partition_point(|&e| e <= confidence)
        }
    }

    pub fn add(&mut self, sample: &CalibrationSample) {
        let i = self.bin_of(sample.confidence);
        self.counts[i] += 1;
        self.correct[i] += usize::from(sample.correct);
        self.conf_sums[i].add(sample.confidence);
    }

    pub fn merge(&mut self, other: &BinAccumulator) -> Result<()> {
        if self.edges != other.edges {
            return Err(Error::Validation(
                "cannot merge calibration bins with different edges".into(),
            ));
        }
        for i in 0..self.k() {
            self.counts[i] += other.counts[i];
            self.correct[i] += other.correct[i];
            self.conf_sums[i].merge(&other.conf_sums[i]);
        }
        Ok(())
    }

    pub fn finish(&self, binning: Binning) -> Result<CalibrationReport> {
        let n: usize = self.counts.iter().sum();
        if n == 0 {
            return Err(Error::Validation(
                "calibration needs at least one keyphrase".into(),
            ));
        }
        let mut gap = CompensatedSum::default();
        let mut bins = Vec::with_capacity(self.k());
        for i in 0..self.k() {
            let count = self.counts[i];
            let conf_sum = self.conf_sums[i].value();
            gap.add((self.correct[i] as f64 - conf_sum).abs());
            let (mean_confidence, accuracy) = if count == 0 {
                (0.0, 0.0)
            } else {
                (
                    conf_sum / count as f64,
                    self.correct[i] as f64 / count as f64,
                )
            };
            bins.push(CalibrationBin {
                index: i + 1,
                lo: self.edges[i],
                hi: self.edges[i + 1],
                count,
                mean_confidence,
                accuracy,
            });
        }
        let total_gap = gap.value();
        Ok(CalibrationReport {
            k: self.k(),
            ece_percent: 100.0 * total_gap / n as f64,
            ece: total_gap / n as f64,
            n,
            binning,
            bins,
        })
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Validation("calibration needs k >= 1 bins".into()));
    }
    Ok(())
}

pub fn calibrate(
    samples: &[CalibrationSample],
    k: usize,
    filter: PresenceFilter,
) -> Result<CalibrationReport> {
    calibrate_with(samples, k, filter, Binning::EqualWidth)
}

pub fn calibrate_with(
    samples: &[CalibrationSample],
    k: usize,
    filter: PresenceFilter,
    binning: Binning,
) -> Result<CalibrationReport> {
    let mut selected: Vec<&CalibrationSample> = samples
        .iter()
        .filter(|s| filter.accepts(s.presence))
        .collect();
    // A fixed accumulation order makes the result independent of input order.
    selected.sort_by(|a, b| {
        a.confidence
            .total_cmp(&b.confidence)
            .then(a.correct.cmp(&b.correct))
    });
    for s in &selected {
        if !(s.confidence > 0.0 && s.confidence <= 1.0) {
            return Err(Error::Validation(format!(
                "confidence {} is outside (0, 1]",
                s.confidence
            )));
        }
    }
    let mut acc = match binning {
        Binning::EqualWidth => BinAccumulator::equal_width(k)?,
        Binning::EqualMass => {
            let confs: Vec<f64> = selected.iter().map(|s| s.confidence).collect();
            BinAccumulator::equal_mass(k, &confs)?
        }
    };
    for s in selected {
        acc.add(s);
    }
    acc.finish(binning)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityPoint {
    pub midpoint: f64,
    pub accuracy: f64,
    pub count: usize,
    pub mean_confidence: f64,
}

/// One point per non-empty bin, in ascending confidence order.
pub fn reliability_data(report: &CalibrationReport) -> Vec<ReliabilityPoint> {
    report
        .bins
        .iter()
        .filter(|b| b.count > 0)
        .map(|b| ReliabilityPoint {
            midpoint: b.midpoint(),
            accuracy: b.accuracy,
            count: b.count,
            mean_confidence: b.mean_confidence,
        })
        .collect()
}
