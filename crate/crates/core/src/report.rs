//! Corpus aggregation, correlation with human judgments and report output.
//!
//! JSON keeps full float precision; CSV tables render floats with four
//! decimals. Everything is written in a fixed order so identical inputs give
//! identical bytes.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::calibration::{
    calibrate_with, reliability_data, Binning, CalibrationReport, CalibrationSample,
};
use crate::confidence::{
    kpp_histogram, position_stats, HistogramConfig, KeyphraseConfidence, KppHistogram,
    PositionReport, PresenceFilter,
};
use crate::corpus::HumanScoreRecord;
use crate::error::{Error, Result};
use crate::evaluate::{DocEvaluation, EvalConfig, Split};
use crate::positional::{PositionalCounts, PositionalReport, N_SECTIONS};
use crate::softkeyscore::MetricResult;
use crate::stats::CompensatedSum;

/// Macro average of one metric over the documents where it is defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AggregateResult {
    pub p_score: f64,
    pub r_score: f64,
    pub f_score: f64,
    pub n_docs: usize,
    /// Documents left out because the metric is undefined for them.
    pub excluded: usize,
}

/// Arithmetic mean of per-document P, R and F. `None` when no document
/// has a defined result.
pub fn aggregate<'a>(
    results: impl IntoIterator<Item = &'a MetricResult>,
) -> Option<AggregateResult> {
    let (mut p, mut r, mut f) = (
        CompensatedSum::default(),
        CompensatedSum::default(),
        CompensatedSum::default(),
    );
    let (mut n, mut excluded) = (0usize, 0usize);
    for m in results {
        if m.is_defined() {
            p.add(m.p_score);
            r.add(m.r_score);
            f.add(m.f_score);
            n += 1;
        } else {
            excluded += 1;
        }
    }
    (n > 0).then(|| AggregateResult {
        p_score: p.value() / n as f64,
        r_score: r.value() / n as f64,
        f_score: f.value() / n as f64,
        n_docs: n,
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitAggregate {
    pub present: Option<AggregateResult>,
    pub absent: Option<AggregateResult>,
    pub all: Option<AggregateResult>,
}

impl SplitAggregate {
    pub fn get(&self, split: Split) -> Option<&AggregateResult> {
        match split {
            Split::All => self.all.as_ref(),
            Split::Present => self.present.as_ref(),
            Split::Absent => self.absent.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub n_docs: usize,
    pub per_metric: BTreeMap<String, SplitAggregate>,
    pub warnings: Vec<String>,
}

pub fn metrics_report(evals: &[DocEvaluation], config: &EvalConfig) -> Result<MetricsReport> {
    if evals.is_empty() {
        return Err(Error::Validation("no documents to aggregate".into()));
    }
    let mut per_metric = BTreeMap::new();
    let mut warnings = Vec::new();
    for (i, metric) in config.metrics.iter().enumerate() {
        let name = metric.name();
        let of = |split: Split| aggregate(evals.iter().map(|e| e.metrics[i].get(split)));
        let agg = SplitAggregate {
            present: of(Split::Present),
            absent: of(Split::Absent),
            all: of(Split::All),
        };
        for split in Split::ALL {
            if agg.get(split).is_none() {
                warnings.push(format!(
                    "{name} ({}) has no document with gold keyphrases; omitted",
                    split.name()
                ));
            }
        }
        per_metric.insert(name, agg);
    }
    Ok(MetricsReport {
        n_docs: evals.len(),
        per_metric,
        warnings,
    })
}

/// Calibration over pooled, present-only and absent-only keyphrases; a split
/// with no keyphrases is `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationSplits {
    pub pooled: Option<CalibrationReport>,
    pub present: Option<CalibrationReport>,
    pub absent: Option<CalibrationReport>,
}

fn samples(evals: &[DocEvaluation]) -> Vec<CalibrationSample> {
    evals
        .iter()
        .flat_map(|e| e.keyphrases.iter().map(|k| k.sample()))
        .collect()
}

fn has_any(samples: &[CalibrationSample], filter: PresenceFilter) -> bool {
    samples.iter().any(|s| filter.accepts(s.presence))
}

pub fn calibration_splits(
    evals: &[DocEvaluation],
    k: usize,
    binning: Binning,
) -> Result<CalibrationSplits> {
    let samples = samples(evals);
    let run = |filter| -> Result<Option<CalibrationReport>> {
        if has_any(&samples, filter) {
            calibrate_with(&samples, k, filter, binning).map(Some)
        } else {
            Ok(None)
        }
    };
    Ok(CalibrationSplits {
        pooled: run(PresenceFilter::All)?,
        present: run(PresenceFilter::Present)?,
        absent: run(PresenceFilter::Absent)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfidenceReport {
    pub histogram_all: KppHistogram,
    pub histogram_present: KppHistogram,
    pub histogram_absent: KppHistogram,
    pub positions: PositionReport,
}

pub fn confidence_report(
    evals: &[DocEvaluation],
    histogram: &HistogramConfig,
    n_positions: usize,
) -> Result<ConfidenceReport> {
    let items: Vec<KeyphraseConfidence> = evals
        .iter()
        .flat_map(|e| e.keyphrases.iter().map(|k| k.confidence.clone()))
        .collect();
    Ok(ConfidenceReport {
        histogram_all: kpp_histogram(&items, PresenceFilter::All, histogram)?,
        histogram_present: kpp_histogram(&items, PresenceFilter::Present, histogram)?,
        histogram_absent: kpp_histogram(&items, PresenceFilter::Absent, histogram)?,
        positions: position_stats(&items, n_positions, PresenceFilter::All),
    })
}

pub fn positional_summary(evals: &[DocEvaluation]) -> PositionalReport {
    let mut total = PositionalCounts::default();
    for e in evals {
        total.merge(&e.positional);
    }
    total.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusReport {
    pub n_docs: usize,
    pub per_metric: BTreeMap<String, SplitAggregate>,
    pub calibration: CalibrationSplits,
    pub positional: PositionalReport,
    pub confidence: ConfidenceReport,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportOptions {
    pub bins: usize,
    pub binning: Binning,
    pub histogram: HistogramConfig,
    pub n_positions: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            bins: crate::calibration::DEFAULT_BINS,
            binning: Binning::EqualWidth,
            histogram: HistogramConfig::default(),
            n_positions: 5,
        }
    }
}

pub fn corpus_report(
    evals: &[DocEvaluation],
    config: &EvalConfig,
    options: &ReportOptions,
) -> Result<CorpusReport> {
    let metrics = metrics_report(evals, config)?;
    Ok(CorpusReport {
        n_docs: metrics.n_docs,
        per_metric: metrics.per_metric,
        calibration: calibration_splits(evals, options.bins, options.binning)?,
        positional: positional_summary(evals),
        confidence: confidence_report(evals, &options.histogram, options.n_positions)?,
        warnings: metrics.warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationResult {
    pub metric: String,
    pub pearson_r: f64,
    pub n: usize,
    /// Ids present in only one of the two series.
    pub dropped: usize,
}

/// Sample Pearson correlation of two equally long series.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Validation(format!(
            "series lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!(
            "need at least 2 pairs, got {}",
            x.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().copied().collect::<CompensatedSum>().value() / n;
    let my = y.iter().copied().collect::<CompensatedSum>().value() / n;
    let (mut sxy, mut sxx, mut syy) = (
        CompensatedSum::default(),
        CompensatedSum::default(),
        CompensatedSum::default(),
    );
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy.add(dx * dy);
        sxx.add(dx * dx);
        syy.add(dy * dy);
    }
    let (sxx, syy) = (sxx.value(), syy.value());
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("a series is constant".into()));
    }
    Ok((sxy.value() / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Joins per-document metric values with human scores on `doc_id` and
/// correlates them. Pairs follow the order of `metric_scores`.
pub fn pearson(
    metric: &str,
    metric_scores: &[(String, f64)],
    human_scores: &[HumanScoreRecord],
) -> Result<CorrelationResult> {
    let mut human: HashMap<&str, f64> = HashMap::new();
    for h in human_scores {
        if human.insert(h.doc_id.as_str(), h.score).is_some() {
            return Err(Error::Validation(format!(
                "duplicate human score for doc_id {:?}",
                h.doc_id
            )));
        }
    }
    let mut seen = std::collections::HashSet::new();
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (id, score) in metric_scores {
        if !seen.insert(id.as_str()) {
            return Err(Error::Validation(format!(
                "duplicate metric score for doc_id {id:?}"
            )));
        }
        if let Some(&h) = human.get(id.as_str()) {
            x.push(*score);
            y.push(h);
        }
    }
    let dropped = metric_scores.len() + human_scores.len() - 2 * x.len();
    Ok(CorrelationResult {
        metric: metric.to_string(),
        pearson_r: pearson_r(&x, &y)?,
        n: x.len(),
        dropped,
    })
}

/// Per-document F of metric `index` on the given split, for documents where
/// it is defined.
pub fn per_document_scores(
    evals: &[DocEvaluation],
    index: usize,
    split: Split,
) -> Vec<(String, f64)> {
    evals
        .iter()
        .filter_map(|e| {
            let m = e.metrics[index].get(split);
            m.is_defined().then(|| (e.doc_id.clone(), m.f_score))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Format {
    Json,
    Csv,
    PlotData,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "plotdata" => Ok(Format::PlotData),
            other => Err(Error::Validation(format!(
                "unknown format {other:?}; expected json, csv or plotdata"
            ))),
        }
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

/// One row per metric with the macro F of each split.
pub fn metrics_csv(per_metric: &BTreeMap<String, SplitAggregate>) -> String {
    let mut out = String::from("metric,present,absent,all\n");
    for (name, agg) in per_metric {
        let f = |s: Split| cell(agg.get(s).map(|a| a.f_score));
        let _ = writeln!(
            out,
            "{name},{},{},{}",
            f(Split::Present),
            f(Split::Absent),
            f(Split::All)
        );
    }
    out
}

pub fn calibration_csv(splits: &CalibrationSplits) -> String {
    let mut out = String::from("split,bin,lo,hi,count,mean_conf,acc\n");
    for (name, report) in calibration_entries(splits) {
        for b in &report.bins {
            let _ = writeln!(
                out,
                "{name},{},{:.4},{:.4},{},{:.4},{:.4}",
                b.index, b.lo, b.hi, b.count, b.mean_confidence, b.accuracy
            );
        }
    }
    out
}

fn calibration_entries(splits: &CalibrationSplits) -> Vec<(&'static str, &CalibrationReport)> {
    [
        ("pooled", &splits.pooled),
        ("present", &splits.present),
        ("absent", &splits.absent),
    ]
    .into_iter()
    .filter_map(|(name, r)| r.as_ref().map(|r| (name, r)))
    .collect()
}

/// `{"pooled": [[midpoint, accuracy], ...], ...}` for reliability diagrams.
pub fn calibration_plotdata(splits: &CalibrationSplits) -> String {
    let map: BTreeMap<&str, Vec<[f64; 2]>> = calibration_entries(splits)
        .into_iter()
        .map(|(name, r)| {
            let pts = reliability_data(r)
                .into_iter()
                .map(|p| [p.midpoint, p.accuracy])
                .collect();
            (name, pts)
        })
        .collect();
    to_json(&map)
}

pub fn positional_csv(report: &PositionalReport) -> String {
    let soft = report.soft_miss_percent.is_some();
    let mut out = String::from("section,gold_count,miss_count,miss_percent");
    if soft {
        out.push_str(",soft_miss_percent");
    }
    out.push('\n');
    for i in 0..N_SECTIONS {
        let _ = write!(
            out,
            "{},{},{},{}",
            i + 1,
            report.gold_counts[i],
            report.miss_counts[i],
            cell(report.miss_percent[i])
        );
        if let Some(s) = &report.soft_miss_percent {
            let _ = write!(out, ",{}", cell(s[i]));
        }
        out.push('\n');
    }
    out
}

/// `[[section, miss_percent], ...]` over the sections with a defined rate.
pub fn positional_plotdata(report: &PositionalReport) -> String {
    let pts: Vec<(usize, f64)> = report
        .miss_percent
        .iter()
        .enumerate()
        .filter_map(|(i, m)| m.map(|v| (i + 1, v)))
        .collect();
    to_json(&pts)
}

pub fn confidence_csv(report: &ConfidenceReport) -> String {
    let mut out = String::from("split,lo,hi,count\n");
    for (name, h) in [
        ("all", &report.histogram_all),
        ("present", &report.histogram_present),
        ("absent", &report.histogram_absent),
    ] {
        for b in &h.bins {
            let _ = writeln!(out, "{name},{:.4},{:.4},{}", b.lo, b.hi, b.count);
        }
    }
    out
}

#[derive(Serialize)]
struct ConfidencePlot {
    histogram: BTreeMap<&'static str, Vec<(f64, usize)>>,
    median: BTreeMap<&'static str, Option<f64>>,
    /// `[position, whisker_low, q1, median, q3, whisker_high]`
    positions: Vec<(usize, f64, f64, f64, f64, f64)>,
}

/// Histogram bars as `[lo, count]` and box-plot rows per token position.
pub fn confidence_plotdata(report: &ConfidenceReport) -> String {
    let splits = [
        ("all", &report.histogram_all),
        ("present", &report.histogram_present),
        ("absent", &report.histogram_absent),
    ];
    let plot = ConfidencePlot {
        histogram: splits
            .iter()
            .map(|(n, h)| (*n, h.bins.iter().map(|b| (b.lo, b.count)).collect()))
            .collect(),
        median: splits.iter().map(|(n, h)| (*n, h.median)).collect(),
        positions: report
            .positions
            .stats
            .iter()
            .map(|s| {
                (
                    s.position,
                    s.whisker_low,
                    s.q1,
                    s.median,
                    s.q3,
                    s.whisker_high,
                )
            })
            .collect(),
    };
    to_json(&plot)
}

pub fn correlation_csv(results: &[CorrelationResult]) -> String {
    let mut out = String::from("metric,pearson_r,n,dropped\n");
    for r in results {
        let _ = writeln!(out, "{},{:.4},{},{}", r.metric, r.pearson_r, r.n, r.dropped);
    }
    out
}

/// Writes `contents` to `path`, or to stdout when `path` is `None`.
pub fn write_output(path: Option<&Path>, contents: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, contents).map_err(|e| Error::io(p, e)),
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            out.write_all(contents.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| Error::io(Path::new("<stdout>"), e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(f: f64, n_gold: usize) -> MetricResult {
        MetricResult {
            f_score: f,
            ..MetricResult::from_pr(f, f, 1, 1, n_gold)
        }
    }

    #[test]
    fn macro_average() {
        let a = aggregate(&[result(0.2, 1), result(0.4, 2)]).unwrap();
        assert!((a.f_score - 0.3).abs() < 1e-15);
        assert_eq!((a.n_docs, a.excluded), (2, 0));

        let b = aggregate(&[result(0.4, 1), result(0.0, 0)]).unwrap();
        assert_eq!(b.f_score, 0.4);
        assert_eq!(b.excluded, 1);

        let one = aggregate(&[result(0.7, 3)]).unwrap();
        assert_eq!(one.f_score, 0.7);
        assert!(aggregate(&[result(0.0, 0)]).is_none());
        assert!(aggregate(&[]).is_none());
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(pearson_r(&x, &x).unwrap(), 1.0);
        assert_eq!(pearson_r(&x, &neg).unwrap(), -1.0);
        assert_eq!(pearson_r(&[1.0, 2.0, 3.0], &[2.0, 1.0, 3.0]).unwrap(), 0.5);
        assert!(matches!(
            pearson_r(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(pearson_r(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn pearson_joins_on_doc_id() {
        let metric: Vec<(String, f64)> = [("a", 1.0), ("b", 2.0), ("c", 3.0), ("x", 9.0)]
            .iter()
            .map(|(d, v)| (d.to_string(), *v))
            .collect();
        let human: Vec<HumanScoreRecord> = [("c", 3.0), ("a", 2.0), ("b", 1.0), ("y", 0.0)]
            .iter()
            .map(|(d, v)| HumanScoreRecord {
                doc_id: d.to_string(),
                score: *v,
            })
            .collect();
        let r = pearson("F1@M", &metric, &human).unwrap();
        assert_eq!(r.pearson_r, 0.5);
        assert_eq!((r.n, r.dropped), (3, 2));
    }

    #[test]
    fn csv_layouts() {
        let mut per_metric = BTreeMap::new();
        let agg = aggregate(&[result(0.28571, 2)]);
        per_metric.insert(
            "F1@M".to_string(),
            SplitAggregate {
                present: agg,
                absent: None,
                all: agg,
            },
        );
        assert_eq!(
            metrics_csv(&per_metric),
            "metric,present,absent,all\nF1@M,0.2857,,0.2857\n"
        );

        let r = crate::calibration::calibrate(
            &[CalibrationSample {
                confidence: 0.25,
                correct: true,
                presence: crate::textnorm::PresenceLabel::Present,
            }],
            2,
            PresenceFilter::All,
        )
        .unwrap();
        let splits = CalibrationSplits {
            pooled: Some(r),
            present: None,
            absent: None,
        };
        assert_eq!(
            calibration_plotdata(&splits),
            "{\n  \"pooled\": [\n    [\n      0.25,\n      1.0\n    ]\n  ]\n}\n"
        );
        assert_eq!(calibration_csv(&splits).lines().count(), 3);
    }

    #[test]
    fn format_names() {
        assert_eq!("csv".parse::<Format>().unwrap(), Format::Csv);
        assert!("xml".parse::<Format>().is_err());
    }
}
