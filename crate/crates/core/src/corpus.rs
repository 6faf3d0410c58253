//! Corpus data model and line-delimited JSON ingestion.
//!
//! Three input files are understood, each holding one JSON object per line:
//!
//! - documents: `{"doc_id": str, "text": str, "gold": [str, ...]}`
//! - predictions: `{"doc_id": str, "tokens": [str], "probs": [float],
//!   "special_mask": [bool]?, "spans": [[int, int], ...]?}`
//! - human scores: `{"doc_id": str, "score": float}`
//!
//! Spans are 0-based and inclusive on both ends. When `spans` is absent they
//! are derived with [`segment_spans`]; when `special_mask` is absent it is
//! derived from the delimiter set. Blank lines are skipped.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textnorm::{self, normalize, NormalizedPhrase};

/// Delimiter tokens recognized when a prediction line carries no mask.
pub const DEFAULT_DELIMITERS: &[&str] = &[";", "<sep>", "<eos>", "</s>"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Keyphrase {
    pub raw: String,
    pub tokens: Vec<String>,
    pub stemmed: Vec<String>,
}

impl Keyphrase {
    /// Derives tokens and stems from the raw string. The token list may be
    /// empty here; [`normalize`] rejects such phrases.
    pub fn new(raw: impl Into<String>) -> Self {
        let raw = raw.into();
        let tokens = textnorm::tokenize(&raw);
        let stemmed = tokens.iter().map(|t| textnorm::stem(t)).collect();
        Keyphrase {
            raw,
            tokens,
            stemmed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    pub gold: Vec<Keyphrase>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>, gold: &[&str]) -> Self {
        Document {
            doc_id: doc_id.into(),
            text: text.into(),
            gold: gold.iter().map(|g| Keyphrase::new(*g)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenTrace {
    pub tokens: Vec<String>,
    pub probs: Vec<f64>,
    pub special_mask: Vec<bool>,
}

impl TokenTrace {
    /// Builds a trace whose mask marks every token found in `delimiters`.
    pub fn with_delimiters(
        tokens: Vec<String>,
        probs: Vec<f64>,
        delimiters: &BTreeSet<String>,
    ) -> Result<Self> {
        let special_mask = tokens.iter().map(|t| delimiters.contains(t)).collect();
        let trace = TokenTrace {
            tokens,
            probs,
            special_mask,
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens.len() != self.probs.len() || self.tokens.len() != self.special_mask.len() {
            return Err(Error::Validation(format!(
                "trace lengths differ: {} tokens, {} probs, {} mask entries",
                self.tokens.len(),
                self.probs.len(),
                self.special_mask.len()
            )));
        }
        for (i, &p) in self.probs.iter().enumerate() {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Validation(format!(
                    "probability {p} at token {i} is outside (0, 1]; keyphrase perplexity is undefined there"
                )));
            }
        }
        Ok(())
    }
}

/// Inclusive token range `[start, end]` within a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct KeyphraseSpan {
    pub start: usize,
    pub end: usize,
}

impl KeyphraseSpan {
    pub fn new(start: usize, end: usize) -> Self {
        KeyphraseSpan { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn check(&self, trace: &TokenTrace) -> Result<()> {
        if self.start > self.end || self.end >= trace.len() {
            return Err(Error::Validation(format!(
                "span [{}, {}] out of range for trace of length {}",
                self.start,
                self.end,
                trace.len()
            )));
        }
        if let Some(i) = (self.start..=self.end).find(|&i| trace.special_mask[i]) {
            return Err(Error::Validation(format!(
                "span [{}, {}] includes special token {:?} at {i}",
                self.start, self.end, trace.tokens[i]
            )));
        }
        Ok(())
    }
}

/// Maximal runs of non-special tokens; a token is a boundary when it is
/// masked or belongs to `delimiters`.
pub fn segment_spans(trace: &TokenTrace, delimiters: &BTreeSet<String>) -> Vec<KeyphraseSpan> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, token) in trace.tokens.iter().enumerate() {
        let boundary =
            trace.special_mask.get(i).copied().unwrap_or(false) || delimiters.contains(token);
        match (boundary, start) {
            (true, Some(s)) => {
                spans.push(KeyphraseSpan::new(s, i - 1));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push(KeyphraseSpan::new(s, trace.len() - 1));
    }
    spans
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub doc_id: String,
    pub trace: TokenTrace,
    pub spans: Vec<KeyphraseSpan>,
    pub phrases: Vec<Keyphrase>,
}

impl PredictionRecord {
    /// Validates spans against the trace and derives one phrase per span.
    pub fn new(
        doc_id: impl Into<String>,
        trace: TokenTrace,
        spans: Vec<KeyphraseSpan>,
    ) -> Result<Self> {
        trace.validate()?;
        for (i, span) in spans.iter().enumerate() {
            span.check(&trace)?;
            if i > 0 && spans[i - 1].end >= span.start {
                return Err(Error::Validation(format!(
                    "spans must be non-overlapping and increasing: [{}, {}] then [{}, {}]",
                    spans[i - 1].start,
                    spans[i - 1].end,
                    span.start,
                    span.end
                )));
            }
        }
        let phrases = spans
            .iter()
            .map(|s| {
                let phrase = Keyphrase::new(trace.tokens[s.start..=s.end].join(" "));
                normalize(&phrase)?;
                Ok(phrase)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PredictionRecord {
            doc_id: doc_id.into(),
            trace,
            spans,
            phrases,
        })
    }

    /// Normalized phrases paired with their spans, in generation order.
    pub fn normalized(&self) -> Vec<(KeyphraseSpan, NormalizedPhrase)> {
        self.spans
            .iter()
            .zip(&self.phrases)
            .map(|(s, p)| (*s, normalize(p).expect("validated at construction")))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanScoreRecord {
    pub doc_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadOptions {
    pub delimiters: BTreeSet<String>,
    /// The predictions file stores natural-log probabilities.
    pub log_probs: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            delimiters: DEFAULT_DELIMITERS.iter().map(|s| s.to_string()).collect(),
            log_probs: false,
        }
    }
}

/// Documents paired with their (at most one) prediction record.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    documents: Vec<Document>,
    predictions: Vec<PredictionRecord>,
    by_doc: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(documents: Vec<Document>, predictions: Vec<PredictionRecord>) -> Result<Self> {
        let mut doc_ids = HashMap::new();
        for (i, doc) in documents.iter().enumerate() {
            validate_document(doc)?;
            if doc_ids.insert(doc.doc_id.as_str(), i).is_some() {
                return Err(Error::Validation(format!(
                    "duplicate doc_id {:?}",
                    doc.doc_id
                )));
            }
        }
        let mut by_doc = HashMap::new();
        let mut orphans = BTreeSet::new();
        for (i, pred) in predictions.iter().enumerate() {
            if !doc_ids.contains_key(pred.doc_id.as_str()) {
                orphans.insert(pred.doc_id.clone());
            } else if by_doc.insert(pred.doc_id.clone(), i).is_some() {
                return Err(Error::Validation(format!(
                    "more than one prediction record for doc_id {:?}",
                    pred.doc_id
                )));
            }
        }
        if !orphans.is_empty() {
            return Err(Error::OrphanPredictions(orphans.into_iter().collect()));
        }
        Ok(Corpus {
            documents,
            predictions,
            by_doc,
        })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn predictions(&self) -> &[PredictionRecord] {
        &self.predictions
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn prediction_for(&self, doc_id: &str) -> Option<&PredictionRecord> {
        self.by_doc.get(doc_id).map(|&i| &self.predictions[i])
    }

    /// Every document in file order with its prediction record, if any.
    pub fn pairs(&self) -> impl Iterator<Item = (&Document, Option<&PredictionRecord>)> {
        self.documents
            .iter()
            .map(move |d| (d, self.prediction_for(&d.doc_id)))
    }
}

fn validate_document(doc: &Document) -> Result<()> {
    if doc.doc_id.is_empty() {
        return Err(Error::Validation("empty doc_id".into()));
    }
    if doc.text.is_empty() {
        return Err(Error::Validation(format!(
            "document {:?} has empty text",
            doc.doc_id
        )));
    }
    for g in &doc.gold {
        normalize(g)?;
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct DocumentLine {
    doc_id: String,
    text: String,
    gold: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionLine {
    doc_id: String,
    tokens: Vec<String>,
    probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    special_mask: Option<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spans: Option<Vec<[usize; 2]>>,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Parses each non-blank line, attaching the 1-based line number to any
/// failure raised by `parse_line`.
pub(crate) fn read_jsonl_records<R, T, F>(
    reader: R,
    path: &Path,
    mut parse_line: F,
) -> Result<Vec<T>>
where
    R: BufRead,
    F: FnMut(&str) -> std::result::Result<T, String>,
{
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_line(&line).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn read_documents<R: BufRead>(reader: R, path: &Path) -> Result<Vec<Document>> {
    read_jsonl_records(reader, path, |line| {
        let rec: DocumentLine = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let doc = Document {
            doc_id: rec.doc_id,
            gold: rec.gold.into_iter().map(Keyphrase::new).collect(),
            text: rec.text,
        };
        validate_document(&doc).map_err(|e| e.to_string())?;
        Ok(doc)
    })
}

pub fn read_predictions<R: BufRead>(
    reader: R,
    path: &Path,
    options: &LoadOptions,
) -> Result<Vec<PredictionRecord>> {
    read_jsonl_records(reader, path, |line| {
        let rec: PredictionLine = serde_json::from_str(line).map_err(|e| e.to_string())?;
        prediction_from_line(rec, options).map_err(|e| e.to_string())
    })
}

fn prediction_from_line(rec: PredictionLine, options: &LoadOptions) -> Result<PredictionRecord> {
    let probs = if options.log_probs {
        rec.probs
            .iter()
            .map(|&lp| {
                if lp.is_nan() || lp > 0.0 {
                    Err(Error::Validation(format!(
                        "log-probability {lp} is not <= 0"
                    )))
                } else {
                    Ok(lp.exp())
                }
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        rec.probs
    };
    let trace = match rec.special_mask {
        Some(special_mask) => {
            let trace = TokenTrace {
                tokens: rec.tokens,
                probs,
                special_mask,
            };
            trace.validate()?;
            trace
        }
        None => TokenTrace::with_delimiters(rec.tokens, probs, &options.delimiters)?,
    };
    let spans = match rec.spans {
        Some(spans) => spans
            .into_iter()
            .map(|[s, e]| KeyphraseSpan::new(s, e))
            .collect(),
        None => segment_spans(&trace, &options.delimiters),
    };
    PredictionRecord::new(rec.doc_id, trace, spans)
}

pub fn load_documents(path: &Path) -> Result<Vec<Document>> {
    read_documents(open(path)?, path)
}

pub fn load_predictions(path: &Path, options: &LoadOptions) -> Result<Vec<PredictionRecord>> {
    read_predictions(open(path)?, path, options)
}

pub fn load_corpus(documents_path: &Path, predictions_path: &Path) -> Result<Corpus> {
    load_corpus_with(documents_path, predictions_path, &LoadOptions::default())
}

pub fn load_corpus_with(
    documents_path: &Path,
    predictions_path: &Path,
    options: &LoadOptions,
) -> Result<Corpus> {
    let documents = load_documents(documents_path)?;
    let predictions = load_predictions(predictions_path, options)?;
    Corpus::new(documents, predictions)
}

pub fn read_human_scores<R: BufRead>(reader: R, path: &Path) -> Result<Vec<HumanScoreRecord>> {
    read_jsonl_records(reader, path, |line| {
        let rec: HumanScoreRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
        if !(0.0..=1.0).contains(&rec.score) {
            return Err(format!(
                "score {} for {:?} is outside [0, 1]",
                rec.score, rec.doc_id
            ));
        }
        Ok(rec)
    })
}

pub fn load_human_scores(path: &Path) -> Result<Vec<HumanScoreRecord>> {
    read_human_scores(open(path)?, path)
}

fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for rec in records {
        let line = serde_json::to_string(&rec).expect("record serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_documents(path: &Path, documents: &[Document]) -> Result<()> {
    write_jsonl(
        path,
        documents.iter().map(|d| DocumentLine {
            doc_id: d.doc_id.clone(),
            text: d.text.clone(),
            gold: d.gold.iter().map(|g| g.raw.clone()).collect(),
        }),
    )
}

/// Writes predictions with explicit masks and spans so reloading does not
/// depend on the delimiter set.
pub fn write_predictions(path: &Path, predictions: &[PredictionRecord]) -> Result<()> {
    write_jsonl(
        path,
        predictions.iter().map(|p| PredictionLine {
            doc_id: p.doc_id.clone(),
            tokens: p.trace.tokens.clone(),
            probs: p.trace.probs.clone(),
            special_mask: Some(p.trace.special_mask.clone()),
            spans: Some(p.spans.iter().map(|s| [s.start, s.end]).collect()),
        }),
    )
}

pub fn write_human_scores(path: &Path, scores: &[HumanScoreRecord]) -> Result<()> {
    write_jsonl(path, scores)
}

/// Writes both corpus files; the inverse of [`load_corpus`].
pub fn write_corpus(corpus: &Corpus, documents_path: &Path, predictions_path: &Path) -> Result<()> {
    write_documents(documents_path, corpus.documents())?;
    write_predictions(predictions_path, corpus.predictions())
}
