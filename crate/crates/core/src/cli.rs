//! Command-line interface.
//!
//! Exit status: 0 on success, 1 for usage and validation errors, 2 for I/O
//! and network failures.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::calibration::{Binning, DEFAULT_BINS};
use crate::confidence::HistogramConfig;
use crate::corpus::{load_documents, load_human_scores, load_predictions, Corpus, LoadOptions};
use crate::embedding::{CacheProvider, EmbeddingProvider, HttpProvider};
use crate::error::{Error, Result};
use crate::evaluate::{evaluate_corpus, DocEvaluation, EvalConfig, Split};
use crate::matching::{ScoreFunction, ScoreKind, DEFAULT_THRESHOLD};
use crate::report::{
    calibration_csv, calibration_plotdata, calibration_splits, confidence_csv, confidence_plotdata,
    confidence_report, corpus_report, correlation_csv, metrics_csv, metrics_report, pearson,
    per_document_scores, positional_csv, positional_plotdata, positional_summary, to_json,
    write_output, Format, ReportOptions,
};
use crate::softkeyscore::{MetricConfig, Selection};

/// Environment variable naming an embedding service; it takes precedence
/// over `--embeddings`.
pub const EMBED_URL_ENV: &str = "KEYSCORE_EMBED_URL";

#[derive(Debug, Parser)]
#[command(
    name = "keyscore",
    version,
    about = "Evaluate generated keyphrases against gold sets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Macro-averaged exact and soft F-scores, split by presence.
    Evaluate(CommonArgs),
    /// Expected calibration error and reliability-diagram bins.
    Calibrate(CommonArgs),
    /// Gold keyphrase counts and miss rates per document section.
    Positional(CommonArgs),
    /// Keyphrase perplexity histograms and per-position probability spread.
    Confidence(CommonArgs),
    /// Pearson correlation between per-document metric values and human scores.
    Correlate(CorrelateArgs),
    /// Every analysis in one JSON document.
    Report(CommonArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BinningArg {
    EqualWidth,
    EqualMass,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Documents file (JSON lines).
    #[arg(long)]
    docs: Option<PathBuf>,
    /// Predictions file (JSON lines); without it every document has no predictions.
    #[arg(long)]
    preds: Option<PathBuf>,
    /// Kernels to score with: f1, kmr, embed.
    #[arg(long, value_delimiter = ',', default_value = "f1")]
    metric: Vec<String>,
    /// Selection policies: m for all predictions, or a cutoff such as 5.
    #[arg(long, value_delimiter = ',', default_value = "m")]
    at: Vec<String>,
    /// Soft kernel threshold; values below it count as 0.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Apply the threshold to the raw embedding score before rescaling.
    #[arg(long)]
    threshold_before_rescale: bool,
    /// Baseline for embedding score rescaling.
    #[arg(long)]
    rescale_baseline: Option<f64>,
    /// Embedding cache file or service URL.
    #[arg(long)]
    embeddings: Option<String>,
    /// Encoder model id for the embedding cache or service.
    #[arg(long)]
    model_id: Option<String>,
    /// Calibration bin count.
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[arg(long, value_enum, default_value = "equal-width")]
    binning: BinningArg,
    /// KPP histogram bin width.
    #[arg(long, default_value_t = 0.1)]
    hist_width: f64,
    #[arg(long, default_value_t = 1.0)]
    hist_lo: f64,
    #[arg(long, default_value_t = 5.0)]
    hist_hi: f64,
    /// Token positions summarized by the confidence command.
    #[arg(long, default_value_t = 5)]
    positions: usize,
    /// Remove gold keyphrases that repeat an earlier one after stemming.
    #[arg(long)]
    dedup_gold: bool,
    /// Prediction probabilities are natural logarithms.
    #[arg(long)]
    log_probs: bool,
    /// Delimiter token between keyphrases (repeatable; replaces the defaults).
    #[arg(long = "delimiter")]
    delimiters: Vec<String>,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    workers: Option<usize>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// json, csv or plotdata.
    #[arg(long, default_value = "json")]
    format: String,
}

#[derive(Debug, Args)]
struct CorrelateArgs {
    /// Human scores file (JSON lines of doc_id and score).
    #[arg(long)]
    human: PathBuf,
    /// Precomputed per-document metric values, same layout as --human.
    #[arg(long)]
    scores: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

/// Runs the CLI and returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_io() {
                2
            } else {
                1
            }
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Evaluate(args) => {
            let (config, evals) = evaluate(&args)?;
            let report = metrics_report(&evals, &config)?;
            warn(&report.warnings);
            let text = match args.format()? {
                Format::Json => to_json(&report),
                Format::Csv => metrics_csv(&report.per_metric),
                Format::PlotData => to_json(&report.per_metric),
            };
            write_output(args.out.as_deref(), &text)
        }
        Command::Calibrate(args) => {
            let (_, evals) = evaluate(&args)?;
            let splits = calibration_splits(&evals, args.bins, args.binning())?;
            if splits.pooled.is_none() {
                return Err(Error::Validation(
                    "calibration needs at least one keyphrase".into(),
                ));
            }
            let text = match args.format()? {
                Format::Json => to_json(&splits),
                Format::Csv => calibration_csv(&splits),
                Format::PlotData => calibration_plotdata(&splits),
            };
            write_output(args.out.as_deref(), &text)
        }
        Command::Positional(args) => {
            let (_, evals) = evaluate(&args)?;
            let report = positional_summary(&evals);
            let text = match args.format()? {
                Format::Json => to_json(&report),
                Format::Csv => positional_csv(&report),
                Format::PlotData => positional_plotdata(&report),
            };
            write_output(args.out.as_deref(), &text)
        }
        Command::Confidence(args) => {
            let (_, evals) = evaluate(&args)?;
            let report = confidence_report(&evals, &args.histogram(), args.positions)?;
            let text = match args.format()? {
                Format::Json => to_json(&report),
                Format::Csv => confidence_csv(&report),
                Format::PlotData => confidence_plotdata(&report),
            };
            write_output(args.out.as_deref(), &text)
        }
        Command::Correlate(args) => correlate(&args),
        Command::Report(args) => {
            if args.format()? != Format::Json {
                return Err(Error::Validation(
                    "the report command writes JSON only".into(),
                ));
            }
            let (config, evals) = evaluate(&args)?;
            let options = ReportOptions {
                bins: args.bins,
                binning: args.binning(),
                histogram: args.histogram(),
                n_positions: args.positions,
            };
            let report = corpus_report(&evals, &config, &options)?;
            warn(&report.warnings);
            write_output(args.out.as_deref(), &to_json(&report))
        }
    }
}

fn warn(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn correlate(args: &CorrelateArgs) -> Result<()> {
    let human = load_human_scores(&args.human)?;
    let results = match &args.scores {
        Some(path) => {
            let scores: Vec<(String, f64)> = load_human_scores(path)?
                .into_iter()
                .map(|r| (r.doc_id, r.score))
                .collect();
            vec![pearson("scores", &scores, &human)?]
        }
        None => {
            let (config, evals) = evaluate(&args.common)?;
            config
                .metrics
                .iter()
                .enumerate()
                .map(|(i, m)| {
                    pearson(
                        &m.name(),
                        &per_document_scores(&evals, i, Split::All),
                        &human,
                    )
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    let text = match args.common.format()? {
        Format::Json => to_json(&results),
        Format::Csv => correlation_csv(&results),
        Format::PlotData => {
            return Err(Error::Validation("correlate supports json and csv".into()));
        }
    };
    write_output(args.common.out.as_deref(), &text)
}

impl CommonArgs {
    fn format(&self) -> Result<Format> {
        self.format.parse()
    }

    fn binning(&self) -> Binning {
        match self.binning {
            BinningArg::EqualWidth => Binning::EqualWidth,
            BinningArg::EqualMass => Binning::EqualMass,
        }
    }

    fn histogram(&self) -> HistogramConfig {
        HistogramConfig {
            bin_width: self.hist_width,
            lo: self.hist_lo,
            hi: self.hist_hi,
        }
    }

    fn load_options(&self) -> LoadOptions {
        let mut options = LoadOptions {
            log_probs: self.log_probs,
            ..LoadOptions::default()
        };
        if !self.delimiters.is_empty() {
            options.delimiters = self.delimiters.iter().cloned().collect();
        }
        options
    }

    fn eval_config(&self) -> Result<EvalConfig> {
        let mut metrics = Vec::new();
        for m in &self.metric {
            let score_fn = parse_kernel(m, self)?;
            for at in &self.at {
                metrics.push(MetricConfig::new(score_fn, parse_selection(at)?)?);
            }
        }
        let mut config = EvalConfig::new(metrics);
        config.dedup_gold = self.dedup_gold;
        config.positional_kernel = config
            .metrics
            .iter()
            .map(|m| m.score_fn)
            .find(|f| f.kind != ScoreKind::Exact);
        Ok(config)
    }

    fn workers(&self) -> usize {
        self.workers.unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
    }
}

fn parse_kernel(name: &str, args: &CommonArgs) -> Result<ScoreFunction> {
    let (kind, baseline) = match name {
        "f1" | "exact" => (ScoreKind::Exact, None),
        "kmr" => (ScoreKind::Kmr, None),
        "embed" | "bs" => (ScoreKind::EmbeddingGreedy, args.rescale_baseline),
        other => {
            return Err(Error::Validation(format!(
                "unknown metric {other:?}; expected f1, kmr or embed"
            )))
        }
    };
    let mut f = ScoreFunction::new(kind, args.threshold, baseline)?;
    f.threshold_before_rescale = args.threshold_before_rescale;
    Ok(f)
}

fn parse_selection(at: &str) -> Result<Selection> {
    if at.eq_ignore_ascii_case("m") {
        return Ok(Selection::AtM);
    }
    match at.parse::<usize>() {
        Ok(k) if k > 0 => Ok(Selection::AtK(k)),
        _ => Err(Error::Validation(format!(
            "--at expects m or a positive integer, got {at:?}"
        ))),
    }
}

fn required<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::Validation(format!("{flag} is required")))
}

fn load(args: &CommonArgs) -> Result<Corpus> {
    let docs = load_documents(required(&args.docs, "--docs")?)?;
    let preds = match &args.preds {
        Some(p) => load_predictions(p, &args.load_options())?,
        None => Vec::new(),
    };
    Corpus::new(docs, preds)
}

fn embedding_provider(args: &CommonArgs) -> Result<Box<dyn EmbeddingProvider>> {
    let env_url = std::env::var(EMBED_URL_ENV).ok().filter(|u| !u.is_empty());
    let source = env_url.or_else(|| args.embeddings.clone()).ok_or_else(|| {
        Error::Validation("the embed metric needs --embeddings or KEYSCORE_EMBED_URL".into())
    })?;
    if source.starts_with("http://") || source.starts_with("https://") {
        let model_id = match &args.model_id {
            Some(m) => m.clone(),
            None => HttpProvider::new(&source, "")?.health()?.model_id,
        };
        let provider = HttpProvider::new(&source, &model_id)?;
        provider.health()?;
        Ok(Box::new(provider))
    } else {
        Ok(Box::new(CacheProvider::load(
            Path::new(&source),
            args.model_id.as_deref(),
        )?))
    }
}

fn evaluate(args: &CommonArgs) -> Result<(EvalConfig, Vec<DocEvaluation>)> {
    let config = args.eval_config()?;
    let corpus = load(args)?;
    let provider = if config.needs_embeddings() {
        Some(embedding_provider(args)?)
    } else {
        None
    };
    let evals = evaluate_corpus(&corpus, &config, provider.as_deref(), args.workers())?;
    Ok((config, evals))
}
