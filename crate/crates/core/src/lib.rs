//! Evaluation toolkit for keyphrase generation.
//!
//! Exact and soft set-level F-scores, keyphrase perplexity and calibration,
//! and positional analysis of present keyphrases, driven by line-delimited
//! JSON corpora.

pub mod calibration;
pub mod cli;
pub mod confidence;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod evaluate;
pub mod matching;
pub mod positional;
pub mod report;
pub mod softkeyscore;
pub mod stats;
pub mod textnorm;

pub use error::{Error, Result};
