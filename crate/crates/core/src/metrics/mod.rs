//! Summarization evaluation metrics.
//!
//! ROUGE-1/2/L/Lsum, METEOR (exact-match variant), greedy embedding matching
//! in the BERTScore style, an exact-transport MoverScore variant, and the
//! novel-n-gram flagger used to surface hallucinated content.

mod embedding;
mod meteor;
mod ot;
mod rouge;

use std::collections::HashSet;

use thiserror::Error;

use crate::textcore::{ngrams, TokenSeq};

pub use embedding::{bert_score, mover_score, word_mover_distance, EmbeddingTable, UNK_TOKEN};
pub use meteor::{meteor, meteor_alignment};
pub use ot::{min_cost_transport, Transport};
pub use rouge::{rouge_l, rouge_lsum, rouge_n};

/// Precision/recall/F1 triple, each in `[0, 1]`. The universal metric
/// return type.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MetricScore {
    /// Builds a score from precision and recall; F1 is their harmonic mean,
    /// zero when both vanish.
    pub fn from_pr(precision: f64, recall: f64) -> Self {
        debug_assert!((0.0..=1.0).contains(&precision));
        debug_assert!((0.0..=1.0).contains(&recall));
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        MetricScore { precision, recall, f1 }
    }
}

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("sequence is empty")]
    EmptySequence,
    #[error("token {0:?} has no embedding and no <unk> fallback is present")]
    UnknownToken(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("transport solve failed: {0}")]
    Transport(String),
    #[error("{path}:{line}: {message}")]
    MalformedLine {
        path: String,
        line: usize,
        message: String,
    },
    #[error("could not read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// N-grams of `summary` that never occur in `source` (set semantics).
/// Anything flagged here is content the summary introduced on its own.
pub fn novel_ngrams(summary: &TokenSeq, source: &TokenSeq, n: usize) -> HashSet<Vec<String>> {
    assert!(n >= 1, "n-gram order must be >= 1");
    let source_grams: HashSet<Vec<String>> = ngrams(source, n).into_keys().collect();
    ngrams(summary, n)
        .into_keys()
        .filter(|g| !source_grams.contains(g))
        .collect()
}
