//! Salience-guided abstractive summarization toolkit.
//!
//! The crate wires together everything needed to train, run and judge a
//! SEASON-style summarizer at desk scale:
//!
//! - [`textcore`] — deterministic tokenization, sentence splitting, n-grams
//!   and LCS primitives shared by everything else.
//! - [`metrics`] — ROUGE-1/2/L/Lsum, METEOR, embedding-based BERTScore and
//!   MoverScore variants, and the novel-n-gram (hallucination) flagger.
//! - [`salience`] — per-sentence ROUGE-L-F1 salience scoring, degree
//!   bucketing, temperature sharpening, expected salience embeddings.
//! - [`model`] — a small encoder-decoder transformer with a salience
//!   classifier and salience-aware cross-attention, trained with exact
//!   reverse-mode gradients.
//! - [`decode`] — beam search with GNMT length penalty and no-repeat
//!   n-gram blocking, plus greedy decoding.
//! - [`data`] — JSON-lines corpora, vocabulary construction, sentence-marker
//!   preprocessing and truncation profiles.
//! - [`oracles`] — deliberately exponential reference implementations used
//!   by the test suite and the `self-check` subcommand.
//! - [`report`] — Table-style score reports and system comparison rendering.

pub mod cli;
pub mod data;
pub mod decode;
pub mod metrics;
pub mod model;
pub mod oracles;
pub mod pipeline;
pub mod report;
pub mod salience;
pub mod textcore;

pub use metrics::MetricScore;
pub use textcore::TokenSeq;
