//! Corpus ingestion and preprocessing: JSON-lines loading, word-level
//! vocabulary with reserved tokens, sentence-marker insertion, per-dataset
//! truncation and oracle salience labeling.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::EmbeddingTable;
use crate::salience::SalienceAllocation;
use crate::textcore::{split_sentences, tokenize, TokenSeq};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const BOS_ID: u32 = 2;
pub const EOS_ID: u32 = 3;
/// The unique token inserted before every source sentence; its encoder
/// state feeds the salience classifier.
pub const MARKER_ID: u32 = 4;

pub const RESERVED_TOKENS: [&str; 5] = ["<pad>", "<unk>", "<bos>", "<eos>", "<sent>"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("could not read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    MalformedLine {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: duplicate example id {id:?}")]
    DuplicateId {
        path: String,
        line: usize,
        id: String,
    },
    #[error("example {id:?}: document has no sentences")]
    NoSentences { id: String },
    #[error("example {id:?}: no sentence survives truncation to {max_src} tokens")]
    NothingSurvivesTruncation { id: String, max_src: usize },
    #[error("vocabulary cap {0} leaves no room beyond the reserved tokens")]
    CapTooSmall(usize),
    #[error("unknown dataset profile {0:?} (expected cnndm, samsum or edt)")]
    UnknownProfile(String),
    #[error(transparent)]
    Salience(#[from] crate::salience::SalienceError),
}

/// One document-summary pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub document: String,
    pub summary: String,
}

/// Per-dataset truncation limits (token budgets include special tokens).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetProfile {
    pub name: String,
    pub max_src_tokens: usize,
    pub max_tgt_tokens: usize,
}

impl DatasetProfile {
    pub fn cnndm() -> Self {
        DatasetProfile {
            name: "cnndm".into(),
            max_src_tokens: 512,
            max_tgt_tokens: 100,
        }
    }

    pub fn samsum() -> Self {
        DatasetProfile {
            name: "samsum".into(),
            max_src_tokens: 256,
            max_tgt_tokens: 50,
        }
    }

    pub fn edt() -> Self {
        DatasetProfile {
            name: "edt".into(),
            max_src_tokens: 512,
            max_tgt_tokens: 40,
        }
    }

    pub fn custom(max_src_tokens: usize, max_tgt_tokens: usize) -> Self {
        assert!(max_src_tokens >= 8 && max_tgt_tokens >= 8, "limits must be >= 8");
        DatasetProfile {
            name: "custom".into(),
            max_src_tokens,
            max_tgt_tokens,
        }
    }

    pub fn by_name(name: &str) -> Result<Self, DataError> {
        match name {
            "cnndm" => Ok(Self::cnndm()),
            "samsum" => Ok(Self::samsum()),
            "edt" => Ok(Self::edt()),
            other => Err(DataError::UnknownProfile(other.to_string())),
        }
    }
}

/// Token ↔ id bijection with the five reserved ids pinned at 0–4.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
}

impl Vocab {
    /// Builds a vocabulary of the `cap - 5` most frequent corpus tokens
    /// (document and summary sides both count; frequency ties go to the
    /// lexicographically smaller token).
    pub fn build(corpus: &[Example], cap: usize) -> Result<Self, DataError> {
        if cap <= RESERVED_TOKENS.len() {
            return Err(DataError::CapTooSmall(cap));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for ex in corpus {
            for text in [&ex.document, &ex.summary] {
                for tok in tokenize(text).tokens() {
                    *counts.entry(tok.clone()).or_insert(0) += 1;
                }
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(cap - RESERVED_TOKENS.len());

        let mut id_to_token: Vec<String> =
            RESERVED_TOKENS.iter().map(|t| t.to_string()).collect();
        id_to_token.extend(ranked.into_iter().map(|(t, _)| t));
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(Vocab {
            token_to_id,
            id_to_token,
        })
    }

    /// Rebuilds from an id-ordered token list (checkpoint loading).
    pub fn from_id_order(tokens: Vec<String>) -> Self {
        debug_assert!(tokens.len() >= RESERVED_TOKENS.len());
        let token_to_id = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocab {
            token_to_id,
            id_to_token: tokens,
        }
    }

    pub fn id(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.id_to_token[id as usize]
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id_ordered_tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// Renders generated ids back to text, skipping the reserved tokens.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&id| id as usize >= RESERVED_TOKENS.len())
            .map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// A fully preprocessed training/inference example: marker-prefixed source
/// ids, BOS/EOS-framed target ids and the oracle salience levels of every
/// surviving sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedExample {
    pub id: String,
    pub input_ids: Vec<u32>,
    pub target_ids: Vec<u32>,
    pub marker_positions: Vec<usize>,
    pub sentence_of_token: Vec<usize>,
    pub oracle_levels: Vec<usize>,
    pub oracle_scores: Vec<f64>,
    /// Unknown-token substitutions across source and target.
    pub unk_count: usize,
    /// Total source+target tokens that went through vocabulary lookup.
    pub lookup_count: usize,
}

/// Loads a JSON-lines corpus of `{id, document, summary}` records, in file
/// order. Malformed lines and duplicate ids are hard errors with line
/// numbers.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Example>, DataError> {
    let path = path.as_ref();
    let content = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut seen: HashSet<String> = HashSet::new();
    let mut corpus = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let example: Example =
            serde_json::from_str(line).map_err(|e| DataError::MalformedLine {
                path: path.display().to_string(),
                line: lineno,
                message: e.to_string(),
            })?;
        if example.id.is_empty() {
            return Err(DataError::MalformedLine {
                path: path.display().to_string(),
                line: lineno,
                message: "empty id".into(),
            });
        }
        if example.document.is_empty() {
            return Err(DataError::MalformedLine {
                path: path.display().to_string(),
                line: lineno,
                message: format!("example {:?} has an empty document", example.id),
            });
        }
        if !seen.insert(example.id.clone()) {
            return Err(DataError::DuplicateId {
                path: path.display().to_string(),
                line: lineno,
                id: example.id,
            });
        }
        corpus.push(example);
    }
    Ok(corpus)
}

/// Writes a corpus back out as JSON lines (fixtures and synthetic data).
pub fn save_corpus(path: impl AsRef<Path>, corpus: &[Example]) -> Result<(), DataError> {
    let path = path.as_ref();
    let mut out = String::new();
    for ex in corpus {
        out.push_str(&serde_json::to_string(ex).expect("serializable example"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Document sentences: newline splits first (dialogue turns), then the
/// rule-based splitter within each line.
pub fn document_sentences(document: &str) -> Vec<TokenSeq> {
    document
        .lines()
        .flat_map(split_sentences)
        .map(|s| tokenize(&s))
        .filter(|s| !s.is_empty())
        .collect()
}

/// Preprocesses one example: sentence markers, vocabulary lookup with unk
/// substitution, truncation (limits include special tokens, a marker never
/// survives without at least one following token) and oracle salience
/// levels computed on the untruncated sentences, clipped to the survivors.
pub fn preprocess(
    example: &Example,
    profile: &DatasetProfile,
    vocab: &Vocab,
    thresholds: &[f64],
) -> Result<PreparedExample, DataError> {
    let sentences = document_sentences(&example.document);
    if sentences.is_empty() {
        return Err(DataError::NoSentences {
            id: example.id.clone(),
        });
    }
    let reference = tokenize(&example.summary);
    let allocation = if reference.is_empty() {
        SalienceAllocation {
            scores: vec![0.0; sentences.len()],
            levels: vec![0; sentences.len()],
            degrees: thresholds.len() + 1,
        }
    } else {
        SalienceAllocation::compute(&sentences, &reference, thresholds)?
    };

    let mut unk_count = 0usize;
    let mut lookup_count = 0usize;
    let mut lookup = |tok: &str| -> u32 {
        lookup_count += 1;
        let id = vocab.id(tok);
        if id == UNK_ID && tok != RESERVED_TOKENS[UNK_ID as usize] {
            unk_count += 1;
        }
        id
    };

    // Source: marker before each sentence, hard cut at max_src_tokens.
    let mut input_ids: Vec<u32> = Vec::new();
    let mut marker_positions: Vec<usize> = Vec::new();
    let mut sentence_of_token: Vec<usize> = Vec::new();
    'sentences: for sentence in &sentences {
        if input_ids.len() + 2 > profile.max_src_tokens {
            // No room for a marker plus at least one token.
            break;
        }
        input_ids.push(MARKER_ID);
        marker_positions.push(input_ids.len() - 1);
        sentence_of_token.push(marker_positions.len() - 1);
        for tok in sentence.tokens() {
            if input_ids.len() >= profile.max_src_tokens {
                break 'sentences;
            }
            input_ids.push(lookup(tok));
            sentence_of_token.push(marker_positions.len() - 1);
        }
    }
    let surviving = marker_positions.len();
    if surviving == 0 {
        return Err(DataError::NothingSurvivesTruncation {
            id: example.id.clone(),
            max_src: profile.max_src_tokens,
        });
    }

    // Target: BOS + summary + EOS inside the budget.
    let mut target_ids: Vec<u32> = vec![BOS_ID];
    let budget = profile.max_tgt_tokens.saturating_sub(2);
    for tok in reference.tokens().iter().take(budget) {
        target_ids.push(lookup(tok));
    }
    target_ids.push(EOS_ID);

    Ok(PreparedExample {
        id: example.id.clone(),
        input_ids,
        target_ids,
        marker_positions,
        sentence_of_token,
        oracle_levels: allocation.levels[..surviving].to_vec(),
        oracle_scores: allocation.scores[..surviving].to_vec(),
        unk_count,
        lookup_count,
    })
}

/// Preprocesses a whole corpus, preserving order.
pub fn preprocess_corpus(
    corpus: &[Example],
    profile: &DatasetProfile,
    vocab: &Vocab,
    thresholds: &[f64],
) -> Result<Vec<PreparedExample>, DataError> {
    corpus
        .iter()
        .map(|ex| preprocess(ex, profile, vocab, thresholds))
        .collect()
}

/// Fraction of vocabulary lookups that hit `<unk>` across a prepared corpus.
pub fn unk_rate(prepared: &[PreparedExample]) -> f64 {
    let unk: usize = prepared.iter().map(|p| p.unk_count).sum();
    let total: usize = prepared.iter().map(|p| p.lookup_count).sum();
    if total == 0 {
        0.0
    } else {
        unk as f64 / total as f64
    }
}

/// Loads the plain-text embedding format shared with the metric suite.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable, crate::metrics::MetricError> {
    EmbeddingTable::load(path)
}
