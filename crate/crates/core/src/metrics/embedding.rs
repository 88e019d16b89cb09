//! Static-embedding metrics: greedy cosine matching (BERTScore style) and
//! exact-transport MoverScore.
//!
//! Embeddings arrive as plain text files, one `token v1 v2 … vd` entry per
//! line; an optional idf file supplies `token weight` lines. The table is
//! immutable after load and safe to share across evaluation threads.

use std::collections::HashMap;
use std::path::Path;

use super::{min_cost_transport, MetricError, MetricScore};
use crate::textcore::TokenSeq;

/// Designated fallback token for out-of-table lookups.
pub const UNK_TOKEN: &str = "<unk>";

/// Token → dense vector map with a uniform dimension and optional per-token
/// idf weights.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingTable {
    vectors: HashMap<String, Vec<f64>>,
    idf: HashMap<String, f64>,
    dim: usize,
}

impl EmbeddingTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a vector, fixing the table dimension on first insert.
    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f64>) -> Result<(), MetricError> {
        if self.vectors.is_empty() {
            self.dim = vector.len();
        }
        if vector.len() != self.dim {
            return Err(MetricError::DimensionMismatch {
                expected: self.dim,
                got: vector.len(),
            });
        }
        if self.dim == 0 {
            return Err(MetricError::DimensionMismatch { expected: 1, got: 0 });
        }
        self.vectors.insert(token.into(), vector);
        Ok(())
    }

    pub fn set_idf(&mut self, token: impl Into<String>, weight: f64) {
        assert!(weight >= 0.0, "idf weights must be non-negative");
        self.idf.insert(token.into(), weight);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vectors.contains_key(token)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.vectors.keys().map(String::as_str)
    }

    /// Vector for `token`, falling back to the `<unk>` entry when present.
    pub fn lookup(&self, token: &str) -> Result<&[f64], MetricError> {
        self.vectors
            .get(token)
            .or_else(|| self.vectors.get(UNK_TOKEN))
            .map(Vec::as_slice)
            .ok_or_else(|| MetricError::UnknownToken(token.to_string()))
    }

    /// Idf weight for `token`, 1 when the idf side never mentioned it.
    pub fn idf(&self, token: &str) -> f64 {
        self.idf.get(token).copied().unwrap_or(1.0)
    }

    /// Loads `token v1 … vd` lines. Malformed lines are hard errors carrying
    /// their line number.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, MetricError> {
        let path = path.as_ref();
        let content = std::fs::read_to_string(path).map_err(|source| MetricError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut table = EmbeddingTable::new();
        for (idx, line) in content.lines().enumerate() {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let token = fields.next().expect("non-empty line has a first field");
            let vector: Vec<f64> = fields
                .map(|f| {
                    f.parse::<f64>().map_err(|_| MetricError::MalformedLine {
                        path: path.display().to_string(),
                        line: lineno,
                        message: format!("non-numeric field {f:?}"),
                    })
                })
                .collect::<Result<_, _>>()?;
            if vector.is_empty() {
                return Err(MetricError::MalformedLine {
                    path: path.display().to_string(),
                    line: lineno,
                    message: "entry has no vector components".into(),
                });
            }
            table.insert(token, vector).map_err(|e| match e {
                MetricError::DimensionMismatch { expected, got } => MetricError::MalformedLine {
                    path: path.display().to_string(),
                    line: lineno,
                    message: format!("dimension {got} does not match table dimension {expected}"),
                },
                other => other,
            })?;
        }
        Ok(table)
    }

    /// Loads `token weight` idf lines into an existing table.
    pub fn load_idf(&mut self, path: impl AsRef<Path>) -> Result<(), MetricError> {
        let path = path.as_ref();
        let content = std::fs::read_to_string(path).map_err(|source| MetricError::Io {
            path: path.display().to_string(),
            source,
        })?;
        for (idx, line) in content.lines().enumerate() {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let malformed = |message: String| MetricError::MalformedLine {
                path: path.display().to_string(),
                line: lineno,
                message,
            };
            if fields.len() != 2 {
                return Err(malformed(format!(
                    "expected `token weight`, got {} fields",
                    fields.len()
                )));
            }
            let weight: f64 = fields[1]
                .parse()
                .map_err(|_| malformed(format!("non-numeric weight {:?}", fields[1])))?;
            if weight < 0.0 {
                return Err(malformed(format!("negative idf weight {weight}")));
            }
            self.set_idf(fields[0], weight);
        }
        Ok(())
    }
}

/// Greedy embedding matching: each reference token claims its best cosine
/// match among candidate tokens (recall), and symmetrically for precision.
/// Negative cosines clamp to zero, idf weights apply when `use_idf` is set.
pub fn bert_score(
    cand: &TokenSeq,
    reference: &TokenSeq,
    emb: &EmbeddingTable,
    use_idf: bool,
) -> Result<MetricScore, MetricError> {
    if cand.is_empty() || reference.is_empty() {
        return Err(MetricError::EmptySequence);
    }
    let recall = greedy_side(reference, cand, emb, use_idf)?;
    let precision = greedy_side(cand, reference, emb, use_idf)?;
    Ok(MetricScore::from_pr(precision, recall))
}

fn greedy_side(
    scored: &TokenSeq,
    against: &TokenSeq,
    emb: &EmbeddingTable,
    use_idf: bool,
) -> Result<f64, MetricError> {
    let against_vecs: Vec<&[f64]> = against
        .tokens()
        .iter()
        .map(|t| emb.lookup(t))
        .collect::<Result<_, _>>()?;
    let mut weighted_sum = 0.0;
    let mut weight_total = 0.0;
    for tok in scored.tokens() {
        let v = emb.lookup(tok)?;
        let best = against_vecs
            .iter()
            .map(|o| cosine(v, o).max(0.0))
            .fold(0.0f64, f64::max);
        let w = if use_idf { emb.idf(tok) } else { 1.0 };
        weighted_sum += w * best;
        weight_total += w;
    }
    if weight_total <= 0.0 {
        return Ok(0.0);
    }
    Ok((weighted_sum / weight_total).clamp(0.0, 1.0))
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// MoverScore variant: exact word-mover distance between idf-weighted
/// unigram distributions mapped to `(0, 1]` via `1/(1+WMD)`.
pub fn mover_score(
    cand: &TokenSeq,
    reference: &TokenSeq,
    emb: &EmbeddingTable,
) -> Result<f64, MetricError> {
    Ok(1.0 / (1.0 + word_mover_distance(cand, reference, emb)?.cost))
}

/// The transport problem behind [`mover_score`], exposed so tests can check
/// marginals and compare costs against enumeration.
pub fn word_mover_distance(
    cand: &TokenSeq,
    reference: &TokenSeq,
    emb: &EmbeddingTable,
) -> Result<super::Transport, MetricError> {
    if cand.is_empty() || reference.is_empty() {
        return Err(MetricError::EmptySequence);
    }
    let (cand_tokens, p) = mass_distribution(cand, emb);
    let (ref_tokens, q) = mass_distribution(reference, emb);
    let mut costs = vec![vec![0.0f64; ref_tokens.len()]; cand_tokens.len()];
    for (i, ct) in cand_tokens.iter().enumerate() {
        let cv = emb.lookup(ct)?;
        for (j, rt) in ref_tokens.iter().enumerate() {
            let rv = emb.lookup(rt)?;
            costs[i][j] = euclidean(cv, rv);
        }
    }
    min_cost_transport(&p, &q, &costs)
}

/// Distinct tokens in first-occurrence order with count·idf masses,
/// normalized to total 1. Falls back to plain counts when the idf weights
/// zero everything out.
fn mass_distribution(seq: &TokenSeq, emb: &EmbeddingTable) -> (Vec<String>, Vec<f64>) {
    let mut order: Vec<String> = Vec::new();
    let mut counts: HashMap<&str, f64> = HashMap::new();
    for t in seq.tokens() {
        if !counts.contains_key(t.as_str()) {
            order.push(t.clone());
        }
        *counts.entry(t.as_str()).or_insert(0.0) += 1.0;
    }
    let mut masses: Vec<f64> = order
        .iter()
        .map(|t| counts[t.as_str()] * emb.idf(t))
        .collect();
    let total: f64 = masses.iter().sum();
    if total <= 0.0 {
        masses = order.iter().map(|t| counts[t.as_str()]).collect();
    }
    let total: f64 = masses.iter().sum();
    for m in &mut masses {
        *m /= total;
    }
    (order, masses)
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(tokens: &[&str]) -> TokenSeq {
        TokenSeq::from_tokens(tokens.iter().copied())
    }

    fn table(entries: &[(&str, &[f64])]) -> EmbeddingTable {
        let mut t = EmbeddingTable::new();
        for (tok, v) in entries {
            t.insert(*tok, v.to_vec()).unwrap();
        }
        t
    }

    #[test]
    fn bert_score_self_match_is_perfect() {
        let emb = table(&[("a", &[0.3, 0.4]), ("b", &[1.0, 0.0])]);
        let s = seq(&["a", "b"]);
        let score = bert_score(&s, &s, &emb, false).unwrap();
        assert!((score.precision - 1.0).abs() < 1e-12);
        assert!((score.recall - 1.0).abs() < 1e-12);
        assert!((score.f1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bert_score_orthogonal_tokens_score_zero() {
        let emb = table(&[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0])]);
        let score = bert_score(&seq(&["a"]), &seq(&["b"]), &emb, false).unwrap();
        assert_eq!(score.f1, 0.0);
    }

    #[test]
    fn bert_score_partial_recall() {
        let emb = table(&[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0])]);
        let score = bert_score(&seq(&["a"]), &seq(&["a", "b"]), &emb, false).unwrap();
        assert!((score.recall - 0.5).abs() < 1e-12);
        assert!((score.precision - 1.0).abs() < 1e-12);
        assert!((score.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn bert_score_is_order_invariant() {
        let emb = table(&[
            ("a", &[1.0, 0.2]),
            ("b", &[0.1, 0.9]),
            ("c", &[0.5, 0.5]),
        ]);
        let s1 = bert_score(&seq(&["a", "b", "c"]), &seq(&["c", "a"]), &emb, true).unwrap();
        let s2 = bert_score(&seq(&["c", "b", "a"]), &seq(&["a", "c"]), &emb, true).unwrap();
        assert!((s1.f1 - s2.f1).abs() < 1e-12);
    }

    #[test]
    fn bert_score_rejects_empty_and_unknown() {
        let emb = table(&[("a", &[1.0])]);
        assert!(matches!(
            bert_score(&TokenSeq::default(), &seq(&["a"]), &emb, false),
            Err(MetricError::EmptySequence)
        ));
        assert!(matches!(
            bert_score(&seq(&["zzz"]), &seq(&["a"]), &emb, false),
            Err(MetricError::UnknownToken(_))
        ));
    }

    #[test]
    fn unknown_token_falls_back_to_unk_vector() {
        let mut emb = table(&[("a", &[1.0, 0.0])]);
        emb.insert(UNK_TOKEN, vec![0.0, 1.0]).unwrap();
        let score = bert_score(&seq(&["zzz"]), &seq(&["zzz"]), &emb, false).unwrap();
        assert!((score.f1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mover_score_identity_is_one() {
        let emb = table(&[("a", &[0.1, 0.2]), ("b", &[0.9, 0.3])]);
        let s = seq(&["a", "b", "a"]);
        assert!((mover_score(&s, &s, &emb).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mover_score_unit_distance_pair() {
        let emb = table(&[("a", &[0.0, 0.0]), ("b", &[1.0, 0.0])]);
        let score = mover_score(&seq(&["a"]), &seq(&["b"]), &emb).unwrap();
        assert!((score - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mover_score_stays_in_range() {
        let emb = table(&[("a", &[3.0, 0.0]), ("b", &[0.0, 4.0]), ("c", &[1.0, 1.0])]);
        let s = mover_score(&seq(&["a", "c"]), &seq(&["b", "b", "c"]), &emb).unwrap();
        assert!(s > 0.0 && s <= 1.0);
    }

    #[test]
    fn wmd_marginals_hold() {
        let emb = table(&[("a", &[0.0]), ("b", &[2.0]), ("c", &[5.0])]);
        let cand = seq(&["a", "a", "b"]);
        let reference = seq(&["c", "b"]);
        let t = word_mover_distance(&cand, &reference, &emb).unwrap();
        // Masses: cand {a: 2/3, b: 1/3}, ref {c: 1/2, b: 1/2}.
        assert!(t.marginal_error(&[2.0 / 3.0, 1.0 / 3.0], &[0.5, 0.5]) < 1e-9);
    }

    #[test]
    fn idf_weights_shift_mover_mass() {
        let mut emb = table(&[("a", &[0.0]), ("b", &[1.0]), ("c", &[10.0])]);
        // Downweight "a" so the distribution concentrates on "c".
        emb.set_idf("a", 0.0);
        emb.set_idf("c", 1.0);
        let with_idf = word_mover_distance(&seq(&["a", "c"]), &seq(&["b"]), &emb).unwrap();
        assert!((with_idf.cost - 9.0).abs() < 1e-9);
    }

    #[test]
    fn embedding_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        std::fs::write(&path, "a 1 0\nb 0.5 -0.25\n\n").unwrap();
        let table = EmbeddingTable::load(&path).unwrap();
        assert_eq!(table.dim(), 2);
        assert_eq!(table.len(), 2);
        assert_eq!(table.lookup("b").unwrap(), &[0.5, -0.25]);
    }

    #[test]
    fn embedding_file_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        std::fs::write(&path, "a 1 0\nb 0.5\n").unwrap();
        let err = EmbeddingTable::load(&path).unwrap_err();
        assert!(err.to_string().contains(":2:"), "got: {err}");

        std::fs::write(&path, "a 1 0\nb x y\n").unwrap();
        let err = EmbeddingTable::load(&path).unwrap_err();
        assert!(err.to_string().contains(":2:"), "got: {err}");
    }
}
