//! Sentence salience: ROUGE-L-F1 scoring against the reference summary,
//! bucketing into discrete degrees, temperature sharpening of predicted
//! degree distributions, and the expected salience embedding used to guide
//! cross-attention.

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::metrics::rouge_l;
use crate::textcore::TokenSeq;

/// Default number of salience degrees.
pub const DEFAULT_DEGREES: usize = 4;
/// Default ROUGE-L-F1 cut points separating the degrees.
pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.1, 0.3, 0.5];

#[derive(Debug, Error, PartialEq)]
pub enum SalienceError {
    #[error("document has no sentences")]
    NoSentences,
    #[error("probabilities must be non-negative with positive sum")]
    DegenerateDistribution,
    #[error("thresholds must be strictly ascending within (0, 1)")]
    BadThresholds,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Per-sentence salience of one document: raw ROUGE-L F1 scores and the
/// discrete degree each score buckets into. Degrees are monotone in scores
/// by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SalienceAllocation {
    pub scores: Vec<f64>,
    pub levels: Vec<usize>,
    pub degrees: usize,
}

impl SalienceAllocation {
    /// Scores each sentence against the reference and buckets the results.
    pub fn compute(
        doc_sentences: &[TokenSeq],
        reference: &TokenSeq,
        thresholds: &[f64],
    ) -> Result<Self, SalienceError> {
        let scores = sentence_salience_scores(doc_sentences, reference)?;
        let levels = allocate_levels(&scores, thresholds)?;
        Ok(SalienceAllocation {
            scores,
            levels,
            degrees: thresholds.len() + 1,
        })
    }
}

/// Predicted salience distribution: one row of `K` probabilities per
/// sentence, each row summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SalienceDistribution {
    pub probs: Vec<Vec<f64>>,
}

impl SalienceDistribution {
    pub fn degrees(&self) -> usize {
        self.probs.first().map_or(0, Vec::len)
    }

    /// Sharpens every row in place with [`sharpen`].
    pub fn sharpen(&self, temperature: f64) -> Result<Self, SalienceError> {
        let probs = self
            .probs
            .iter()
            .map(|row| sharpen(row, temperature))
            .collect::<Result<_, _>>()?;
        Ok(SalienceDistribution { probs })
    }
}

/// ROUGE-L F1 of each sentence against the (full) reference summary.
pub fn sentence_salience_scores(
    doc_sentences: &[TokenSeq],
    reference: &TokenSeq,
) -> Result<Vec<f64>, SalienceError> {
    if doc_sentences.is_empty() {
        return Err(SalienceError::NoSentences);
    }
    Ok(doc_sentences
        .iter()
        .map(|s| rouge_l(s, reference).f1)
        .collect())
}

/// Buckets scores into `K = thresholds.len() + 1` degrees: a score's level
/// is the number of thresholds at or below it (closed on the left, so a
/// score sitting exactly on a cut point takes the higher bucket).
pub fn allocate_levels(scores: &[f64], thresholds: &[f64]) -> Result<Vec<usize>, SalienceError> {
    let ascending = thresholds.windows(2).all(|w| w[0] < w[1]);
    if !ascending || thresholds.iter().any(|t| !(0.0 < *t && *t < 1.0)) {
        return Err(SalienceError::BadThresholds);
    }
    Ok(scores
        .iter()
        .map(|&s| thresholds.iter().filter(|&&t| t <= s).count())
        .collect())
}

/// Temperature sharpening: `q_i = p_i^(1/T) / Σ_j p_j^(1/T)`. `T < 1`
/// concentrates mass on the argmax, `T = 1` is the identity.
pub fn sharpen(probs: &[f64], temperature: f64) -> Result<Vec<f64>, SalienceError> {
    assert!(temperature > 0.0, "temperature must be positive");
    let total: f64 = probs.iter().sum();
    if probs.iter().any(|&p| p < 0.0) || total <= 0.0 {
        return Err(SalienceError::DegenerateDistribution);
    }
    if temperature == 1.0 {
        // Unit exponent: plain normalization, and the exact identity on
        // anything already normalized.
        return Ok(probs.iter().map(|&p| p / total).collect());
    }
    let exponent = 1.0 / temperature;
    // Scale by the max first so tiny temperatures cannot underflow to 0/0.
    let max = probs.iter().cloned().fold(f64::MIN, f64::max);
    let powered: Vec<f64> = probs.iter().map(|&p| (p / max).powf(exponent)).collect();
    let powered_total: f64 = powered.iter().sum();
    Ok(powered.into_iter().map(|p| p / powered_total).collect())
}

/// Expected salience embedding `Σ_i probs[i] · table.row(i)`: the soft
/// counterpart of picking one degree's embedding row.
pub fn expected_salience_embedding(
    probs: &[f64],
    emb_table: &Array2<f64>,
) -> Result<Array1<f64>, SalienceError> {
    if probs.len() != emb_table.nrows() {
        return Err(SalienceError::DimensionMismatch(format!(
            "{} probabilities vs {} embedding rows",
            probs.len(),
            emb_table.nrows()
        )));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(SalienceError::DegenerateDistribution);
    }
    let mut out = Array1::zeros(emb_table.ncols());
    for (i, &p) in probs.iter().enumerate() {
        out.scaled_add(p, &emb_table.row(i));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn seq(tokens: &[&str]) -> TokenSeq {
        TokenSeq::from_tokens(tokens.iter().copied())
    }

    #[test]
    fn scores_match_rouge_l_f1() {
        let sentences = vec![
            seq(&["police", "killed", "the", "gunman"]),
            seq(&["police", "kill", "the", "gunman"]),
            seq(&["completely", "unrelated"]),
        ];
        let reference = seq(&["police", "killed", "the", "gunman"]);
        let scores = sentence_salience_scores(&sentences, &reference).unwrap();
        assert!((scores[0] - 1.0).abs() < 1e-12);
        assert!((scores[1] - 0.75).abs() < 1e-12);
        assert_eq!(scores[2], 0.0);
    }

    #[test]
    fn empty_document_rejected() {
        assert_eq!(
            sentence_salience_scores(&[], &seq(&["a"])),
            Err(SalienceError::NoSentences)
        );
    }

    #[test]
    fn level_bucketing() {
        let levels = allocate_levels(&[0.0, 0.2, 0.6, 0.9], &DEFAULT_THRESHOLDS).unwrap();
        assert_eq!(levels, vec![0, 1, 3, 3]);
        assert_eq!(
            allocate_levels(&[0.0, 0.0], &DEFAULT_THRESHOLDS).unwrap(),
            vec![0, 0]
        );
        // Exactly on a cut point buckets upward.
        assert_eq!(allocate_levels(&[0.3], &DEFAULT_THRESHOLDS).unwrap(), vec![2]);
    }

    #[test]
    fn bad_thresholds_rejected() {
        assert!(allocate_levels(&[0.5], &[0.3, 0.3]).is_err());
        assert!(allocate_levels(&[0.5], &[0.0, 0.5]).is_err());
        assert!(allocate_levels(&[0.5], &[0.5, 1.0]).is_err());
    }

    #[test]
    fn sharpen_identity_at_unit_temperature() {
        let p = vec![0.3, 0.5, 0.2];
        let q = sharpen(&p, 1.0).unwrap();
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sharpen_symmetric_input_stays_uniform() {
        let q = sharpen(&[0.5, 0.5], 0.5).unwrap();
        assert!((q[0] - 0.5).abs() < 1e-12);
        assert!((q[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sharpen_concentrates_mass() {
        let q = sharpen(&[0.8, 0.2], 0.5).unwrap();
        assert!((q[0] - 0.9412).abs() < 1e-4);
        assert!((q[1] - 0.0588).abs() < 1e-4);
    }

    #[test]
    fn sharpen_rejects_zero_mass() {
        assert_eq!(
            sharpen(&[0.0, 0.0], 0.5),
            Err(SalienceError::DegenerateDistribution)
        );
    }

    #[test]
    fn sharpen_near_zero_temperature_is_argmax() {
        let q = sharpen(&[0.2, 0.5, 0.3], 1e-3).unwrap();
        assert!(q[1] > 0.999);
    }

    #[test]
    fn expected_embedding_selects_and_blends() {
        let table = array![[1.0, 0.0], [0.0, 2.0]];
        let one_hot = expected_salience_embedding(&[0.0, 1.0], &table).unwrap();
        assert_eq!(one_hot, array![0.0, 2.0]);
        let blend = expected_salience_embedding(&[0.25, 0.75], &table).unwrap();
        assert!((blend[0] - 0.25).abs() < 1e-12);
        assert!((blend[1] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn expected_embedding_validates_input() {
        let table = array![[1.0, 0.0], [0.0, 2.0]];
        assert!(expected_salience_embedding(&[1.0], &table).is_err());
        assert!(expected_salience_embedding(&[0.4, 0.4], &table).is_err());
    }

    proptest! {
        #[test]
        fn sharpen_preserves_argmax_and_normalizes(
            raw in proptest::collection::vec(0.01f64..1.0, 2..6),
            t in 0.05f64..1.0,
        ) {
            let total: f64 = raw.iter().sum();
            let probs: Vec<f64> = raw.iter().map(|p| p / total).collect();
            let q = sharpen(&probs, t).unwrap();
            prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let argmax = |v: &[f64]| {
                v.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .unwrap()
            };
            prop_assert_eq!(argmax(&probs), argmax(&q));
        }

        #[test]
        fn sharpen_composes_multiplicatively(
            raw in proptest::collection::vec(0.01f64..1.0, 2..5),
            t in 0.3f64..0.95,
        ) {
            let total: f64 = raw.iter().sum();
            let probs: Vec<f64> = raw.iter().map(|p| p / total).collect();
            let twice = sharpen(&sharpen(&probs, t).unwrap(), t).unwrap();
            let direct = sharpen(&probs, t * t).unwrap();
            for (a, b) in twice.iter().zip(&direct) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn levels_are_monotone_in_scores(
            scores in proptest::collection::vec(0.0f64..=1.0, 1..20),
        ) {
            let levels = allocate_levels(&scores, &DEFAULT_THRESHOLDS).unwrap();
            for i in 0..scores.len() {
                for j in 0..scores.len() {
                    if scores[i] > scores[j] {
                        prop_assert!(levels[i] >= levels[j]);
                    }
                }
            }
        }
    }
}
