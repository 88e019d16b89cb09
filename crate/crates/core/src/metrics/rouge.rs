//! ROUGE-N, ROUGE-L and summary-level ROUGE-Lsum.

use super::MetricScore;
use crate::textcore::{lcs_length, ngrams, split_sentences, tokenize, union_lcs, TokenSeq};

/// N-gram overlap score: clipped counts over candidate (precision) and
/// reference (recall) n-gram totals. Zero denominators score zero.
pub fn rouge_n(cand: &TokenSeq, reference: &TokenSeq, n: usize) -> MetricScore {
    assert!(n >= 1, "n-gram order must be >= 1");
    let cand_grams = ngrams(cand, n);
    let ref_grams = ngrams(reference, n);
    let cand_total: usize = cand_grams.values().sum();
    let ref_total: usize = ref_grams.values().sum();
    let overlap: usize = cand_grams
        .iter()
        .map(|(g, c)| c.min(ref_grams.get(g).unwrap_or(&0)))
        .sum();
    MetricScore::from_pr(
        ratio(overlap, cand_total),
        ratio(overlap, ref_total),
    )
}

/// LCS-based score over whole sequences.
pub fn rouge_l(cand: &TokenSeq, reference: &TokenSeq) -> MetricScore {
    let lcs = lcs_length(cand, reference);
    MetricScore::from_pr(ratio(lcs, cand.len()), ratio(lcs, reference.len()))
}

/// Summary-level LCS: sentence-splits both texts and credits each reference
/// sentence with the union of its LCS matches across all candidate
/// sentences, so one reference sentence can be covered piecewise.
pub fn rouge_lsum(cand_text: &str, ref_text: &str) -> MetricScore {
    let cand_sents: Vec<TokenSeq> = split_sentences(cand_text)
        .iter()
        .map(|s| tokenize(s))
        .filter(|s| !s.is_empty())
        .collect();
    let ref_sents: Vec<TokenSeq> = split_sentences(ref_text)
        .iter()
        .map(|s| tokenize(s))
        .filter(|s| !s.is_empty())
        .collect();
    let cand_total: usize = cand_sents.iter().map(TokenSeq::len).sum();
    let ref_total: usize = ref_sents.iter().map(TokenSeq::len).sum();
    let hits: usize = ref_sents
        .iter()
        .map(|r| union_lcs(r, &cand_sents))
        .sum();
    MetricScore::from_pr(ratio(hits, cand_total), ratio(hits, ref_total))
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}
