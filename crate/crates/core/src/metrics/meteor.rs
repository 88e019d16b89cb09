//! METEOR, exact-match variant: unigram alignment maximizing matches, then
//! minimizing fragmentation (chunks), scored as Fmean times a cubic
//! fragmentation penalty.

use std::collections::HashMap;

use crate::textcore::TokenSeq;

/// Sequences longer than this fall back to the greedy aligner.
const EXACT_SEARCH_MAX_LEN: usize = 50;
/// Node budget for the branch-and-bound search before falling back.
const SEARCH_NODE_BUDGET: usize = 500_000;

/// METEOR score in `[0, 1)`.
///
/// `P = m/|cand|`, `R = m/|ref|`, `Fmean = 10PR/(R+9P)`,
/// `penalty = 0.5·(ch/m)³`, `score = Fmean·(1−penalty)`; zero when nothing
/// matches. Note the self-score of identical inputs is below 1: a perfect
/// alignment still forms one chunk and pays its penalty.
pub fn meteor(cand: &TokenSeq, reference: &TokenSeq) -> f64 {
    let (m, ch) = meteor_alignment(cand, reference);
    if m == 0 {
        return 0.0;
    }
    let m_f = m as f64;
    let p = m_f / cand.len() as f64;
    let r = m_f / reference.len() as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (ch as f64 / m_f).powi(3);
    fmean * (1.0 - penalty)
}

/// The alignment statistics behind [`meteor`]: the maximum number of
/// exact-match unigram pairs `m`, and the minimum chunk count `ch` over all
/// maximum alignments.
pub fn meteor_alignment(cand: &TokenSeq, reference: &TokenSeq) -> (usize, usize) {
    let max_matches = unigram_overlap(cand, reference);
    if max_matches == 0 {
        return (0, 0);
    }
    if cand.len() <= EXACT_SEARCH_MAX_LEN && reference.len() <= EXACT_SEARCH_MAX_LEN {
        let mut search = ChunkSearch::new(cand, reference, max_matches);
        if let Some(chunks) = search.run() {
            return (max_matches, chunks);
        }
    }
    (max_matches, greedy_alignment_chunks(cand, reference))
}

/// Maximum match count for exact unigrams is the clipped-count overlap; no
/// search needed for `m` itself.
fn unigram_overlap(cand: &TokenSeq, reference: &TokenSeq) -> usize {
    let mut ref_counts: HashMap<&str, usize> = HashMap::new();
    for t in reference.tokens() {
        *ref_counts.entry(t.as_str()).or_insert(0) += 1;
    }
    let mut cand_counts: HashMap<&str, usize> = HashMap::new();
    for t in cand.tokens() {
        *cand_counts.entry(t.as_str()).or_insert(0) += 1;
    }
    cand_counts
        .iter()
        .map(|(t, c)| c.min(ref_counts.get(t).unwrap_or(&0)))
        .sum()
}

/// Branch-and-bound over occurrence assignments: walks candidate positions
/// left to right, matching or skipping, pruning branches that cannot reach
/// `max_matches` matches or cannot undercut the best chunk count so far.
struct ChunkSearch<'a> {
    cand: &'a TokenSeq,
    reference: &'a TokenSeq,
    max_matches: usize,
    ref_used: Vec<bool>,
    ref_remaining: HashMap<&'a str, usize>,
    cand_suffix: Vec<HashMap<&'a str, usize>>,
    best_chunks: usize,
    nodes: usize,
    exhausted: bool,
}

impl<'a> ChunkSearch<'a> {
    fn new(cand: &'a TokenSeq, reference: &'a TokenSeq, max_matches: usize) -> Self {
        let mut ref_remaining: HashMap<&str, usize> = HashMap::new();
        for t in reference.tokens() {
            *ref_remaining.entry(t.as_str()).or_insert(0) += 1;
        }
        // cand_suffix[i] = token counts of cand[i..], for the reachability bound.
        let mut cand_suffix = vec![HashMap::new(); cand.len() + 1];
        for i in (0..cand.len()).rev() {
            let mut counts = cand_suffix[i + 1].clone();
            *counts.entry(cand[i].as_str()).or_insert(0) += 1;
            cand_suffix[i] = counts;
        }
        ChunkSearch {
            cand,
            reference,
            max_matches,
            ref_used: vec![false; reference.len()],
            ref_remaining,
            cand_suffix,
            best_chunks: usize::MAX,
            nodes: 0,
            exhausted: false,
        }
    }

    /// Minimum chunk count over all maximum alignments, or `None` when the
    /// node budget ran out before the search finished.
    fn run(&mut self) -> Option<usize> {
        self.recurse(0, 0, 0, None);
        (!self.exhausted).then_some(self.best_chunks)
    }

    fn reachable_matches(&self, i: usize) -> usize {
        self.cand_suffix[i]
            .iter()
            .map(|(t, c)| c.min(self.ref_remaining.get(t).unwrap_or(&0)))
            .sum()
    }

    fn recurse(&mut self, i: usize, matched: usize, chunks: usize, last: Option<(usize, usize)>) {
        if self.exhausted {
            return;
        }
        self.nodes += 1;
        if self.nodes > SEARCH_NODE_BUDGET {
            self.exhausted = true;
            return;
        }
        if chunks >= self.best_chunks {
            return;
        }
        if matched + self.reachable_matches(i) < self.max_matches {
            return;
        }
        if i == self.cand.len() {
            // The reachability bound already guaranteed matched == max_matches.
            self.best_chunks = chunks;
            return;
        }
        let tok = self.cand[i].as_str();
        if *self.ref_remaining.get(tok).unwrap_or(&0) > 0 {
            for j in 0..self.reference.len() {
                if !self.ref_used[j] && self.reference[j] == tok {
                    let extends = last == Some((i.wrapping_sub(1), j.wrapping_sub(1)));
                    self.ref_used[j] = true;
                    *self.ref_remaining.get_mut(tok).unwrap() -= 1;
                    self.recurse(
                        i + 1,
                        matched + 1,
                        chunks + usize::from(!extends),
                        Some((i, j)),
                    );
                    self.ref_used[j] = false;
                    *self.ref_remaining.get_mut(tok).unwrap() += 1;
                }
            }
        }
        // Skip candidate position i.
        self.recurse(i + 1, matched, chunks, last);
    }
}

/// Greedy fallback: match candidate positions left to right, preferring the
/// reference position that continues the current chunk, else the leftmost
/// free occurrence.
fn greedy_alignment_chunks(cand: &TokenSeq, reference: &TokenSeq) -> usize {
    let mut ref_used = vec![false; reference.len()];
    let mut chunks = 0usize;
    let mut last: Option<(usize, usize)> = None;
    for i in 0..cand.len() {
        let tok = cand[i].as_str();
        let preferred = last.and_then(|(pi, pj)| {
            let j = pj + 1;
            (pi + 1 == i && j < reference.len() && !ref_used[j] && reference[j] == tok)
                .then_some(j)
        });
        let j = preferred
            .or_else(|| (0..reference.len()).find(|&j| !ref_used[j] && reference[j] == tok));
        if let Some(j) = j {
            ref_used[j] = true;
            if last != Some((i.wrapping_sub(1), j.wrapping_sub(1))) {
                chunks += 1;
            }
            last = Some((i, j));
        }
    }
    chunks
}
