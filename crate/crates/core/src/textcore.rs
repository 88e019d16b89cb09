//! Deterministic text primitives: tokenization, sentence segmentation,
//! n-gram extraction and longest-common-subsequence.
//!
//! Everything here is a pure function over immutable inputs. The metric,
//! salience and data modules all build on these, so determinism here is what
//! makes every score in the toolkit reproducible.

use std::collections::HashMap;

/// A tokenized text: lowercased surface forms, whitespace collapsed,
/// punctuation isolated into separate tokens.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSeq {
    tokens: Vec<String>,
}

impl TokenSeq {
    /// Wraps pre-tokenized tokens. Panics if any token is empty or contains
    /// whitespace; use [`tokenize`] for raw text.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        for t in &tokens {
            assert!(
                !t.is_empty() && !t.chars().any(char::is_whitespace),
                "invalid token {t:?}: must be non-empty and whitespace-free"
            );
        }
        TokenSeq { tokens }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Space-joined surface form.
    pub fn join(&self) -> String {
        self.tokens.join(" ")
    }
}

impl std::ops::Index<usize> for TokenSeq {
    type Output = String;
    fn index(&self, i: usize) -> &String {
        &self.tokens[i]
    }
}

/// Half-open token range `[start, end)` marking one sentence inside a
/// document-level [`TokenSeq`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SentenceSpan {
    pub start: usize,
    pub end: usize,
}

impl SentenceSpan {
    pub fn new(start: usize, end: usize) -> Self {
        assert!(start < end, "sentence span must be non-empty");
        SentenceSpan { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Lowercases, collapses whitespace and splits punctuation into separate
/// tokens. Total: every input, including the empty string, tokenizes.
pub fn tokenize(text: &str) -> TokenSeq {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            flush(&mut current, &mut tokens);
        } else if ch.is_alphanumeric() {
            for lc in ch.to_lowercase() {
                current.push(lc);
            }
        } else {
            // Punctuation and symbols become single-char tokens.
            flush(&mut current, &mut tokens);
            tokens.push(ch.to_string());
        }
    }
    flush(&mut current, &mut tokens);
    TokenSeq { tokens }
}

fn flush(current: &mut String, tokens: &mut Vec<String>) {
    if !current.is_empty() {
        tokens.push(std::mem::take(current));
    }
}

/// Abbreviations that suppress a sentence break after their trailing period.
const ABBREVIATIONS: &[&str] = &[
    "dr.", "mr.", "mrs.", "ms.", "inc.", "co.", "u.s.", "e.g.", "i.e.",
];

/// Rule-based sentence splitter: breaks after `.`, `!` or `?` runs followed
/// by whitespace and an uppercase letter, unless the terminator closes a
/// known abbreviation. Text without a boundary comes back as one sentence.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut sentences = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        if matches!(chars[i], '.' | '!' | '?') {
            // Consume the whole terminator run (handles "?!", "...").
            let mut end = i + 1;
            while end < chars.len() && matches!(chars[end], '.' | '!' | '?') {
                end += 1;
            }
            let is_boundary = end < chars.len()
                && chars[end].is_whitespace()
                && next_non_ws_is_uppercase(&chars[end..])
                && !ends_with_abbreviation(&chars[start..end]);
            if is_boundary {
                push_trimmed(&chars[start..end], &mut sentences);
                start = end;
            }
            i = end;
        } else {
            i += 1;
        }
    }
    if start < chars.len() {
        push_trimmed(&chars[start..], &mut sentences);
    }
    sentences
}

fn next_non_ws_is_uppercase(rest: &[char]) -> bool {
    rest.iter()
        .find(|c| !c.is_whitespace())
        .is_some_and(|c| c.is_uppercase())
}

fn ends_with_abbreviation(sentence: &[char]) -> bool {
    // Last whitespace-delimited word, lowercased, including its terminator.
    let word: String = sentence
        .rsplit(|c: &char| c.is_whitespace())
        .next()
        .unwrap_or(&[])
        .iter()
        .flat_map(|c| c.to_lowercase())
        .collect();
    ABBREVIATIONS.contains(&word.as_str())
}

fn push_trimmed(chars: &[char], out: &mut Vec<String>) {
    let s: String = chars.iter().collect();
    let trimmed = s.trim();
    if !trimmed.is_empty() {
        out.push(trimmed.to_string());
    }
}

/// N-grams with multiplicity. Yields exactly `max(0, len - n + 1)` entries.
pub fn ngrams(seq: &TokenSeq, n: usize) -> HashMap<Vec<String>, usize> {
    assert!(n >= 1, "n-gram order must be >= 1");
    let mut counts = HashMap::new();
    let toks = seq.tokens();
    if toks.len() < n {
        return counts;
    }
    for window in toks.windows(n) {
        *counts.entry(window.to_vec()).or_insert(0) += 1;
    }
    counts
}

/// Longest common subsequence length, classic O(|a|·|b|) dynamic program
/// with a rolling row.
pub fn lcs_length(a: &TokenSeq, b: &TokenSeq) -> usize {
    let (a, b) = (a.tokens(), b.tokens());
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut curr = vec![0usize; b.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            curr[j] = if a[i - 1] == b[j - 1] {
                prev[j - 1] + 1
            } else {
                prev[j].max(curr[j - 1])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// Token positions of `a` hit by one canonical LCS of `a` and `b`.
///
/// Backtracking prefers stepping up over stepping left on ties, which is the
/// usual deterministic convention; any canonical choice yields `lcs_length`
/// many positions.
pub fn lcs_positions(a: &TokenSeq, b: &TokenSeq) -> Vec<usize> {
    let (at, bt) = (a.tokens(), b.tokens());
    let (n, m) = (at.len(), bt.len());
    let mut table = vec![vec![0usize; m + 1]; n + 1];
    for i in 1..=n {
        for j in 1..=m {
            table[i][j] = if at[i - 1] == bt[j - 1] {
                table[i - 1][j - 1] + 1
            } else {
                table[i - 1][j].max(table[i][j - 1])
            };
        }
    }
    let mut positions = Vec::new();
    let (mut i, mut j) = (n, m);
    while i > 0 && j > 0 {
        if at[i - 1] == bt[j - 1] {
            positions.push(i - 1);
            i -= 1;
            j -= 1;
        } else if table[i - 1][j] >= table[i][j - 1] {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    positions.reverse();
    positions
}

/// Union-LCS primitive: how many tokens of `ref_sentence` are covered by
/// the union of its per-candidate LCS matches. Each reference position
/// counts once no matter how many candidate sentences hit it.
pub fn union_lcs(ref_sentence: &TokenSeq, cand_sentences: &[TokenSeq]) -> usize {
    let mut hit = vec![false; ref_sentence.len()];
    for cand in cand_sentences {
        for pos in lcs_positions(ref_sentence, cand) {
            hit[pos] = true;
        }
    }
    hit.iter().filter(|h| **h).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(tokens: &[&str]) -> TokenSeq {
        TokenSeq::from_tokens(tokens.iter().copied())
    }

    #[test]
    fn tokenize_empty() {
        assert!(tokenize("").is_empty());
    }

    #[test]
    fn tokenize_splits_punctuation() {
        assert_eq!(
            tokenize("Police killed the gunman.").tokens(),
            ["police", "killed", "the", "gunman", "."]
        );
    }

    #[test]
    fn tokenize_collapses_whitespace() {
        assert_eq!(tokenize("  A  b ").tokens(), ["a", "b"]);
    }

    #[test]
    fn tokenize_contractions() {
        assert_eq!(tokenize("you'll").tokens(), ["you", "'", "ll"]);
    }

    #[test]
    fn split_two_sentences() {
        assert_eq!(split_sentences("Hello. World."), ["Hello.", "World."]);
    }

    #[test]
    fn split_without_terminator() {
        assert_eq!(split_sentences("One sentence"), ["One sentence"]);
    }

    #[test]
    fn split_guards_abbreviations() {
        assert_eq!(
            split_sentences("Dr. Smith left. He ran."),
            ["Dr. Smith left.", "He ran."]
        );
    }

    #[test]
    fn split_handles_terminator_runs() {
        assert_eq!(
            split_sentences("You didn't tell me?! Come on."),
            ["You didn't tell me?!", "Come on."]
        );
    }

    #[test]
    fn split_requires_uppercase_continuation() {
        assert_eq!(split_sentences("a b. c d."), ["a b. c d."]);
    }

    #[test]
    fn ngram_counts() {
        let counts = ngrams(&seq(&["a", "b", "a"]), 1);
        assert_eq!(counts[&vec!["a".to_string()]], 2);
        assert_eq!(counts[&vec!["b".to_string()]], 1);

        let bigrams = ngrams(&seq(&["a", "b", "a"]), 2);
        assert_eq!(bigrams.len(), 2);
        assert_eq!(bigrams[&vec!["a".to_string(), "b".to_string()]], 1);
        assert_eq!(bigrams[&vec!["b".to_string(), "a".to_string()]], 1);

        assert!(ngrams(&seq(&["a"]), 2).is_empty());
    }

    #[test]
    fn lcs_classic_pair() {
        // Brute-force verified: LCS(ABCBDAB, BDCABA) = 4.
        let a = seq(&["a", "b", "c", "b", "d", "a", "b"]);
        let b = seq(&["b", "d", "c", "a", "b", "a"]);
        assert_eq!(lcs_length(&a, &b), 4);
    }

    #[test]
    fn lcs_identity_and_disjoint() {
        let a = seq(&["a", "b", "c"]);
        assert_eq!(lcs_length(&a, &a), 3);
        assert_eq!(lcs_length(&seq(&["a"]), &seq(&["b"])), 0);
    }

    #[test]
    fn union_lcs_identity() {
        let r = seq(&["a", "b", "c"]);
        assert_eq!(union_lcs(&r, &[r.clone()]), 3);
    }

    #[test]
    fn union_lcs_combines_candidates() {
        let r = seq(&["a", "b", "c", "d"]);
        assert_eq!(union_lcs(&r, &[seq(&["a", "b"]), seq(&["c", "d"])]), 4);
    }

    #[test]
    fn union_lcs_empty_candidates() {
        assert_eq!(union_lcs(&seq(&["a", "b"]), &[]), 0);
    }

    proptest! {
        #[test]
        fn lcs_matches_bruteforce(
            a in proptest::collection::vec(0u8..3, 0..=8),
            b in proptest::collection::vec(0u8..3, 0..=8),
        ) {
            let to_seq = |v: &[u8]| TokenSeq::from_tokens(v.iter().map(|x| x.to_string()));
            let (sa, sb) = (to_seq(&a), to_seq(&b));
            prop_assert_eq!(lcs_length(&sa, &sb), crate::oracles::lcs_bruteforce(&sa, &sb).unwrap());
        }

        #[test]
        fn lcs_symmetric_and_bounded(
            a in proptest::collection::vec(0u8..3, 0..=10),
            b in proptest::collection::vec(0u8..3, 0..=10),
        ) {
            let to_seq = |v: &[u8]| TokenSeq::from_tokens(v.iter().map(|x| x.to_string()));
            let (sa, sb) = (to_seq(&a), to_seq(&b));
            let l = lcs_length(&sa, &sb);
            prop_assert_eq!(l, lcs_length(&sb, &sa));
            prop_assert!(l <= sa.len().min(sb.len()));
            prop_assert_eq!(lcs_length(&sa, &sa), sa.len());
        }

        #[test]
        fn ngram_multiplicities_sum(
            toks in proptest::collection::vec(0u8..5, 0..=12),
            n in 1usize..4,
        ) {
            let s = TokenSeq::from_tokens(toks.iter().map(|x| x.to_string()));
            let total: usize = ngrams(&s, n).values().sum();
            prop_assert_eq!(total, s.len().saturating_sub(n - 1));
        }

        #[test]
        fn tokenize_join_idempotent(text in "[ -~]{0,60}") {
            let once = tokenize(&text);
            let twice = tokenize(&once.join());
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn split_preserves_non_whitespace(text in "[ -~]{0,80}") {
            let strip = |s: &str| s.chars().filter(|c| !c.is_whitespace()).collect::<String>();
            let joined: String = split_sentences(&text).join(" ");
            prop_assert_eq!(strip(&joined), strip(&text));
        }

        #[test]
        fn union_lcs_single_candidate_is_lcs(
            a in proptest::collection::vec(0u8..3, 1..=8),
            b in proptest::collection::vec(0u8..3, 0..=8),
        ) {
            let to_seq = |v: &[u8]| TokenSeq::from_tokens(v.iter().map(|x| x.to_string()));
            let (sa, sb) = (to_seq(&a), to_seq(&b));
            let u = union_lcs(&sa, std::slice::from_ref(&sb));
            prop_assert_eq!(u, lcs_length(&sa, &sb));
            prop_assert!(u <= sa.len());
        }
    }
}
