//! Brute-force reference implementations.
//!
//! Everything in this module is deliberately exponential and exists only to
//! check the production code: exponential LCS, direct n-gram overlap
//! counting, exhaustive METEOR alignment search, transport-plan enumeration
//! and exhaustive sequence scoring for beam search. None of it shares code
//! with the implementations it verifies.
//!
//! The `self-check` CLI subcommand runs [`self_check`], which replays the
//! oracle comparisons and reports one line per check.

use std::collections::HashMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::decode::{DecodeConfig, SeqModel};
use crate::textcore::TokenSeq;

/// Enumeration limits. Inputs beyond these bounds are rejected rather than
/// ground through, so every oracle stays sub-second per case.
#[derive(Debug, Clone, Copy)]
pub struct OracleBudget {
    pub max_len: usize,
    pub max_alphabet: usize,
    pub max_plans: usize,
}

impl Default for OracleBudget {
    fn default() -> Self {
        OracleBudget {
            max_len: 8,
            max_alphabet: 8,
            max_plans: 2_000_000,
        }
    }
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("oracle budget exceeded: {0}")]
    BudgetExceeded(String),
}

/// LCS by enumerating all subsequences of the shorter side.
pub fn lcs_bruteforce(a: &TokenSeq, b: &TokenSeq) -> Result<usize, OracleError> {
    let budget = OracleBudget::default();
    if a.len() > budget.max_len || b.len() > budget.max_len {
        return Err(OracleError::BudgetExceeded(format!(
            "lcs_bruteforce limited to sequences of length {}",
            budget.max_len
        )));
    }
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut best = 0usize;
    for mask in 0u32..(1 << short.len()) {
        let sub: Vec<&String> = (0..short.len())
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| &short[i])
            .collect();
        if sub.len() > best && is_subsequence(&sub, long) {
            best = sub.len();
        }
    }
    Ok(best)
}

fn is_subsequence(needle: &[&String], haystack: &TokenSeq) -> bool {
    let mut it = 0usize;
    for tok in haystack.tokens() {
        if it < needle.len() && tok == needle[it] {
            it += 1;
        }
    }
    it == needle.len()
}

/// N-gram overlap by direct window-against-window matching with used flags,
/// no counting maps involved.
pub fn ngram_overlap_bruteforce(cand: &TokenSeq, reference: &TokenSeq, n: usize) -> usize {
    assert!(n >= 1);
    let cand_windows: Vec<&[String]> = cand.tokens().windows(n).collect();
    let ref_windows: Vec<&[String]> = reference.tokens().windows(n).collect();
    let mut used = vec![false; ref_windows.len()];
    let mut overlap = 0usize;
    for cw in &cand_windows {
        for (j, rw) in ref_windows.iter().enumerate() {
            if !used[j] && cw == rw {
                used[j] = true;
                overlap += 1;
                break;
            }
        }
    }
    overlap
}

/// Exhaustive METEOR alignment: enumerates every injective matching of
/// equal unigrams and returns `(m, chunks)` for a maximum-size matching
/// with the fewest chunks.
pub fn meteor_alignment_bruteforce(
    cand: &TokenSeq,
    reference: &TokenSeq,
) -> Result<(usize, usize), OracleError> {
    let budget = OracleBudget::default();
    if cand.len() > budget.max_len || reference.len() > budget.max_len {
        return Err(OracleError::BudgetExceeded(
            "meteor_alignment_bruteforce limited to short sequences".into(),
        ));
    }
    let mut best = (0usize, usize::MAX);
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let mut used = vec![false; reference.len()];
    enumerate_alignments(cand, reference, 0, &mut used, &mut pairs, &mut best);
    if best.0 == 0 {
        return Ok((0, 0));
    }
    Ok(best)
}

fn enumerate_alignments(
    cand: &TokenSeq,
    reference: &TokenSeq,
    i: usize,
    used: &mut Vec<bool>,
    pairs: &mut Vec<(usize, usize)>,
    best: &mut (usize, usize),
) {
    if i == cand.len() {
        let m = pairs.len();
        let ch = chunk_count(pairs);
        if m > best.0 || (m == best.0 && ch < best.1) {
            *best = (m, ch);
        }
        return;
    }
    // Leave candidate position i unmatched.
    enumerate_alignments(cand, reference, i + 1, used, pairs, best);
    for j in 0..reference.len() {
        if !used[j] && cand[i] == reference[j] {
            used[j] = true;
            pairs.push((i, j));
            enumerate_alignments(cand, reference, i + 1, used, pairs, best);
            pairs.pop();
            used[j] = false;
        }
    }
}

/// Chunks = maximal runs of pairs consecutive on both sides. `pairs` must be
/// ordered by candidate position, which the enumeration guarantees.
fn chunk_count(pairs: &[(usize, usize)]) -> usize {
    let mut chunks = 0usize;
    let mut prev: Option<(usize, usize)> = None;
    for &(i, j) in pairs {
        if prev != Some((i.wrapping_sub(1), j.wrapping_sub(1))) {
            chunks += 1;
        }
        prev = Some((i, j));
    }
    chunks
}

/// Exact transport cost by enumerating plans on a quarter-mass grid.
///
/// Marginals that are multiples of 0.25 admit an optimal plan whose entries
/// are multiples of 0.25 as well (transportation-polytope vertices are
/// integral in units of the marginal grid), so grid enumeration is exact.
pub fn wmd_bruteforce(p: &[f64], q: &[f64], costs: &[Vec<f64>]) -> Result<f64, OracleError> {
    if p.len() > 3 || q.len() > 3 {
        return Err(OracleError::BudgetExceeded(
            "wmd_bruteforce limited to 3 support points per side".into(),
        ));
    }
    let to_units = |xs: &[f64]| -> Result<Vec<i64>, OracleError> {
        xs.iter()
            .map(|&x| {
                let u = (x * 4.0).round();
                if (x * 4.0 - u).abs() > 1e-9 {
                    Err(OracleError::BudgetExceeded(
                        "wmd_bruteforce masses must sit on a 0.25 grid".into(),
                    ))
                } else {
                    Ok(u as i64)
                }
            })
            .collect()
    };
    let supply = to_units(p)?;
    let demand = to_units(q)?;

    let mut best = f64::INFINITY;
    let mut plan = vec![vec![0i64; q.len()]; p.len()];
    let mut visited = 0usize;
    enumerate_plans(
        &supply, &demand, costs, 0, 0, &mut plan, &mut best, &mut visited,
    )?;
    Ok(best / 4.0)
}

#[allow(clippy::too_many_arguments)]
fn enumerate_plans(
    supply: &[i64],
    demand: &[i64],
    costs: &[Vec<f64>],
    row: usize,
    col: usize,
    plan: &mut Vec<Vec<i64>>,
    best: &mut f64,
    visited: &mut usize,
) -> Result<(), OracleError> {
    *visited += 1;
    if *visited > OracleBudget::default().max_plans {
        return Err(OracleError::BudgetExceeded(
            "wmd_bruteforce plan enumeration too large".into(),
        ));
    }
    if row == supply.len() {
        let consumed: Vec<i64> = (0..demand.len())
            .map(|j| plan.iter().map(|r| r[j]).sum())
            .collect();
        if consumed == demand {
            let cost: f64 = plan
                .iter()
                .enumerate()
                .flat_map(|(i, r)| r.iter().enumerate().map(move |(j, &u)| (i, j, u)))
                .map(|(i, j, u)| u as f64 * costs[i][j])
                .sum();
            if cost < *best {
                *best = cost;
            }
        }
        return Ok(());
    }
    let row_used: i64 = plan[row][..col].iter().sum();
    let remaining = supply[row] - row_used;
    if col == demand.len() {
        if remaining == 0 {
            return enumerate_plans(supply, demand, costs, row + 1, 0, plan, best, visited);
        }
        return Ok(());
    }
    let col_used: i64 = plan[..row].iter().map(|r| r[col]).sum();
    let col_free = demand[col] - col_used;
    for units in 0..=remaining.min(col_free) {
        plan[row][col] = units;
        enumerate_plans(supply, demand, costs, row, col + 1, plan, best, visited)?;
    }
    plan[row][col] = 0;
    Ok(())
}

/// Exhaustive search over every generable sequence: applies the no-repeat
/// n-gram filter and length-penalty scoring from first principles and
/// returns the argmax (ties broken toward the lexicographically smaller
/// token sequence). Finished sequences beat unfinished ones, mirroring how
/// the decoder ranks hypotheses.
pub fn best_sequence_bruteforce(
    model: &dyn SeqModel,
    cfg: &DecodeConfig,
) -> Result<Vec<u32>, OracleError> {
    if model.vocab_size() > 6 || cfg.max_len > 6 {
        return Err(OracleError::BudgetExceeded(
            "best_sequence_bruteforce limited to vocab <= 6, max_len <= 6".into(),
        ));
    }
    let eos = model.eos_id();
    let mut best_finished: Option<(f64, Vec<u32>)> = None;
    let mut best_unfinished: Option<(f64, Vec<u32>)> = None;

    let mut stack: Vec<Vec<u32>> = vec![vec![]];
    while let Some(prefix) = stack.pop() {
        let log_probs = model.next_log_probs(&prefix);
        // Content length is bounded by max_len; the closing EOS rides on
        // top but is still subject to the repeat filter.
        let mut with_eos = prefix.clone();
        with_eos.push(eos);
        if !has_repeated_ngram(&with_eos, cfg.block_n) {
            let lp = log_seq_prob(model, &prefix) + log_probs[eos as usize];
            let score = lp / gnmt_penalty(prefix.len().max(1), cfg.alpha);
            consider(&mut best_finished, score, prefix.clone());
        }
        if prefix.len() == cfg.max_len {
            let score =
                log_seq_prob(model, &prefix) / gnmt_penalty(prefix.len().max(1), cfg.alpha);
            consider(&mut best_unfinished, score, prefix.clone());
            continue;
        }
        for tok in (0..model.vocab_size() as u32).rev() {
            if tok == eos {
                continue;
            }
            let mut next = prefix.clone();
            next.push(tok);
            if !has_repeated_ngram(&next, cfg.block_n) {
                stack.push(next);
            }
        }
    }
    match (best_finished, best_unfinished) {
        (Some((_, seq)), _) => Ok(seq),
        (None, Some((_, seq))) => Ok(seq),
        (None, None) => Ok(vec![]),
    }
}

fn consider(best: &mut Option<(f64, Vec<u32>)>, score: f64, seq: Vec<u32>) {
    let better = match best {
        None => true,
        Some((s, b)) => score > *s + 1e-12 || ((score - *s).abs() <= 1e-12 && seq < *b),
    };
    if better {
        *best = Some((score, seq));
    }
}

fn log_seq_prob(model: &dyn SeqModel, seq: &[u32]) -> f64 {
    let mut total = 0.0;
    for (i, &tok) in seq.iter().enumerate() {
        total += model.next_log_probs(&seq[..i])[tok as usize];
    }
    total
}

fn has_repeated_ngram(seq: &[u32], n: usize) -> bool {
    if n == 0 || seq.len() < n + 1 {
        return false;
    }
    let mut seen = HashMap::new();
    for w in seq.windows(n) {
        let count = seen.entry(w.to_vec()).or_insert(0usize);
        *count += 1;
        if *count > 1 {
            return true;
        }
    }
    false
}

fn gnmt_penalty(length: usize, alpha: f64) -> f64 {
    ((5.0 + length as f64) / 6.0).powf(alpha)
}

/// One oracle-vs-implementation comparison for [`self_check`].
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Replays the oracle comparisons against the production implementations.
/// Deterministic: fixed seeds throughout.
pub fn self_check() -> Vec<CheckResult> {
    let mut results = Vec::new();

    results.push(check_rouge_against_bruteforce());
    results.push(check_meteor_against_bruteforce());
    results.push(check_transport_against_bruteforce());
    results.push(check_beam_against_bruteforce());

    results
}

fn random_seq(rng: &mut ChaCha8Rng, max_len: usize, alphabet: usize) -> TokenSeq {
    let len = rng.random_range(0..=max_len);
    TokenSeq::from_tokens((0..len).map(|_| format!("t{}", rng.random_range(0..alphabet))))
}

fn check_rouge_against_bruteforce() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let cand = random_seq(&mut rng, 8, 5);
        let reference = random_seq(&mut rng, 8, 5);
        for n in 1..=2usize {
            let got = crate::metrics::rouge_n(&cand, &reference, n);
            let overlap = ngram_overlap_bruteforce(&cand, &reference, n) as f64;
            let cand_total = cand.len().saturating_sub(n - 1) as f64;
            let ref_total = reference.len().saturating_sub(n - 1) as f64;
            let p = if cand_total > 0.0 { overlap / cand_total } else { 0.0 };
            let r = if ref_total > 0.0 { overlap / ref_total } else { 0.0 };
            worst = worst.max((got.precision - p).abs()).max((got.recall - r).abs());
        }
        let got = crate::metrics::rouge_l(&cand, &reference);
        let l = lcs_bruteforce(&cand, &reference).expect("within budget") as f64;
        let p = if cand.is_empty() { 0.0 } else { l / cand.len() as f64 };
        let r = if reference.is_empty() { 0.0 } else { l / reference.len() as f64 };
        worst = worst.max((got.precision - p).abs()).max((got.recall - r).abs());
    }
    CheckResult {
        name: "rouge-vs-bruteforce",
        passed: worst < 1e-9,
        detail: format!("max abs deviation {worst:.2e} over 100 random pairs"),
    }
}

fn check_meteor_against_bruteforce() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut failures = 0usize;
    for _ in 0..50 {
        let cand = random_seq(&mut rng, 7, 4);
        let reference = random_seq(&mut rng, 7, 4);
        let (m, ch) = crate::metrics::meteor_alignment(&cand, &reference);
        let (bm, bch) = meteor_alignment_bruteforce(&cand, &reference).expect("within budget");
        if (m, ch) != (bm, bch) {
            failures += 1;
        }
    }
    CheckResult {
        name: "meteor-vs-bruteforce",
        passed: failures == 0,
        detail: format!("{failures} mismatches over 50 random pairs"),
    }
}

fn check_transport_against_bruteforce() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst: f64 = 0.0;
    for _ in 0..30 {
        let (p, q) = (random_grid_masses(&mut rng), random_grid_masses(&mut rng));
        let costs: Vec<Vec<f64>> = (0..p.len())
            .map(|_| (0..q.len()).map(|_| rng.random_range(0.0..2.0)).collect())
            .collect();
        let exact = crate::metrics::min_cost_transport(&p, &q, &costs)
            .expect("valid instance")
            .cost;
        let brute = wmd_bruteforce(&p, &q, &costs).expect("within budget");
        worst = worst.max((exact - brute).abs());
    }
    CheckResult {
        name: "transport-vs-bruteforce",
        passed: worst < 1e-6,
        detail: format!("max cost deviation {worst:.2e} over 30 grid instances"),
    }
}

/// Random distribution with at most 3 support points and masses on the
/// quarter grid.
fn random_grid_masses(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let points = rng.random_range(1..=3usize);
    let mut units = vec![0i64; points];
    for _ in 0..4 {
        units[rng.random_range(0..points)] += 1;
    }
    units.retain(|&u| u > 0);
    units.iter().map(|&u| u as f64 / 4.0).collect()
}

fn check_beam_against_bruteforce() -> CheckResult {
    let mut failures = 0usize;
    for seed in 0..20u64 {
        let model = crate::decode::BigramTableModel::random(4, seed);
        let cfg = DecodeConfig {
            beam_width: 3,
            alpha: 1.5,
            block_n: 2,
            max_len: 5,
            ..DecodeConfig::default()
        };
        let beam = crate::decode::beam_search(&model, &cfg);
        let brute = best_sequence_bruteforce(&model, &cfg).expect("within budget");
        if beam != brute {
            failures += 1;
        }
    }
    CheckResult {
        name: "beam-vs-bruteforce",
        passed: failures == 0,
        detail: format!("{failures} mismatches over 20 random bigram models"),
    }
}
