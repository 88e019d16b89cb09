//! Constrained decoding: beam search with GNMT length penalty and
//! no-repeat n-gram blocking, plus greedy decoding.
//!
//! The decoder is generic over [`SeqModel`] so the same search drives the
//! trained transformer, hand-built toy models and the brute-force oracle
//! comparisons.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Anything that scores next tokens given the generated prefix. `prefix`
/// holds content tokens only (no implicit begin token); implementations
/// condition on whatever input they were built around.
pub trait SeqModel {
    fn vocab_size(&self) -> usize;
    fn eos_id(&self) -> u32;
    /// Log-probabilities over the whole vocabulary for the next position.
    fn next_log_probs(&self, prefix: &[u32]) -> Vec<f64>;
}

/// Decoding knobs. Defaults follow the usual summarization setup: beam 5,
/// length-penalty exponent 1.5, 3-gram blocking, temperature 0.5 for the
/// salience sharpening step.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    pub beam_width: usize,
    /// Length-penalty exponent; 0 disables normalization.
    pub alpha: f64,
    /// Blocked n-gram order; 0 disables blocking.
    pub block_n: usize,
    pub max_len: usize,
    /// Temperature for sharpening the predicted salience distribution.
    pub temperature: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_width: 5,
            alpha: 1.5,
            block_n: 3,
            max_len: 64,
            temperature: 0.5,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.beam_width < 1 {
            return Err("beam width must be >= 1".into());
        }
        if self.max_len < 1 {
            return Err("max_len must be >= 1".into());
        }
        if self.alpha < 0.0 {
            return Err("length-penalty exponent must be >= 0".into());
        }
        if self.temperature <= 0.0 {
            return Err("temperature must be > 0".into());
        }
        Ok(())
    }
}

/// One decode hypothesis. `tokens` includes the end-of-sequence id once
/// finished; `logprob` is the cumulative log-probability of everything in
/// `tokens`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<u32>,
    pub logprob: f64,
    pub finished: bool,
}

impl Hypothesis {
    fn empty() -> Self {
        Hypothesis {
            tokens: Vec::new(),
            logprob: 0.0,
            finished: false,
        }
    }

    /// Content length: generated tokens excluding the end marker.
    fn content_len(&self) -> usize {
        self.tokens.len() - usize::from(self.finished)
    }

    /// Normalized score used for final ranking.
    fn score(&self, alpha: f64) -> f64 {
        self.logprob / length_penalty(self.content_len().max(1), alpha)
    }
}

/// GNMT length penalty `((5 + length) / 6)^alpha`.
pub fn length_penalty(length: usize, alpha: f64) -> f64 {
    assert!(length >= 1, "length must be >= 1");
    ((5.0 + length as f64) / 6.0).powf(alpha)
}

/// True when appending `next` would recreate an `n`-gram already present in
/// `tokens`. `n = 0` disables blocking.
pub fn violates_block(tokens: &[u32], next: u32, n: usize) -> bool {
    if n == 0 || tokens.len() < n - 1 || tokens.len() + 1 < n {
        return false;
    }
    let mut new_gram: Vec<u32> = tokens[tokens.len() - (n - 1)..].to_vec();
    new_gram.push(next);
    tokens.windows(n).any(|w| w == new_gram.as_slice())
}

/// Beam search over `model`. Finished hypotheses are ranked by
/// `logprob / length_penalty`; the best finished one wins, falling back to
/// the best unfinished hypothesis when nothing terminated within `max_len`.
/// Ties break toward the lexicographically smaller token sequence.
pub fn beam_search(model: &dyn SeqModel, cfg: &DecodeConfig) -> Vec<u32> {
    beam_search_hypothesis(model, cfg).tokens_without_eos()
}

/// Like [`beam_search`], also exposing the winning hypothesis's normalized
/// score.
pub fn beam_search_with_score(model: &dyn SeqModel, cfg: &DecodeConfig) -> (Vec<u32>, f64) {
    let hyp = beam_search_hypothesis(model, cfg);
    let score = hyp.score(cfg.alpha);
    (hyp.tokens_without_eos(), score)
}

impl Hypothesis {
    fn tokens_without_eos(&self) -> Vec<u32> {
        self.tokens[..self.content_len()].to_vec()
    }
}

fn beam_search_hypothesis(model: &dyn SeqModel, cfg: &DecodeConfig) -> Hypothesis {
    cfg.validate().expect("valid decode config");
    let eos = model.eos_id();
    let mut active: Vec<Hypothesis> = vec![Hypothesis::empty()];
    let mut finished: Vec<Hypothesis> = Vec::new();

    // `max_len` bounds generated content; the closing EOS rides on top.
    // Every step harvests the EOS-finish of every surviving hypothesis, so
    // finished candidates never compete with continuations for beam slots.
    for step in 0..=cfg.max_len {
        let mut candidates: Vec<Hypothesis> = Vec::new();
        for hyp in &active {
            let log_probs = model.next_log_probs(&hyp.tokens);
            if !violates_block(&hyp.tokens, eos, cfg.block_n) {
                let mut tokens = hyp.tokens.clone();
                tokens.push(eos);
                finished.push(Hypothesis {
                    tokens,
                    logprob: hyp.logprob + log_probs[eos as usize],
                    finished: true,
                });
            }
            if step == cfg.max_len {
                continue;
            }
            for (tok, &lp) in log_probs.iter().enumerate() {
                let tok = tok as u32;
                if tok == eos || violates_block(&hyp.tokens, tok, cfg.block_n) {
                    continue;
                }
                let mut tokens = hyp.tokens.clone();
                tokens.push(tok);
                candidates.push(Hypothesis {
                    tokens,
                    logprob: hyp.logprob + lp,
                    finished: false,
                });
            }
        }
        if candidates.is_empty() {
            break;
        }
        candidates.sort_by(|a, b| {
            b.logprob
                .total_cmp(&a.logprob)
                .then_with(|| a.tokens.cmp(&b.tokens))
        });
        candidates.truncate(cfg.beam_width);
        active = candidates;
    }

    let rank = |pool: Vec<Hypothesis>| -> Option<Hypothesis> {
        pool.into_iter().min_by(|a, b| {
            b.score(cfg.alpha)
                .partial_cmp(&a.score(cfg.alpha))
                .expect("finite scores")
                .then_with(|| a.tokens.cmp(&b.tokens))
        })
    };
    match rank(finished) {
        Some(best) => best,
        None => rank(active).unwrap_or_else(Hypothesis::empty),
    }
}

/// Greedy decoding: follows the argmax content token at every step under
/// the same blocking rule, harvesting the EOS-finish of each prefix along
/// the way; the best-scoring finish wins. Exactly beam search with width 1.
pub fn greedy(model: &dyn SeqModel, cfg: &DecodeConfig) -> Vec<u32> {
    cfg.validate().expect("valid decode config");
    let eos = model.eos_id();
    let mut tokens: Vec<u32> = Vec::new();
    let mut logprob = 0.0f64;
    let mut best: Option<(f64, Vec<u32>)> = None;
    for step in 0..=cfg.max_len {
        let log_probs = model.next_log_probs(&tokens);
        if !violates_block(&tokens, eos, cfg.block_n) {
            let score = (logprob + log_probs[eos as usize])
                / length_penalty(tokens.len().max(1), cfg.alpha);
            if best.as_ref().is_none_or(|(s, _)| score > *s) {
                best = Some((score, tokens.clone()));
            }
        }
        if step == cfg.max_len {
            break;
        }
        let next = log_probs
            .iter()
            .enumerate()
            .filter(|(tok, _)| {
                *tok as u32 != eos && !violates_block(&tokens, *tok as u32, cfg.block_n)
            })
            .max_by(|a, b| a.1.total_cmp(b.1).then_with(|| b.0.cmp(&a.0)));
        let Some((tok, &lp)) = next else {
            break;
        };
        tokens.push(tok as u32);
        logprob += lp;
    }
    match best {
        Some((_, tokens)) => tokens,
        None => tokens,
    }
}

/// Normalized score of a fixed token sequence under `model` and the beam
/// scoring rule; `finished` appends the end-of-sequence step.
pub fn sequence_score(model: &dyn SeqModel, tokens: &[u32], finished: bool, cfg: &DecodeConfig) -> f64 {
    let mut logprob = 0.0;
    for (i, &tok) in tokens.iter().enumerate() {
        logprob += model.next_log_probs(&tokens[..i])[tok as usize];
    }
    if finished {
        logprob += model.next_log_probs(tokens)[model.eos_id() as usize];
    }
    logprob / length_penalty(tokens.len().max(1), cfg.alpha)
}

/// A table-driven next-token model: the distribution depends only on the
/// most recent token. Small, fully known, and exactly what the search
/// oracles need.
#[derive(Debug, Clone)]
pub struct BigramTableModel {
    /// `rows[0]` is the start distribution, `rows[1 + t]` follows token `t`.
    /// Each row holds log-probabilities over the vocabulary.
    rows: Vec<Vec<f64>>,
}

impl BigramTableModel {
    /// Normalizes row-wise probability weights into log space. The final
    /// vocabulary id acts as end-of-sequence.
    pub fn from_weights(rows: Vec<Vec<f64>>) -> Self {
        let vocab = rows[0].len();
        assert!(rows.len() == vocab + 1, "need one start row plus one per token");
        let rows = rows
            .into_iter()
            .map(|row| {
                assert!(row.iter().all(|w| *w > 0.0), "weights must be positive");
                let total: f64 = row.iter().sum();
                row.into_iter().map(|w| (w / total).ln()).collect()
            })
            .collect();
        BigramTableModel { rows }
    }

    /// Seeded random instance with moderately peaked rows.
    pub fn random(vocab: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..=vocab)
            .map(|_| {
                (0..vocab)
                    .map(|_| rng.random_range(0.05f64..1.0).powi(3))
                    .collect()
            })
            .collect();
        Self::from_weights(rows)
    }
}

impl SeqModel for BigramTableModel {
    fn vocab_size(&self) -> usize {
        self.rows[0].len()
    }

    fn eos_id(&self) -> u32 {
        (self.vocab_size() - 1) as u32
    }

    fn next_log_probs(&self, prefix: &[u32]) -> Vec<f64> {
        let row = prefix.last().map(|&t| 1 + t as usize).unwrap_or(0);
        self.rows[row].clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::best_sequence_bruteforce;

    #[test]
    fn length_penalty_values() {
        assert!((length_penalty(3, 0.0) - 1.0).abs() < 1e-12);
        assert!((length_penalty(1, 1.5) - 1.0).abs() < 1e-12);
        assert!((length_penalty(7, 1.5) - 2.0f64.powf(1.5)).abs() < 1e-12);
        assert!((length_penalty(7, 1.5) - 2.8284).abs() < 1e-4);
    }

    #[test]
    fn blocking_basics() {
        assert!(violates_block(&[0, 1, 2, 0, 1], 2, 3));
        assert!(!violates_block(&[0, 1, 2, 0, 1], 3, 3));
        assert!(!violates_block(&[0], 1, 3));
        assert!(!violates_block(&[0, 1, 0, 1], 0, 0));
    }

    #[test]
    fn greedy_is_deterministic_and_bounded() {
        let model = BigramTableModel::random(4, 9);
        let cfg = DecodeConfig {
            max_len: 5,
            ..DecodeConfig::default()
        };
        let a = greedy(&model, &cfg);
        let b = greedy(&model, &cfg);
        assert_eq!(a, b);
        assert!(a.len() <= 5);
    }

    #[test]
    fn beam_width_one_equals_greedy() {
        for seed in 0..50u64 {
            let model = BigramTableModel::random(5, seed);
            let cfg = DecodeConfig {
                beam_width: 1,
                block_n: 2,
                max_len: 6,
                ..DecodeConfig::default()
            };
            assert_eq!(beam_search(&model, &cfg), greedy(&model, &cfg), "seed {seed}");
        }
    }

    #[test]
    fn beam_escapes_the_greedy_trap() {
        // Token 1 starts slightly worse than token 0 but finishes with high
        // probability; greedy takes token 0 and pays for it.
        let rows = vec![
            vec![0.58, 0.40, 0.02], // start
            vec![0.40, 0.35, 0.25], // after token 0
            vec![0.05, 0.05, 0.90], // after token 1
            vec![0.34, 0.33, 0.33], // after eos (unused)
        ];
        let model = BigramTableModel::from_weights(rows);
        let cfg = DecodeConfig {
            beam_width: 2,
            alpha: 1.5,
            block_n: 0,
            max_len: 4,
            temperature: 0.5,
        };
        let beam = beam_search(&model, &cfg);
        let greedy_out = greedy(&model, &cfg);
        let oracle = best_sequence_bruteforce(&model, &cfg).unwrap();
        assert_eq!(beam, oracle);
        assert_ne!(beam, greedy_out);
        assert_eq!(beam, vec![1]);
    }

    #[test]
    fn beam_matches_bruteforce_on_random_models() {
        for seed in 100..120u64 {
            let model = BigramTableModel::random(4, seed);
            let cfg = DecodeConfig {
                beam_width: 4,
                alpha: 1.5,
                block_n: 2,
                max_len: 5,
                temperature: 0.5,
            };
            let beam = beam_search(&model, &cfg);
            let oracle = best_sequence_bruteforce(&model, &cfg).unwrap();
            assert_eq!(beam, oracle, "seed {seed}");
        }
    }

    #[test]
    fn blocking_prevents_repeats_in_decodes() {
        for seed in 0..100u64 {
            let model = BigramTableModel::random(4, seed);
            let cfg = DecodeConfig {
                beam_width: 3,
                block_n: 3,
                max_len: 12,
                ..DecodeConfig::default()
            };
            let out = beam_search(&model, &cfg);
            assert!(out.len() <= 12);
            if cfg.block_n > 0 && out.len() > cfg.block_n {
                let grams: Vec<&[u32]> = out.windows(cfg.block_n).collect();
                for (i, a) in grams.iter().enumerate() {
                    for b in grams.iter().skip(i + 1) {
                        assert_ne!(a, b, "seed {seed}: repeated {:?}", a);
                    }
                }
            }
        }
    }

    #[test]
    fn beam_score_never_below_greedy() {
        for seed in 0..20u64 {
            let model = BigramTableModel::random(5, seed);
            let cfg = DecodeConfig {
                beam_width: 3,
                block_n: 2,
                max_len: 6,
                ..DecodeConfig::default()
            };
            let (_, beam_score) = beam_search_with_score(&model, &cfg);
            let greedy_tokens = greedy(&model, &cfg);
            let greedy_score = sequence_score(&model, &greedy_tokens, true, &cfg);
            assert!(
                beam_score >= greedy_score - 1e-12,
                "seed {seed}: {beam_score} < {greedy_score}"
            );
        }
    }

    #[test]
    fn wider_beams_never_score_worse() {
        for seed in 0..20u64 {
            let model = BigramTableModel::random(4, seed);
            let mut last = f64::NEG_INFINITY;
            for width in 1..=5usize {
                let cfg = DecodeConfig {
                    beam_width: width,
                    block_n: 0,
                    max_len: 6,
                    ..DecodeConfig::default()
                };
                let (_, score) = beam_search_with_score(&model, &cfg);
                assert!(
                    score >= last - 1e-12,
                    "seed {seed}: width {width} scored {score} < {last}"
                );
                last = score;
            }
        }
    }

    #[test]
    fn hypothesis_logprob_monotone_under_extension() {
        let model = BigramTableModel::random(4, 3);
        let cfg = DecodeConfig {
            block_n: 0,
            max_len: 6,
            ..DecodeConfig::default()
        };
        let tokens = greedy(&model, &cfg);
        let mut prev = 0.0;
        for i in 1..=tokens.len() {
            let lp = sequence_score(&model, &tokens[..i], false, &cfg)
                * length_penalty(i.max(1), cfg.alpha);
            assert!(lp <= prev + 1e-12);
            prev = lp;
        }
    }
}
