//! Shared fixtures for the integration suites: synthetic corpora with
//! separable salience (the lead sentence is always the summary) and small
//! embedding files.

use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use season::data::Example;

const LEAD_WORDS: [&str; 8] = [
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel",
];
const BODY_WORDS: [&str; 8] = [
    "india", "juliett", "kilo", "lima", "mike", "november", "oscar", "papa",
];

fn sentence(rng: &mut ChaCha8Rng, pool: &[&str], len: usize, terminator: char) -> String {
    let words: Vec<&str> = (0..len).map(|_| pool[rng.random_range(0..pool.len())]).collect();
    let mut s = words.join(" ");
    s[..1].make_ascii_uppercase();
    s.push(terminator);
    s
}

/// Copy-summarization corpus: the summary is the lead sentence verbatim and
/// shares nothing with the remaining sentences (not even the terminator),
/// so the lead sentence scores ROUGE-L F1 = 1 (top salience degree) and
/// every other sentence scores exactly 0.
pub fn copy_corpus(n: usize, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let lead_len = rng.random_range(3..6);
            let lead = sentence(&mut rng, &LEAD_WORDS, lead_len, '.');
            let body: Vec<String> = (0..2)
                .map(|_| {
                    let len = rng.random_range(3..6);
                    sentence(&mut rng, &BODY_WORDS, len, '!')
                })
                .collect();
            Example {
                id: format!("ex{i:04}"),
                document: format!("{lead} {}", body.join(" ")),
                summary: lead.clone(),
            }
        })
        .collect()
}

pub fn write_corpus(dir: &Path, name: &str, corpus: &[Example]) -> PathBuf {
    let path = dir.join(name);
    season::data::save_corpus(&path, corpus).expect("write corpus");
    path
}

/// Deterministic embedding file covering both word pools, punctuation and
/// the `<unk>` fallback.
pub fn write_embeddings(dir: &Path, name: &str, dim: usize) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut lines = Vec::new();
    for word in LEAD_WORDS.iter().chain(BODY_WORDS.iter()).chain([".", "<unk>"].iter()) {
        let vector: Vec<String> = (0..dim)
            .map(|_| format!("{:.6}", rng.random_range(-1.0..1.0f64)))
            .collect();
        lines.push(format!("{word} {}", vector.join(" ")));
    }
    let path = dir.join(name);
    std::fs::write(&path, lines.join("\n") + "\n").expect("write embeddings");
    path
}
