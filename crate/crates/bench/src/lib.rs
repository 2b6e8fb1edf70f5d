//! Synthetic corpora for benchmarks.

use gec_core::{extract_edits, GoldSentence, SystemOutput, TokenSentence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Corpus {
    pub sources: Vec<TokenSentence>,
    pub gold: Vec<GoldSentence>,
    pub systems: Vec<SystemOutput>,
}

fn word(rng: &mut impl Rng, vocab: usize) -> String {
    format!("w{}", rng.random_range(0..vocab))
}

/// Copies `tokens`, rewriting each position with probability `rate`.
fn perturb(rng: &mut impl Rng, tokens: &[String], rate: f64, vocab: usize) -> Vec<String> {
    let mut out = Vec::with_capacity(tokens.len() + 4);
    for t in tokens {
        if !rng.random_bool(rate) {
            out.push(t.clone());
            continue;
        }
        match rng.random_range(0..3) {
            0 => out.push(word(rng, vocab)),
            1 => {}
            _ => {
                out.push(t.clone());
                out.push(word(rng, vocab));
            }
        }
    }
    if out.is_empty() {
        out.push(word(rng, vocab));
    }
    out
}

/// `sentences` sentences of 10 to 40 tokens, one gold annotation each, and
/// `systems` noisy correctors that mostly agree with the gold correction.
pub fn corpus(sentences: usize, systems: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = 500;
    let mut sources = Vec::with_capacity(sentences);
    let mut gold = Vec::with_capacity(sentences);
    let mut corrected = Vec::with_capacity(sentences);
    for _ in 0..sentences {
        let len = rng.random_range(10..=40);
        let tokens: Vec<String> = (0..len).map(|_| word(&mut rng, vocab)).collect();
        let source =
            TokenSentence::from_tokens(tokens.clone()).expect("generated tokens are valid");
        let target =
            TokenSentence::from_tokens(perturb(&mut rng, &tokens, 0.1, vocab)).expect("valid");
        let edits = extract_edits(&source, &target);
        gold.push(GoldSentence::single(source.clone(), edits).expect("extracted edits are valid"));
        sources.push(source);
        corrected.push(target);
    }
    let systems = (0..systems)
        .map(|k| {
            let sentences = corrected
                .iter()
                .map(|t| {
                    TokenSentence::from_tokens(perturb(&mut rng, t.tokens(), 0.05, vocab))
                        .expect("valid")
                })
                .collect();
            SystemOutput::new(format!("sys{k}"), sentences)
        })
        .collect();
    Corpus {
        sources,
        gold,
        systems,
    }
}
