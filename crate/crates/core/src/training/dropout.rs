use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::Rng;

/// Number of words dropped per batch: `ceil(fraction * vocab_len)`.
pub fn dropout_count(vocab_len: usize, fraction: f64) -> usize {
    // the epsilon keeps exact products like 0.15 * 100 from rounding up to 16
    (((fraction * vocab_len as f64) - 1e-9).ceil().max(0.0) as usize).min(vocab_len)
}

/// Uniform sample without replacement of `ceil(fraction * |vocab|)` words.
pub fn sample_word_dropout<'a, R: Rng + ?Sized>(vocab: &'a [String], fraction: f64, rng: &mut R) -> BTreeSet<&'a str> {
    let k = dropout_count(vocab.len(), fraction);
    sample(rng, vocab.len(), k)
        .into_iter()
        .map(|i| vocab[i].as_str())
        .collect()
}
