//! Contextual-compositional predictor of substitute embeddings for
//! out-of-vocabulary words.
//!
//! The context around the target is encoded by a BiLSTM that skips the target
//! slot, the target's characters by a second BiLSTM, and each sequence of
//! hidden states is pooled with attention. The two pooled vectors are
//! concatenated (characters first, then context) and fed through
//! `linear -> tanh -> linear` to produce the predicted embedding.
//!
//! The character BiLSTM width is never given explicitly; 128 per direction is
//! the only value that makes the concatenation 512 wide when the context
//! BiLSTM is 128 per direction.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::layers::{
    attention_pool, bilstm_encode, linear_forward, AttentionParams, BiLstmParams, EmbeddingParams,
    LinearParams,
};

/// Maximum number of context words around a target.
pub const MAX_CONTEXT: usize = 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct OovPredictorConfig {
    pub word_dim: usize,
    pub char_dim: usize,
    pub hidden_dim: usize,
    pub fuse_dim: usize,
    pub max_context: usize,
}

impl Default for OovPredictorConfig {
    fn default() -> Self {
        OovPredictorConfig {
            word_dim: 64,
            char_dim: 20,
            hidden_dim: 128,
            fuse_dim: 64,
            max_context: MAX_CONTEXT,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OovPredictorParams {
    pub config: OovPredictorConfig,
    pub char_embeddings: EmbeddingParams,
    pub char_bilstm: BiLstmParams,
    pub context_bilstm: BiLstmParams,
    pub char_attention: AttentionParams,
    pub context_attention: AttentionParams,
    pub fuse1: LinearParams,
    pub fuse2: LinearParams,
}

impl OovPredictorParams {
    /// `char_vocab_size` includes the unknown-character row.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        config: OovPredictorConfig,
        char_vocab_size: usize,
        rng: &mut R,
    ) -> Self {
        let c = &config;
        let width = 2 * c.hidden_dim;
        OovPredictorParams {
            config,
            char_embeddings: EmbeddingParams::new(store, "oov.char_emb", char_vocab_size, c.char_dim, rng),
            char_bilstm: BiLstmParams::new(store, "oov.char_lstm", c.char_dim, c.hidden_dim, rng),
            context_bilstm: BiLstmParams::new(store, "oov.ctx_lstm", c.word_dim, c.hidden_dim, rng),
            char_attention: AttentionParams::new(store, "oov.char_att", width, rng),
            context_attention: AttentionParams::new(store, "oov.ctx_att", width, rng),
            fuse1: LinearParams::new(store, "oov.fuse1", 2 * width, c.fuse_dim, rng),
            fuse2: LinearParams::new(store, "oov.fuse2", c.fuse_dim, c.word_dim, rng),
        }
    }

    pub fn param_ids(&self) -> Vec<crate::autodiff::ParamId> {
        let mut ids = vec![self.char_embeddings.table];
        for bi in [&self.char_bilstm, &self.context_bilstm] {
            for l in [&bi.fwd, &bi.bwd] {
                ids.extend([l.w, l.u, l.b]);
            }
        }
        for a in [&self.char_attention, &self.context_attention] {
            ids.extend([a.weight, a.bias]);
        }
        for l in [&self.fuse1, &self.fuse2] {
            ids.extend([l.weight, l.bias]);
        }
        ids
    }
}

/// Span of a context window inside a sentence: `start..end` includes the target.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowSpan {
    pub start: usize,
    pub end: usize,
    pub target: usize,
}

impl WindowSpan {
    pub fn oov_position(&self) -> usize {
        self.target - self.start
    }

    /// Number of context words, not counting the target.
    pub fn context_len(&self) -> usize {
        self.end - self.start - 1
    }
}

/// Chooses up to `max_context` words around `target` (the target itself is
/// not counted): half on each side, with a short side handing its unused
/// budget to the other.
pub fn window_span(sentence_len: usize, target: usize, max_context: usize) -> WindowSpan {
    assert!(target < sentence_len, "target {target} outside sentence of {sentence_len}");
    let left_avail = target;
    let right_avail = sentence_len - 1 - target;
    let half = max_context / 2;
    let mut left = left_avail.min(half);
    let mut right = right_avail.min(max_context - half);
    let spare = max_context - left - right;
    if left_avail > left {
        left += spare.min(left_avail - left);
    } else if right_avail > right {
        right += spare.min(right_avail - right);
    }
    WindowSpan {
        start: target - left,
        end: target + right + 1,
        target,
    }
}

/// Context embeddings for one target. The target slot is kept (as zeros) so
/// the BiLSTM can skip it by position.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextWindow {
    pub embeddings: Vec<Vec<f64>>,
    pub oov_position: usize,
}

impl ContextWindow {
    pub fn n(&self) -> usize {
        self.embeddings.len() - 1
    }

    pub fn span(&self) -> WindowSpan {
        WindowSpan {
            start: 0,
            end: self.embeddings.len(),
            target: self.oov_position,
        }
    }
}

/// Cuts the window for `target` out of an already-embedded sentence.
pub fn extract_context_window(
    sentence: &[Vec<f64>],
    target: usize,
    max_context: usize,
) -> Result<ContextWindow> {
    if target >= sentence.len() {
        return Err(Error::IndexOutOfRange {
            index: target,
            len: sentence.len(),
        });
    }
    let span = window_span(sentence.len(), target, max_context);
    let mut embeddings: Vec<Vec<f64>> = sentence[span.start..span.end].to_vec();
    let pos = span.oov_position();
    embeddings[pos].iter_mut().for_each(|v| *v = 0.0);
    Ok(ContextWindow {
        embeddings,
        oov_position: pos,
    })
}

/// Frozen random vectors for words with no table row, drawn once per surface
/// form. Each vector is a pure function of `(seed, form)`, so results do not
/// depend on the order in which forms are requested or on the thread.
#[derive(Debug)]
pub struct RandomEmbeddings {
    seed: u64,
    dim: usize,
    std: f64,
    cache: Mutex<HashMap<String, Arc<[f64]>>>,
}

impl Clone for RandomEmbeddings {
    fn clone(&self) -> Self {
        RandomEmbeddings::new(self.seed, self.dim, self.std)
    }
}

impl RandomEmbeddings {
    pub fn new(seed: u64, dim: usize, std: f64) -> Self {
        RandomEmbeddings {
            seed,
            dim,
            std: if std.is_finite() && std > 0.0 { std } else { 1.0 },
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn std(&self) -> f64 {
        self.std
    }

    pub fn get(&self, form: &str) -> Arc<[f64]> {
        let mut cache = self.cache.lock().expect("random embedding cache poisoned");
        if let Some(v) = cache.get(form) {
            return v.clone();
        }
        let v: Arc<[f64]> = self.draw(form).into();
        cache.insert(form.to_owned(), v.clone());
        v
    }

    fn draw(&self, form: &str) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(form.as_bytes()));
        let normal = Normal::new(0.0, self.std).expect("finite std");
        (0..self.dim).map(|_| normal.sample(&mut rng)).collect()
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Where a context word's embedding comes from.
#[derive(Clone, Copy, Debug)]
pub enum ContextSource<'a> {
    Table(&'a [f64]),
    Oov(&'a str),
}

/// Maps window tokens to embeddings: table rows for known words, cached
/// random vectors for other OOV words.
pub fn resolve_context_embeddings(
    tokens: &[ContextSource<'_>],
    random: &RandomEmbeddings,
) -> Vec<Vec<f64>> {
    tokens
        .iter()
        .map(|t| match t {
            ContextSource::Table(row) => row.to_vec(),
            ContextSource::Oov(form) => random.get(form).to_vec(),
        })
        .collect()
}

/// Output of [`predict_embedding`]. Context attention is absent when the
/// window holds no words besides the target.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub embedding: Var,
    pub char_alphas: Var,
    pub char_scores: Var,
    pub context_alphas: Option<Var>,
    pub context_scores: Option<Var>,
}

pub fn predict_embedding<'p>(
    tape: &mut Tape<'p>,
    store: &'p ParamStore,
    params: &OovPredictorParams,
    window: &ContextWindow,
    chars: &[usize],
) -> Result<Prediction> {
    if chars.is_empty() {
        return Err(Error::EmptyCharacters);
    }
    let width = params.context_bilstm.output_dim();

    let (context, context_alphas, context_scores) = if window.n() == 0 {
        (tape.constant_vector(vec![0.0; width])?, None, None)
    } else {
        let inputs = window
            .embeddings
            .iter()
            .enumerate()
            .map(|(i, e)| {
                if i == window.oov_position {
                    // skipped below; never enters the graph
                    tape.constant_vector(vec![0.0; e.len()])
                } else {
                    tape.constant_vector(e.clone())
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let hidden = bilstm_encode(
            tape,
            store,
            &params.context_bilstm,
            &inputs,
            Some(window.oov_position),
        )?;
        let pooled = attention_pool(tape, store, &params.context_attention, &hidden)?;
        (pooled.context, Some(pooled.alphas), Some(pooled.scores))
    };

    let char_inputs = chars
        .iter()
        .map(|&c| params.char_embeddings.lookup(tape, store, c))
        .collect::<Result<Vec<_>>>()?;
    let char_hidden = bilstm_encode(tape, store, &params.char_bilstm, &char_inputs, None)?;
    let char_pooled = attention_pool(tape, store, &params.char_attention, &char_hidden)?;

    let fused = tape.concat(&[char_pooled.context, context])?;
    let z = linear_forward(tape, store, &params.fuse1, fused)?;
    let z = tape.tanh(z)?;
    let embedding = linear_forward(tape, store, &params.fuse2, z)?;

    Ok(Prediction {
        embedding,
        char_alphas: char_pooled.alphas,
        char_scores: char_pooled.scores,
        context_alphas,
        context_scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent reference: grow the window one word at a time, always
    /// taking from the side that currently has fewer words when possible.
    fn greedy_window(len: usize, target: usize, max: usize) -> (usize, usize) {
        let (mut left, mut right) = (0usize, 0usize);
        while left + right < max {
            let can_l = target > left;
            let can_r = target + right + 1 < len;
            match (can_l, can_r) {
                (false, false) => break,
                (true, false) => left += 1,
                (false, true) => right += 1,
                (true, true) => {
                    if left <= right {
                        left += 1
                    } else {
                        right += 1
                    }
                }
            }
        }
        (left, right)
    }

    #[test]
    fn window_examples() {
        let w = window_span(100, 50, 40);
        assert_eq!((w.start, w.end), (30, 71));
        assert_eq!(w.context_len(), 40);

        let w = window_span(1, 0, 40);
        assert_eq!(w.context_len(), 0);
        assert_eq!(w.oov_position(), 0);

        let w = window_span(60, 2, 40);
        assert_eq!((w.target - w.start, w.end - w.target - 1), (2, 38));
    }

    #[test]
    fn window_matches_greedy_reference_exhaustively() {
        for len in 1..=60 {
            for target in 0..len {
                let w = window_span(len, target, MAX_CONTEXT);
                let (l, r) = greedy_window(len, target, MAX_CONTEXT);
                assert_eq!(
                    (w.target - w.start, w.end - w.target - 1),
                    (l, r),
                    "len {len} target {target}"
                );
                assert!(w.context_len() <= MAX_CONTEXT);
                assert_eq!(w.context_len(), (len - 1).min(MAX_CONTEXT));
            }
        }
    }

    #[test]
    fn random_embeddings_are_stable_per_form() {
        let r = RandomEmbeddings::new(7, 64, 0.5);
        let a = r.get("enron");
        let b = r.get("enron");
        assert_eq!(a, b);
        assert_ne!(r.get("enron"), r.get("enrom"));
        let fresh = RandomEmbeddings::new(7, 64, 0.5);
        assert_eq!(fresh.get("enron"), a);
        assert_ne!(RandomEmbeddings::new(8, 64, 0.5).get("enron"), a);
    }

    #[test]
    fn random_embedding_statistics_match_target_std() {
        let std = 0.37;
        let r = RandomEmbeddings::new(1, 64, std);
        let n = 10_000;
        let mut sum = vec![0.0; 64];
        let mut sq = vec![0.0; 64];
        for i in 0..n {
            let v = r.draw(&format!("w{i}"));
            for k in 0..64 {
                sum[k] += v[k];
                sq[k] += v[k] * v[k];
            }
        }
        for k in 0..64 {
            let mean = sum[k] / n as f64;
            let sd = (sq[k] / n as f64 - mean * mean).sqrt();
            assert!(mean.abs() < 4.0 * std / (n as f64).sqrt(), "coord {k} mean {mean}");
            assert!((sd / std - 1.0).abs() < 0.05, "coord {k} std {sd}");
        }
    }

    #[test]
    fn resolve_uses_table_rows_and_cache() {
        let r = RandomEmbeddings::new(3, 2, 1.0);
        let row = [0.25, -0.5];
        let out = resolve_context_embeddings(
            &[
                ContextSource::Table(&row),
                ContextSource::Oov("zyx"),
                ContextSource::Oov("zyx"),
            ],
            &r,
        );
        assert_eq!(out[0], row);
        assert_eq!(out[1], out[2]);
    }

    #[test]
    fn extract_marks_target_and_clears_slot() {
        let sent: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64; 2]).collect();
        let w = extract_context_window(&sent, 3, 2).unwrap();
        assert_eq!(w.oov_position, 1);
        assert_eq!(w.embeddings, vec![vec![2.0; 2], vec![0.0; 2], vec![4.0; 2]]);
        assert!(extract_context_window(&sent, 5, 2).is_err());
    }
}
