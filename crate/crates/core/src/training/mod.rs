//! End-to-end training: word dropout, Adam, mini-batches, early stopping.

pub mod adam;
pub mod checkpoint;
pub mod dropout;
pub mod init;

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::{build_schemas, encode_corpus, Corpus, EmbeddingTable, Normalization, TaggedSentence};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::oov_predictor::RandomEmbeddings;
use crate::tagger::{compute_loss, forward_sentence, EmbedEnv, Model, ModelConfig, OovStrategy};

pub use adam::{adam_step, clip_grad_norm, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use dropout::{dropout_count, sample_word_dropout};
pub use init::kaiming_init;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Share of the droppable vocabulary routed through the predictor in
    /// each batch.
    pub dropout_fraction: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    /// Epochs without dev improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Global gradient norm cap; 0 disables clipping.
    pub clip_norm: f64,
    pub normalization: Normalization,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            batch_size: 32,
            dropout_fraction: 0.15,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            epochs: 30,
            patience: 5,
            seed: 0,
            clip_norm: 5.0,
            normalization: Normalization::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    // `!(x > 0.0)` also rejects NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_fraction) {
            return bad(format!("dropout_fraction must be in [0, 1), got {}", self.dropout_fraction));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must be in [0, 1), got {b}"));
            }
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.clip_norm >= 0.0) {
            return bad(format!("clip_norm must be non-negative, got {}", self.clip_norm));
        }
        if self.model.predictor.word_dim != self.model.tagger.word_dim {
            return bad("predictor and tagger word_dim differ".into());
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is plain data")
    }
}

/// Random vectors for OOV words, tied to the training seed so evaluation
/// sees the same ones.
pub fn random_embeddings(config: &TrainConfig, table: &EmbeddingTable) -> RandomEmbeddings {
    RandomEmbeddings::new(config.seed, table.dim(), table.std())
}

/// Training-corpus forms that have a table row; the pool word dropout draws
/// from. Sorted, so sampling depends only on the data.
pub fn droppable_vocabulary(sentences: &[TaggedSentence]) -> Vec<String> {
    sentences
        .iter()
        .flat_map(|s| &s.tokens)
        .filter(|t| t.table_row.is_some())
        .map(|t| t.form.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(str::to_string)
        .collect()
}

pub fn training_vocabulary(sentences: &[TaggedSentence]) -> Vec<String> {
    sentences
        .iter()
        .flat_map(|s| s.forms())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(str::to_string)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-sentence loss over the epoch.
    pub train_loss: f64,
    pub dev_pos_accuracy: Option<f64>,
    pub dev_morph_f1: Option<f64>,
    /// Model selection score: mean of the dev metrics, or the negated
    /// training loss without a dev set.
    pub score: f64,
    pub dropped_tokens: usize,
    pub clipped_batches: usize,
    pub best: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the best-scoring epoch.
    pub model: Model,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub train_vocab: Vec<String>,
}

impl TrainOutcome {
    pub fn checkpoint(self, config: &TrainConfig) -> Checkpoint {
        Checkpoint {
            config: config.clone(),
            schema: self.model.schema.clone(),
            store: self.model.store,
            train_vocab: self.train_vocab,
        }
    }
}

fn dev_score(pos: Option<f64>, morph: Option<f64>) -> Option<f64> {
    let xs: Vec<f64> = [pos, morph].into_iter().flatten().collect();
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn diverged(epoch: usize, batch: usize, loss: f64) -> Error {
    log::error!("loss diverged at epoch {epoch}, batch {batch}: {loss}");
    Error::DivergedLoss { epoch, batch, loss }
}

/// Trains `model` in place of a fresh copy and returns the best epoch's
/// parameters. `table` is frozen throughout.
pub fn train(
    mut model: Model,
    train: &[TaggedSentence],
    dev: Option<&[TaggedSentence]>,
    table: &EmbeddingTable,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.iter().all(|s| s.is_empty()) {
        return Err(Error::EmptyCorpus);
    }
    let random = random_embeddings(config, table);
    let env = EmbedEnv {
        table,
        random: &random,
    };
    let train_vocab = training_vocabulary(train);
    let vocab_set: HashSet<String> = train_vocab.iter().cloned().collect();
    let droppable = droppable_vocabulary(train);
    let adam = config.adam();
    let mut state = AdamState::new(&model.store);
    // separate streams for shuffling and dropout keep either one from
    // shifting the other
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(config.seed);
    drop_rng.set_stream(2);

    let mut order: Vec<usize> = (0..train.len()).filter(|&i| !train[i].is_empty()).collect();
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, crate::autodiff::ParamStore)> = None;
    let mut since_best = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut dropped_tokens = 0;
        let mut clipped = 0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let dropped = sample_word_dropout(&droppable, config.dropout_fraction, &mut drop_rng);
            model.store.zero_grad();
            for &si in batch {
                let s = &train[si];
                let oov: Vec<bool> = s
                    .tokens
                    .iter()
                    .map(|t| t.is_oov || dropped.contains(t.form.as_str()))
                    .collect();
                dropped_tokens += s.tokens.iter().filter(|t| !t.is_oov && dropped.contains(t.form.as_str())).count();
                let (value, grads) = {
                    let mut tape = Tape::new();
                    let step = forward_sentence(&mut tape, &model, s, &oov, env, OovStrategy::Predictor)
                        .and_then(|f| compute_loss(&mut tape, &f.logits, s));
                    let loss = match step {
                        Ok(l) => l,
                        Err(Error::NonFinite { .. }) => return Err(diverged(epoch, b, f64::NAN)),
                        Err(e) => return Err(e),
                    };
                    (tape.scalar(loss), tape.backward(loss)?)
                };
                if !value.is_finite() {
                    return Err(diverged(epoch, b, value));
                }
                loss_sum += value;
                grads.accumulate_into(&mut model.store);
            }
            let inv = 1.0 / batch.len() as f64;
            for id in model.store.ids().collect::<Vec<_>>() {
                if model.store.get(id).grad().is_some() {
                    model.store.get_mut(id).grad_mut().iter_mut().for_each(|g| *g *= inv);
                }
            }
            if config.clip_norm > 0.0 {
                let norm = clip_grad_norm(&mut model.store, config.clip_norm);
                if norm > config.clip_norm {
                    clipped += 1;
                    log::debug!("epoch {epoch} batch {b}: clipped gradient norm {norm:.3}");
                }
            }
            adam_step(&mut model.store, &mut state, &adam).map_err(|e| match e {
                Error::NonFinite { .. } => diverged(epoch, b, f64::NAN),
                e => e,
            })?;
        }
        model.store.zero_grad();

        let train_loss = loss_sum / order.len() as f64;
        let (dev_pos, dev_morph) = match dev {
            Some(d) if !d.is_empty() => {
                let r = evaluate(&model, d, env, &vocab_set, OovStrategy::Predictor)?;
                (r.pos_accuracy_all, r.morph_micro_f1_all)
            }
            _ => (None, None),
        };
        let score = dev_score(dev_pos, dev_morph).unwrap_or(-train_loss);
        let improved = best.as_ref().is_none_or(|(s, _, _)| score > *s);
        if improved {
            best = Some((score, epoch, model.store.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        log::info!(
            "epoch {epoch}: loss {train_loss:.4} dev pos {} morph {} (dropped {dropped_tokens} tokens, clipped {clipped} batches)",
            dev_pos.map_or("n/a".into(), |v| format!("{v:.4}")),
            dev_morph.map_or("n/a".into(), |v| format!("{v:.4}")),
        );
        log.push(EpochLog {
            epoch,
            train_loss,
            dev_pos_accuracy: dev_pos,
            dev_morph_f1: dev_morph,
            score,
            dropped_tokens,
            clipped_batches: clipped,
            best: improved,
        });
        if since_best >= config.patience && config.patience > 0 {
            log::info!("no dev improvement for {since_best} epochs; stopping");
            break;
        }
    }

    let best_epoch = match best {
        Some((_, epoch, store)) => {
            model.store = store;
            epoch
        }
        None => 0,
    };
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        train_vocab,
    })
}

/// Everything `train` needs, prepared from raw corpora.
pub struct Prepared {
    pub model: Model,
    pub train: Vec<TaggedSentence>,
    pub dev: Option<Vec<TaggedSentence>>,
}

/// Builds the schema from `train`, encodes both corpora and initialises a
/// model from `config.seed`.
pub fn prepare(train: &Corpus, dev: Option<&Corpus>, table: &EmbeddingTable, config: &TrainConfig) -> Result<Prepared> {
    config.validate()?;
    if table.dim() != config.model.tagger.word_dim {
        return Err(Error::Config(format!(
            "embedding table has dimension {}, config expects {}",
            table.dim(),
            config.model.tagger.word_dim
        )));
    }
    let schema = build_schemas(train)?;
    let (train_enc, stats) = encode_corpus(train, &schema, table, config.normalization);
    log::info!(
        "training corpus: {} sentences, {} tokens, {:.1}% OOV",
        train.sentences.len(),
        stats.tokens,
        100.0 * stats.token_rate()
    );
    let dev_enc = dev.map(|d| encode_corpus(d, &schema, table, config.normalization).0);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model = Model::new(config.model, schema, &mut rng)?;
    Ok(Prepared {
        model,
        train: train_enc,
        dev: dev_enc,
    })
}

/// `prepare` followed by `train`.
pub fn train_corpus(
    train_set: &Corpus,
    dev: Option<&Corpus>,
    table: &EmbeddingTable,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let p = prepare(train_set, dev, table, config)?;
    train(p.model, &p.train, p.dev.as_deref(), table, config)
}
