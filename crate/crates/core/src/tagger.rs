//! Word-level BiLSTM tagger with an OOV handling layer in front of it.
//!
//! In-vocabulary words enter with their table rows unchanged. Words routed as
//! OOV get their input vector from the selected [`OovStrategy`]. Each hidden
//! state feeds a POS head and one head per morphological category; category
//! heads have an extra class 0 meaning "attribute absent".

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::data::{EmbeddingTable, Schema, TaggedSentence};
use crate::error::{Error, Result};
use crate::layers::{bilstm_encode, linear_forward, BiLstmParams, LinearParams};
use crate::oov_predictor::{
    predict_embedding, window_span, ContextSource, ContextWindow, OovPredictorConfig,
    OovPredictorParams, Prediction, RandomEmbeddings,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    Joint,
    Pos,
    Morph,
}

impl Task {
    pub fn has_pos(self) -> bool {
        matches!(self, Task::Joint | Task::Pos)
    }

    pub fn has_morph(self) -> bool {
        matches!(self, Task::Joint | Task::Morph)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaggerConfig {
    pub word_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub task: Task,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        TaggerConfig {
            word_dim: 64,
            hidden_dim: 128,
            layers: 1,
            task: Task::Joint,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggerParams {
    pub config: TaggerConfig,
    pub word_bilstm: Vec<BiLstmParams>,
    pub pos_head: Option<LinearParams>,
    pub morph_heads: Vec<LinearParams>,
    /// Shared vector for the `unk` strategy.
    pub unk_embedding: ParamId,
}

impl TaggerParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        config: TaggerConfig,
        schema: &Schema,
        rng: &mut R,
    ) -> Self {
        let mut word_bilstm = Vec::new();
        let mut input = config.word_dim;
        for layer in 0..config.layers.max(1) {
            word_bilstm.push(BiLstmParams::new(
                store,
                &format!("tagger.lstm{layer}"),
                input,
                config.hidden_dim,
                rng,
            ));
            input = 2 * config.hidden_dim;
        }
        let pos_head = config
            .task
            .has_pos()
            .then(|| LinearParams::new(store, "tagger.pos", input, schema.pos_tags.len(), rng));
        let morph_heads = if config.task.has_morph() {
            schema
                .morph
                .iter()
                .map(|c| {
                    LinearParams::new(store, &format!("tagger.morph.{}", c.name), input, c.values.len() + 1, rng)
                })
                .collect()
        } else {
            Vec::new()
        };
        let unk_embedding = store.add("tagger.unk", Tensor::zeros(vec![config.word_dim]));
        TaggerParams {
            config,
            word_bilstm,
            pos_head,
            morph_heads,
            unk_embedding,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default)]
    pub predictor: OovPredictorConfig,
    #[serde(default)]
    pub tagger: TaggerConfig,
}

/// The predictor and the tagger with their shared parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub schema: Schema,
    pub store: ParamStore,
    pub predictor: OovPredictorParams,
    pub tagger: TaggerParams,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, schema: Schema, rng: &mut R) -> Result<Self> {
        if config.predictor.word_dim != config.tagger.word_dim {
            return Err(Error::Config(format!(
                "predictor emits {}-dim vectors but the tagger expects {}",
                config.predictor.word_dim, config.tagger.word_dim
            )));
        }
        let mut store = ParamStore::new();
        let predictor = OovPredictorParams::new(&mut store, config.predictor, schema.chars.size(), rng);
        let tagger = TaggerParams::new(&mut store, config.tagger, &schema, rng);
        Ok(Model {
            config,
            schema,
            store,
            predictor,
            tagger,
        })
    }

    pub fn word_dim(&self) -> usize {
        self.config.tagger.word_dim
    }
}

/// How OOV positions are embedded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OovStrategy {
    /// Frozen random vector per surface form.
    Random,
    /// The contextual-compositional predictor.
    Predictor,
    /// One shared trainable vector.
    UnkToken,
}

impl OovStrategy {
    pub const ALL: [OovStrategy; 3] = [OovStrategy::Predictor, OovStrategy::Random, OovStrategy::UnkToken];

    pub fn name(self) -> &'static str {
        match self {
            OovStrategy::Random => "random",
            OovStrategy::Predictor => "predictor",
            OovStrategy::UnkToken => "unk_token",
        }
    }
}

impl fmt::Display for OovStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OovStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" | "rand" => Ok(OovStrategy::Random),
            "predictor" | "ours" => Ok(OovStrategy::Predictor),
            "unk" | "unk_token" => Ok(OovStrategy::UnkToken),
            other => Err(Error::Config(format!("unknown OOV strategy {other:?}"))),
        }
    }
}

/// Read-only inputs shared by every sentence.
#[derive(Clone, Copy, Debug)]
pub struct EmbedEnv<'a> {
    pub table: &'a EmbeddingTable,
    pub random: &'a RandomEmbeddings,
}

/// Tagger inputs for one sentence plus the predictor outputs for every
/// position that went through the predictor.
#[derive(Clone, Debug)]
pub struct Embedded {
    pub inputs: Vec<Var>,
    pub predictions: Vec<(usize, Prediction)>,
}

/// Default routing: tokens without a table row.
pub fn natural_oov_mask(sentence: &TaggedSentence) -> Vec<bool> {
    sentence.tokens.iter().map(|t| t.is_oov).collect()
}

/// The predictor's window for `target` with `oov` deciding which context
/// words get a random vector instead of their table row.
pub fn context_window_for(
    sentence: &TaggedSentence,
    oov: &[bool],
    target: usize,
    env: EmbedEnv<'_>,
    max_context: usize,
) -> Result<ContextWindow> {
    let span = window_span(sentence.len(), target, max_context);
    let dim = env.table.dim();
    let placeholder = vec![0.0; dim];
    let mut embeddings = Vec::with_capacity(span.end - span.start);
    for j in span.start..span.end {
        let source = if j == target {
            ContextSource::Table(&placeholder)
        } else {
            match (oov[j], sentence.tokens[j].table_row) {
                (false, Some(row)) => ContextSource::Table(env.table.row(row)),
                _ => ContextSource::Oov(&sentence.tokens[j].form),
            }
        };
        embeddings.push(match source {
            ContextSource::Table(r) => r.to_vec(),
            ContextSource::Oov(form) => env.random.get(form).to_vec(),
        });
    }
    Ok(ContextWindow {
        embeddings,
        oov_position: span.oov_position(),
    })
}

/// Builds the tagger inputs. Positions with `oov[i] == false` must have a
/// table row and enter unchanged; the rest follow `strategy`.
pub fn embed_sentence<'p>(
    tape: &mut Tape<'p>,
    model: &'p Model,
    sentence: &TaggedSentence,
    oov: &[bool],
    env: EmbedEnv<'_>,
    strategy: OovStrategy,
) -> Result<Embedded> {
    embed_sentence_with(tape, &model.store, model, sentence, oov, env, strategy)
}

/// [`embed_sentence`] reading parameter values from `store` instead of
/// `model.store`; `model` only supplies the parameter layout.
pub fn embed_sentence_with<'p>(
    tape: &mut Tape<'p>,
    store: &'p ParamStore,
    model: &Model,
    sentence: &TaggedSentence,
    oov: &[bool],
    env: EmbedEnv<'_>,
    strategy: OovStrategy,
) -> Result<Embedded> {
    if sentence.is_empty() {
        return Err(Error::EmptySentence);
    }
    if oov.len() != sentence.len() {
        return Err(Error::Alignment(format!(
            "{} OOV flags for {} tokens",
            oov.len(),
            sentence.len()
        )));
    }
    if env.table.dim() != model.word_dim() {
        return Err(Error::Config(format!(
            "embedding table has dimension {}, model expects {}",
            env.table.dim(),
            model.word_dim()
        )));
    }
    let mut inputs = Vec::with_capacity(sentence.len());
    let mut predictions = Vec::new();
    for (i, tok) in sentence.tokens.iter().enumerate() {
        let v = match (oov[i], tok.table_row) {
            (false, Some(row)) => tape.constant_vector(env.table.row(row).to_vec())?,
            (false, None) => {
                return Err(Error::Alignment(format!(
                    "token {:?} is routed in-vocabulary but has no table row",
                    tok.form
                )))
            }
            (true, _) => match strategy {
                OovStrategy::Random => tape.constant_vector(env.random.get(&tok.form).to_vec())?,
                OovStrategy::UnkToken => tape.param(store, model.tagger.unk_embedding)?,
                OovStrategy::Predictor => {
                    let window =
                        context_window_for(sentence, oov, i, env, model.predictor.config.max_context)?;
                    let p = predict_embedding(tape, store, &model.predictor, &window, &tok.chars)?;
                    let v = p.embedding;
                    predictions.push((i, p));
                    v
                }
            },
        };
        inputs.push(v);
    }
    Ok(Embedded { inputs, predictions })
}

#[derive(Clone, Debug)]
pub struct TokenLogits {
    pub pos: Option<Var>,
    pub morph: Vec<Var>,
}

pub fn tag_forward<'p>(
    tape: &mut Tape<'p>,
    store: &'p ParamStore,
    params: &TaggerParams,
    embedded: &[Var],
) -> Result<Vec<TokenLogits>> {
    if embedded.is_empty() {
        return Err(Error::EmptySentence);
    }
    let mut hidden = embedded.to_vec();
    for layer in &params.word_bilstm {
        hidden = bilstm_encode(tape, store, layer, &hidden, None)?;
    }
    hidden
        .iter()
        .map(|&h| {
            let pos = params
                .pos_head
                .as_ref()
                .map(|head| linear_forward(tape, store, head, h))
                .transpose()?;
            let morph = params
                .morph_heads
                .iter()
                .map(|head| linear_forward(tape, store, head, h))
                .collect::<Result<Vec<_>>>()?;
            Ok(TokenLogits { pos, morph })
        })
        .collect()
}

/// Mean over tokens of POS cross-entropy plus the mean cross-entropy over
/// morph categories.
pub fn compute_loss(tape: &mut Tape<'_>, outputs: &[TokenLogits], gold: &TaggedSentence) -> Result<Var> {
    if outputs.len() != gold.len() || outputs.is_empty() {
        return Err(Error::Alignment(format!(
            "{} outputs for {} gold tokens",
            outputs.len(),
            gold.len()
        )));
    }
    let mut total: Option<Var> = None;
    for (out, tok) in outputs.iter().zip(&gold.tokens) {
        let mut terms = Vec::new();
        if let (Some(logits), Some(pos)) = (out.pos, tok.pos) {
            terms.push(tape.cross_entropy(logits, pos)?);
        }
        if !out.morph.is_empty() {
            let classes = tok.morph_classes(out.morph.len());
            let mut sum = None;
            for (&logits, &class) in out.morph.iter().zip(&classes) {
                let ce = tape.cross_entropy(logits, class)?;
                sum = Some(match sum {
                    None => ce,
                    Some(s) => tape.add(s, ce)?,
                });
            }
            let mean = tape.scale(sum.expect("non-empty"), 1.0 / out.morph.len() as f64)?;
            terms.push(mean);
        }
        for t in terms {
            total = Some(match total {
                None => t,
                Some(s) => tape.add(s, t)?,
            });
        }
    }
    let total = match total {
        Some(t) => t,
        None => tape.constant_vector(vec![0.0])?,
    };
    tape.scale(total, 1.0 / outputs.len() as f64)
}

/// Decoded tags for one token, as schema ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PredictedTags {
    pub pos: Option<usize>,
    pub morph: Vec<(usize, usize)>,
}

impl PredictedTags {
    pub fn pos_tag<'s>(&self, schema: &'s Schema) -> Option<&'s str> {
        self.pos.map(|p| schema.pos_tags[p].as_str())
    }

    pub fn feats(&self, schema: &Schema) -> Vec<(String, String)> {
        self.morph
            .iter()
            .map(|&(c, v)| {
                let cat = &schema.morph[c];
                (cat.name.clone(), cat.values[v].clone())
            })
            .collect()
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn decode(tape: &Tape<'_>, outputs: &[TokenLogits]) -> Vec<PredictedTags> {
    outputs
        .iter()
        .map(|o| PredictedTags {
            pos: o.pos.map(|v| argmax(tape.value(v))),
            morph: o
                .morph
                .iter()
                .enumerate()
                .filter_map(|(c, &v)| {
                    let k = argmax(tape.value(v));
                    (k > 0).then(|| (c, k - 1))
                })
                .collect(),
        })
        .collect()
}

/// Everything produced by one forward pass over a sentence.
#[derive(Clone, Debug)]
pub struct SentenceForward {
    pub embedded: Embedded,
    pub logits: Vec<TokenLogits>,
}

pub fn forward_sentence<'p>(
    tape: &mut Tape<'p>,
    model: &'p Model,
    sentence: &TaggedSentence,
    oov: &[bool],
    env: EmbedEnv<'_>,
    strategy: OovStrategy,
) -> Result<SentenceForward> {
    let embedded = embed_sentence(tape, model, sentence, oov, env, strategy)?;
    let logits = tag_forward(tape, &model.store, &model.tagger, &embedded.inputs)?;
    Ok(SentenceForward { embedded, logits })
}
