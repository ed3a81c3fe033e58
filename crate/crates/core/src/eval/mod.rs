//! Tagging metrics, OOV-split reports and strategy comparisons.

pub mod attention;

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::TaggedSentence;
use crate::error::{Error, Result};
use crate::tagger::{decode, forward_sentence, natural_oov_mask, EmbedEnv, Model, OovStrategy, PredictedTags};

pub use attention::{export_attention, AttentionRecord};

fn check_aligned(what: &str, a: usize, b: usize, mask: usize) -> Result<()> {
    if a != b || a != mask {
        return Err(Error::Alignment(format!(
            "{what}: {a} predictions, {b} gold labels, {mask} mask entries"
        )));
    }
    Ok(())
}

/// Fraction of masked tokens whose tag matches. `None` when the mask selects
/// nothing.
pub fn pos_accuracy<S: AsRef<str>, T: AsRef<str>>(pred: &[S], gold: &[T], mask: &[bool]) -> Result<Option<f64>> {
    check_aligned("pos_accuracy", pred.len(), gold.len(), mask.len())?;
    let mut total = 0usize;
    let mut correct = 0usize;
    for ((p, g), &m) in pred.iter().zip(gold).zip(mask) {
        if m {
            total += 1;
            correct += usize::from(p.as_ref() == g.as_ref());
        }
    }
    Ok((total > 0).then(|| correct as f64 / total as f64))
}

/// Pooled true-positive, false-positive and false-negative pair counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl PairCounts {
    pub fn add(&mut self, pred: &[(String, String)], gold: &[(String, String)]) {
        let p: BTreeSet<_> = pred.iter().collect();
        let g: BTreeSet<_> = gold.iter().collect();
        let tp = p.intersection(&g).count();
        self.tp += tp;
        self.fp += p.len() - tp;
        self.fn_ += g.len() - tp;
    }

    /// Micro F1. With no pairs on either side prediction and gold agree, so
    /// the score is 1.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

pub type Feats = Vec<(String, String)>;

pub fn morph_pair_counts(pred: &[Feats], gold: &[Feats], mask: &[bool]) -> Result<PairCounts> {
    check_aligned("morph_micro_f1", pred.len(), gold.len(), mask.len())?;
    let mut counts = PairCounts::default();
    for ((p, g), &m) in pred.iter().zip(gold).zip(mask) {
        if m {
            counts.add(p, g);
        }
    }
    Ok(counts)
}

/// Micro-averaged F1 over `(category, value)` pairs of the masked tokens.
/// `None` when the mask selects nothing.
pub fn morph_micro_f1(pred: &[Feats], gold: &[Feats], mask: &[bool]) -> Result<Option<f64>> {
    let counts = morph_pair_counts(pred, gold, mask)?;
    Ok(mask.iter().any(|&m| m).then(|| counts.f1()))
}

/// Scores for all words and for the OOV split. A metric is `None` when the
/// model has no head for it or the split is empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub strategy: OovStrategy,
    pub pos_accuracy_all: Option<f64>,
    pub pos_accuracy_oov: Option<f64>,
    pub morph_micro_f1_all: Option<f64>,
    pub morph_micro_f1_oov: Option<f64>,
    pub tokens_all: usize,
    pub tokens_oov: usize,
}

/// Model output for every token of a corpus, flattened.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Tagged {
    pub pos: Vec<String>,
    pub feats: Vec<Feats>,
}

/// Tags one sentence, routing the positions flagged in `oov` through `strategy`.
pub fn tag_sentence(
    model: &Model,
    sentence: &TaggedSentence,
    oov: &[bool],
    env: EmbedEnv<'_>,
    strategy: OovStrategy,
) -> Result<Vec<PredictedTags>> {
    let mut tape = Tape::new();
    let out = forward_sentence(&mut tape, model, sentence, oov, env, strategy)?;
    Ok(decode(&tape, &out.logits))
}

pub fn tag_corpus(
    model: &Model,
    sentences: &[TaggedSentence],
    env: EmbedEnv<'_>,
    strategy: OovStrategy,
) -> Result<Tagged> {
    let mut tagged = Tagged::default();
    for s in sentences {
        for t in tag_sentence(model, s, &natural_oov_mask(s), env, strategy)? {
            tagged.pos.push(t.pos_tag(&model.schema).unwrap_or("_").to_string());
            tagged.feats.push(t.feats(&model.schema));
        }
    }
    Ok(tagged)
}

/// Evaluation split: tokens missing from the embedding table that were also
/// never seen in training.
pub fn oov_split_mask(sentences: &[TaggedSentence], train_vocab: &HashSet<String>) -> Vec<bool> {
    sentences
        .iter()
        .flat_map(|s| &s.tokens)
        .map(|t| t.table_row.is_none() && !train_vocab.contains(&t.form))
        .collect()
}

pub fn report_from_tags(
    model: &Model,
    strategy: OovStrategy,
    sentences: &[TaggedSentence],
    tagged: &Tagged,
    oov_mask: &[bool],
) -> Result<EvalReport> {
    let gold_pos: Vec<&str> = sentences.iter().flat_map(|s| &s.tokens).map(|t| t.gold_pos.as_str()).collect();
    let gold_feats: Vec<Feats> = sentences
        .iter()
        .flat_map(|s| &s.tokens)
        .map(|t| t.gold_feats.clone())
        .collect();
    let all = vec![true; gold_pos.len()];
    let task = model.config.tagger.task;
    let pos = |mask: &[bool]| -> Result<Option<f64>> {
        if task.has_pos() {
            pos_accuracy(&tagged.pos, &gold_pos, mask)
        } else {
            Ok(None)
        }
    };
    let morph = |mask: &[bool]| -> Result<Option<f64>> {
        if task.has_morph() {
            morph_micro_f1(&tagged.feats, &gold_feats, mask)
        } else {
            Ok(None)
        }
    };
    Ok(EvalReport {
        strategy,
        pos_accuracy_all: pos(&all)?,
        pos_accuracy_oov: pos(oov_mask)?,
        morph_micro_f1_all: morph(&all)?,
        morph_micro_f1_oov: morph(oov_mask)?,
        tokens_all: all.len(),
        tokens_oov: oov_mask.iter().filter(|&&m| m).count(),
    })
}

pub fn evaluate(
    model: &Model,
    sentences: &[TaggedSentence],
    env: EmbedEnv<'_>,
    train_vocab: &HashSet<String>,
    strategy: OovStrategy,
) -> Result<EvalReport> {
    let tagged = tag_corpus(model, sentences, env, strategy)?;
    let mask = oov_split_mask(sentences, train_vocab);
    report_from_tags(model, strategy, sentences, &tagged, &mask)
}

/// The same trained model scored under several OOV strategies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub reports: Vec<EvalReport>,
}

pub fn compare_strategies(
    model: &Model,
    sentences: &[TaggedSentence],
    env: EmbedEnv<'_>,
    train_vocab: &HashSet<String>,
    strategies: &[OovStrategy],
) -> Result<Comparison> {
    let reports = strategies
        .iter()
        .map(|&s| evaluate(model, sentences, env, train_vocab, s))
        .collect::<Result<_>>()?;
    Ok(Comparison { reports })
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{:.2}", 100.0 * v))
}

impl Comparison {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Aligned plain-text table, scores in percent.
    pub fn to_text(&self) -> String {
        let header = ["strategy", "POS all", "POS OOV", "MORPH all", "MORPH OOV", "tokens", "OOV tokens"];
        let rows: Vec<[String; 7]> = self
            .reports
            .iter()
            .map(|r| {
                [
                    r.strategy.to_string(),
                    pct(r.pos_accuracy_all),
                    pct(r.pos_accuracy_oov),
                    pct(r.morph_micro_f1_all),
                    pct(r.morph_micro_f1_oov),
                    r.tokens_all.to_string(),
                    r.tokens_oov.to_string(),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let mut out = String::new();
        let mut line = |cells: &[&str]| {
            let parts: Vec<String> = cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&header);
        for row in &rows {
            line(&row.each_ref().map(String::as_str));
        }
        out
    }
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        Comparison {
            reports: vec![self.clone()],
        }
        .to_text()
    }
}
