//! Attention weights of the predictor, exported as JSON and a static HTML
//! heatmap. A display temperature sharpens or flattens the weights shown;
//! the model's own weights are recorded unchanged next to them.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax, Tape};
use crate::data::TaggedSentence;
use crate::data::conllu::format_feats;
use crate::error::{Error, Result};
use crate::oov_predictor::window_span;
use crate::tagger::{decode, forward_sentence, EmbedEnv, Model, OovStrategy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub sentence: Vec<String>,
    pub oov_index: usize,
    pub chars: Vec<String>,
    pub char_scores: Vec<f64>,
    pub char_alphas: Vec<f64>,
    pub char_display: Vec<f64>,
    /// Sentence positions of the context words, in window order.
    pub context_positions: Vec<usize>,
    pub context_scores: Option<Vec<f64>>,
    pub context_alphas: Option<Vec<f64>>,
    pub context_display: Option<Vec<f64>>,
    pub predicted_pos: Option<String>,
    pub gold_pos: String,
    pub predicted_feats: String,
    pub gold_feats: String,
    pub temperature: f64,
}

/// `softmax(scores / temperature)`.
pub fn tempered_alphas(scores: &[f64], temperature: f64) -> Vec<f64> {
    if temperature == 1.0 {
        return softmax(scores);
    }
    let scaled: Vec<f64> = scores.iter().map(|s| s / temperature).collect();
    softmax(&scaled)
}

/// One record per position flagged in `targets[i]` (the natural OOV tokens
/// when `targets` is `None`).
pub fn export_attention(
    model: &Model,
    sentences: &[TaggedSentence],
    env: EmbedEnv<'_>,
    temperature: f64,
    targets: Option<&[Vec<bool>]>,
) -> Result<Vec<AttentionRecord>> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    let mut records = Vec::new();
    for (si, s) in sentences.iter().enumerate() {
        let mask = match targets {
            Some(t) => t
                .get(si)
                .cloned()
                .ok_or_else(|| Error::Alignment(format!("no target mask for sentence {si}")))?,
            None => s.tokens.iter().map(|t| t.is_oov).collect(),
        };
        if !mask.iter().any(|&m| m) {
            continue;
        }
        let mut tape = Tape::new();
        let out = forward_sentence(&mut tape, model, s, &mask, env, OovStrategy::Predictor)?;
        let tags = decode(&tape, &out.logits);
        for (i, p) in &out.embedded.predictions {
            let i = *i;
            let tok = &s.tokens[i];
            let char_scores = tape.value(p.char_scores).to_vec();
            let context_scores = p.context_scores.map(|v| tape.value(v).to_vec());
            let span = window_span(s.len(), i, model.predictor.config.max_context);
            records.push(AttentionRecord {
                sentence: s.forms().map(str::to_string).collect(),
                oov_index: i,
                chars: tok.form.chars().map(String::from).collect(),
                char_alphas: tape.value(p.char_alphas).to_vec(),
                char_display: tempered_alphas(&char_scores, temperature),
                char_scores,
                context_positions: (span.start..span.end).filter(|&j| j != i).collect(),
                context_alphas: p.context_alphas.map(|v| tape.value(v).to_vec()),
                context_display: context_scores.as_deref().map(|c| tempered_alphas(c, temperature)),
                context_scores,
                predicted_pos: tags[i].pos_tag(&model.schema).map(str::to_string),
                gold_pos: tok.gold_pos.clone(),
                predicted_feats: format_feats(&tags[i].feats(&model.schema)),
                gold_feats: format_feats(&tok.gold_feats),
                temperature,
            });
        }
    }
    if records.is_empty() {
        return Err(Error::NoOovTargets);
    }
    Ok(records)
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

fn cell(out: &mut String, text: &str, weight: f64, extra: &str) {
    let _ = write!(
        out,
        "<span style=\"display:inline-block;padding:2px 4px;margin:1px;background:rgba(200,30,30,{:.3});{extra}\" title=\"{:.4}\">{}</span>",
        weight.clamp(0.0, 1.0),
        weight,
        escape(text)
    );
}

/// Static page with one block per record: context words shaded by their
/// displayed weight, the OOV word boxed, then its characters shaded.
pub fn render_html(records: &[AttentionRecord]) -> String {
    let mut out = String::from(
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>OOV attention</title></head>\n<body style=\"font-family:monospace\">\n",
    );
    for r in records {
        out.push_str("<div style=\"margin:12px 0;border-bottom:1px solid #ccc\">\n<div>");
        for (j, form) in r.sentence.iter().enumerate() {
            if j == r.oov_index {
                cell(&mut out, form, 0.0, "border:1px solid #000");
            } else {
                let w = r
                    .context_positions
                    .iter()
                    .position(|&p| p == j)
                    .and_then(|k| r.context_display.as_ref().map(|d| d[k]))
                    .unwrap_or(0.0);
                cell(&mut out, form, w, "");
            }
        }
        out.push_str("</div>\n<div>");
        for (c, w) in r.chars.iter().zip(&r.char_display) {
            cell(&mut out, c, *w, "");
        }
        let _ = write!(
            out,
            "</div>\n<div style=\"color:#555\">predicted {} {} / gold {} {} / T={}</div>\n</div>\n",
            escape(r.predicted_pos.as_deref().unwrap_or("_")),
            escape(&r.predicted_feats),
            escape(&r.gold_pos),
            escape(&r.gold_feats),
            r.temperature
        );
    }
    out.push_str("</body></html>\n");
    out
}

/// Writes `<stem>.json` and `<stem>.html` for the given path (any extension
/// on `out` is replaced).
pub fn write_attention(records: &[AttentionRecord], out: &Path) -> Result<()> {
    fs::write(out.with_extension("json"), serde_json::to_string_pretty(records)?)?;
    fs::write(out.with_extension("html"), render_html(records))?;
    Ok(())
}
