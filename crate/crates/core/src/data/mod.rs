//! Corpus and embedding ingestion.

pub mod conllu;
pub mod embeddings;
pub mod schema;

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

pub use conllu::{parse_conllu, read_conllu_file, write_conllu, Corpus, Sentence, Word};
pub use embeddings::{load_embedding_table, save_embedding_table, EmbeddingTable, Normalization};
pub use schema::{build_schemas, CharVocab, MorphCategory, Schema};

/// A word prepared for the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Token {
    pub form: String,
    pub chars: Vec<usize>,
    /// Gold POS id; `None` when the tag was never seen in training.
    pub pos: Option<usize>,
    /// Gold `(category, value)` ids for the pairs known to the schema.
    pub morph: Vec<(usize, usize)>,
    /// Gold tag strings, kept for scoring tags the schema cannot represent.
    pub gold_pos: String,
    pub gold_feats: Vec<(String, String)>,
    pub table_row: Option<usize>,
    pub is_oov: bool,
}

impl Token {
    /// Gold class per morph category: 0 for "absent", `value + 1` otherwise.
    pub fn morph_classes(&self, num_categories: usize) -> Vec<usize> {
        let mut classes = vec![0; num_categories];
        for &(c, v) in &self.morph {
            classes[c] = v + 1;
        }
        classes
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TaggedSentence {
    pub tokens: Vec<Token>,
}

impl TaggedSentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn forms(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.form.as_str())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OovStats {
    pub tokens: usize,
    pub oov_tokens: usize,
    pub types: usize,
    pub oov_types: usize,
}

impl OovStats {
    pub fn token_rate(&self) -> f64 {
        if self.tokens == 0 {
            0.0
        } else {
            self.oov_tokens as f64 / self.tokens as f64
        }
    }

    pub fn type_rate(&self) -> f64 {
        if self.types == 0 {
            0.0
        } else {
            self.oov_types as f64 / self.types as f64
        }
    }
}

pub fn encode_sentence(sentence: &Sentence, schema: &Schema) -> TaggedSentence {
    TaggedSentence {
        tokens: sentence
            .words
            .iter()
            .map(|w| Token {
                form: w.form.clone(),
                chars: schema.chars.ids(&w.form),
                pos: schema.pos_id(&w.upos),
                morph: w
                    .feats
                    .iter()
                    .filter_map(|(k, v)| schema.morph_pair(k, v))
                    .collect(),
                gold_pos: w.upos.clone(),
                gold_feats: w.feats.clone(),
                table_row: None,
                is_oov: true,
            })
            .collect(),
    }
}

/// Encodes every sentence against `schema` and marks OOV tokens.
pub fn encode_corpus(
    corpus: &Corpus,
    schema: &Schema,
    table: &EmbeddingTable,
    norm: Normalization,
) -> (Vec<TaggedSentence>, OovStats) {
    let mut sentences: Vec<TaggedSentence> =
        corpus.sentences.iter().map(|s| encode_sentence(s, schema)).collect();
    let stats = mark_oov(&mut sentences, table, norm);
    (sentences, stats)
}

/// Sets `table_row` and `is_oov` from the table alone and reports the
/// token- and type-level OOV rates.
pub fn mark_oov(sentences: &mut [TaggedSentence], table: &EmbeddingTable, norm: Normalization) -> OovStats {
    let mut stats = OovStats::default();
    let mut types = HashSet::new();
    let mut oov_types = HashSet::new();
    for tok in sentences.iter_mut().flat_map(|s| s.tokens.iter_mut()) {
        tok.table_row = table.lookup(&tok.form, norm);
        tok.is_oov = tok.table_row.is_none();
        stats.tokens += 1;
        types.insert(tok.form.clone());
        if tok.is_oov {
            stats.oov_tokens += 1;
            oov_types.insert(tok.form.clone());
        }
    }
    stats.types = types.len();
    stats.oov_types = oov_types.len();
    stats
}

/// OOV statistics straight from a parsed corpus.
pub fn oov_stats(corpus: &Corpus, table: &EmbeddingTable, norm: Normalization) -> OovStats {
    let mut encoded: Vec<TaggedSentence> = corpus
        .sentences
        .iter()
        .map(|s| encode_sentence(s, &Schema::default()))
        .collect();
    mark_oov(&mut encoded, table, norm)
}

/// Sorted distinct surface forms.
pub fn vocabulary<'a>(forms: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    forms
        .into_iter()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(str::to_string)
        .collect()
}
