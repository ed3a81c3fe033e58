use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::conllu::Corpus;
use crate::error::{Error, Result};

/// Character inventory. Id 0 is reserved for characters unseen in training.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharVocab {
    chars: Vec<char>,
}

impl CharVocab {
    pub const UNK: usize = 0;

    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Self {
        let set: BTreeSet<char> = chars.into_iter().collect();
        CharVocab {
            chars: set.into_iter().collect(),
        }
    }

    /// Number of ids, including the unknown-character id.
    pub fn size(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn id(&self, c: char) -> usize {
        self.chars.binary_search(&c).map_or(Self::UNK, |i| i + 1)
    }

    pub fn ids(&self, form: &str) -> Vec<usize> {
        form.chars().map(|c| self.id(c)).collect()
    }

    pub fn char(&self, id: usize) -> Option<char> {
        id.checked_sub(1).and_then(|i| self.chars.get(i).copied())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MorphCategory {
    pub name: String,
    pub values: Vec<String>,
}

/// Tag inventories discovered from a training corpus. All ids come from
/// lexicographic order, so they depend only on the corpus content.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub pos_tags: Vec<String>,
    pub morph: Vec<MorphCategory>,
    pub chars: CharVocab,
}

impl Schema {
    pub fn pos_id(&self, tag: &str) -> Option<usize> {
        self.pos_tags.binary_search_by(|t| t.as_str().cmp(tag)).ok()
    }

    pub fn category_id(&self, name: &str) -> Option<usize> {
        self.morph.binary_search_by(|c| c.name.as_str().cmp(name)).ok()
    }

    /// `(category id, value id)` for a known pair.
    pub fn morph_pair(&self, category: &str, value: &str) -> Option<(usize, usize)> {
        let c = self.category_id(category)?;
        let v = self.morph[c].values.binary_search_by(|x| x.as_str().cmp(value)).ok()?;
        Some((c, v))
    }

    pub fn num_categories(&self) -> usize {
        self.morph.len()
    }
}

pub fn build_schemas(corpus: &Corpus) -> Result<Schema> {
    if corpus.num_tokens() == 0 {
        return Err(Error::EmptyCorpus);
    }
    let mut tags = BTreeSet::new();
    let mut cats: std::collections::BTreeMap<&str, BTreeSet<&str>> = Default::default();
    let mut chars = BTreeSet::new();
    for w in corpus.sentences.iter().flat_map(|s| &s.words) {
        tags.insert(w.upos.as_str());
        for (k, v) in &w.feats {
            cats.entry(k.as_str()).or_default().insert(v.as_str());
        }
        chars.extend(w.form.chars());
    }
    Ok(Schema {
        pos_tags: tags.into_iter().map(str::to_string).collect(),
        morph: cats
            .into_iter()
            .map(|(name, values)| MorphCategory {
                name: name.to_string(),
                values: values.into_iter().map(str::to_string).collect(),
            })
            .collect(),
        chars: CharVocab::from_chars(chars),
    })
}
