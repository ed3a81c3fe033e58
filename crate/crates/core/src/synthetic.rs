//! A toy language whose open-class parts of speech and features are marked
//! by suffixes, with an embedding table whose vectors cluster by tag.
//!
//! Open-class lexemes are split into disjoint pools for train, dev and test,
//! so every word built from a held-out stem is out of vocabulary by
//! construction. Context carries some signal too (determiners precede
//! nouns, verbs agree with their subject), but only the suffix pins the tag.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Corpus, EmbeddingTable, Sentence, Word};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub train_sentences: usize,
    pub dev_sentences: usize,
    pub test_sentences: usize,
    /// Open-class stems per class in the training pool; the dev and test
    /// pools get half as many each.
    pub stems_per_class: usize,
    /// Probability that an open-class slot in dev/test draws from the
    /// held-out pool instead of the training pool.
    pub heldout_share: f64,
    pub dim: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 0,
            train_sentences: 5000,
            dev_sentences: 500,
            test_sentences: 1000,
            stems_per_class: 200,
            heldout_share: 0.6,
            dim: 64,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub train: Corpus,
    pub dev: Corpus,
    pub test: Corpus,
    /// Rows for every training form.
    pub table: EmbeddingTable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Open {
    Noun,
    Verb,
    Adj,
    Adv,
}

const OPEN: [Open; 4] = [Open::Noun, Open::Verb, Open::Adj, Open::Adv];

/// Suffix and features for an inflected open-class form.
fn inflect(class: Open, number: usize, case_or_tense: usize) -> (&'static str, &'static str, Vec<(&'static str, &'static str)>) {
    let num = ["Sing", "Plur"][number];
    match class {
        Open::Noun => {
            let case = ["Nom", "Acc"][case_or_tense];
            let suffix = [["an", "am"], ["ani", "ami"]][number][case_or_tense];
            (suffix, "NOUN", vec![("Case", case), ("Number", num)])
        }
        Open::Verb => {
            let tense = ["Pres", "Past"][case_or_tense];
            let suffix = [["et", "ur"], ["ent", "urn"]][number][case_or_tense];
            (suffix, "VERB", vec![("Number", num), ("Tense", tense)])
        }
        Open::Adj => {
            let degree = ["Pos", "Cmp"][case_or_tense];
            let suffix = ["ol", "olor"][case_or_tense];
            (suffix, "ADJ", vec![("Degree", degree)])
        }
        Open::Adv => ("ik", "ADV", vec![]),
    }
}

const DETS: [(&str, &str); 3] = [("ta", "Def"), ("ke", "Ind"), ("su", "Def")];
const ADPS: [&str; 3] = ["na", "po", "vi"];
const PRONS: [(&str, &str, &str); 4] = [("mo", "1", "Sing"), ("ti", "2", "Sing"), ("lu", "3", "Sing"), ("zo", "3", "Plur")];
const CONJS: [&str; 2] = ["e", "o"];

struct Pools {
    /// `[pool][class]` with pools train, dev, test.
    stems: [[Vec<String>; 4]; 3],
}

fn make_stems<R: Rng>(rng: &mut R, total: usize) -> Vec<String> {
    const C: &[u8] = b"bdfgklmnprstvz";
    const V: &[u8] = b"aeiou";
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(total);
    while out.len() < total {
        let syllables = rng.random_range(2..=3);
        let mut s = String::new();
        for _ in 0..syllables {
            s.push(*C.choose(rng).expect("non-empty") as char);
            s.push(*V.choose(rng).expect("non-empty") as char);
        }
        if rng.random_bool(0.5) {
            s.push(*C.choose(rng).expect("non-empty") as char);
        }
        if seen.insert(s.clone()) {
            out.push(s);
        }
    }
    out
}

impl Pools {
    fn new<R: Rng>(rng: &mut R, per_class: usize) -> Self {
        let held = per_class.div_ceil(2);
        let all = make_stems(rng, 4 * (per_class + 2 * held));
        let mut it = all.into_iter();
        let mut take = |n: usize| -> Vec<String> { it.by_ref().take(n).collect() };
        let mut pool = |n: usize| -> [Vec<String>; 4] { [take(n), take(n), take(n), take(n)] };
        let train = pool(per_class);
        let dev = pool(held);
        let test = pool(held);
        Pools {
            stems: [train, dev, test],
        }
    }
}

struct Generator<'a> {
    pools: &'a Pools,
    /// 0 train, 1 dev, 2 test.
    split: usize,
    heldout_share: f64,
}

impl Generator<'_> {
    fn stem<R: Rng>(&self, rng: &mut R, class: Open) -> &str {
        let c = OPEN.iter().position(|&o| o == class).expect("open class");
        let pool = if self.split > 0 && rng.random_bool(self.heldout_share) {
            self.split
        } else {
            0
        };
        self.pools.stems[pool][c].choose(rng).expect("non-empty pool")
    }

    fn open<R: Rng>(&self, rng: &mut R, out: &mut Vec<Word>, class: Open, number: usize, sub: usize) {
        let (suffix, upos, feats) = inflect(class, number, sub);
        let form = format!("{}{}", self.stem(rng, class), suffix);
        out.push(Word::new(out.len() + 1, form, upos).with_feats(&feats));
    }

    /// Noun phrase; returns its grammatical number.
    fn np<R: Rng>(&self, rng: &mut R, out: &mut Vec<Word>, case: usize) -> usize {
        if case == 0 && rng.random_bool(0.2) {
            let (form, person, number) = *PRONS.choose(rng).expect("non-empty");
            out.push(
                Word::new(out.len() + 1, form, "PRON").with_feats(&[("Number", number), ("Person", person)]),
            );
            return usize::from(number == "Plur");
        }
        let number = rng.random_range(0..2);
        if rng.random_bool(0.8) {
            let (form, def) = *DETS.choose(rng).expect("non-empty");
            out.push(Word::new(out.len() + 1, form, "DET").with_feats(&[("Definite", def)]));
        }
        if rng.random_bool(0.4) {
            let degree = rng.random_range(0..2);
            self.open(rng, out, Open::Adj, 0, degree);
        }
        self.open(rng, out, Open::Noun, number, case);
        number
    }

    fn clause<R: Rng>(&self, rng: &mut R, out: &mut Vec<Word>) {
        if rng.random_bool(0.2) {
            self.open(rng, out, Open::Adv, 0, 0);
        }
        let number = self.np(rng, out, 0);
        let tense = rng.random_range(0..2);
        self.open(rng, out, Open::Verb, number, tense);
        if rng.random_bool(0.7) {
            self.np(rng, out, 1);
        }
        if rng.random_bool(0.4) {
            let adp = *ADPS.choose(rng).expect("non-empty");
            out.push(Word::new(out.len() + 1, adp, "ADP"));
            self.np(rng, out, 1);
        }
        if rng.random_bool(0.3) {
            self.open(rng, out, Open::Adv, 0, 0);
        }
    }

    fn sentence<R: Rng>(&self, rng: &mut R) -> Sentence {
        let mut words = Vec::new();
        self.clause(rng, &mut words);
        if rng.random_bool(0.25) {
            let c = *CONJS.choose(rng).expect("non-empty");
            words.push(Word::new(words.len() + 1, c, "CCONJ"));
            self.clause(rng, &mut words);
        }
        words.push(Word::new(words.len() + 1, ".", "PUNCT"));
        Sentence {
            comments: vec![],
            words,
        }
    }

    fn corpus<R: Rng>(&self, rng: &mut R, n: usize) -> Corpus {
        Corpus {
            sentences: (0..n).map(|_| self.sentence(rng)).collect(),
        }
    }
}

fn gaussian<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// Table vectors: a tag centroid plus a smaller feature offset plus
/// per-word noise, mimicking embeddings that encode syntax.
fn build_table<R: Rng>(rng: &mut R, train: &Corpus, dim: usize) -> EmbeddingTable {
    let mut centroids: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
    let mut words: std::collections::BTreeMap<&str, &Word> = Default::default();
    for w in train.sentences.iter().flat_map(|s| &s.words) {
        words.entry(w.form.as_str()).or_insert(w);
    }
    let mut table = EmbeddingTable::new(dim);
    for (form, w) in words {
        let mut keys = vec![format!("POS={}", w.upos)];
        keys.extend(w.feats.iter().map(|(k, v)| format!("{k}={v}")));
        let mut row = vec![0.0; dim];
        for (i, key) in keys.iter().enumerate() {
            let c = centroids.entry(key.clone()).or_insert_with(|| gaussian(rng, dim));
            let weight = if i == 0 { 1.0 } else { 0.5 };
            row.iter_mut().zip(c.iter()).for_each(|(r, c)| *r += weight * c);
        }
        for (r, n) in row.iter_mut().zip(gaussian(rng, dim)) {
            *r += 0.5 * n;
        }
        table.push(form, &row).expect("distinct forms of fixed width");
    }
    table
}

pub fn generate(config: &SyntheticConfig) -> SyntheticData {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pools = Pools::new(&mut rng, config.stems_per_class.max(1));
    let gen = |split| Generator {
        pools: &pools,
        split,
        heldout_share: config.heldout_share,
    };
    let train = gen(0).corpus(&mut rng, config.train_sentences);
    let dev = gen(1).corpus(&mut rng, config.dev_sentences);
    let test = gen(2).corpus(&mut rng, config.test_sentences);
    let table = build_table(&mut rng, &train, config.dim);
    SyntheticData {
        train,
        dev,
        test,
        table,
    }
}
