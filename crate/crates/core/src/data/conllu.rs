//! CoNLL-U reading and writing.
//!
//! Only the word lines matter here: multiword-token ranges (`1-2`) and empty
//! nodes (`1.1`) are skipped on input, and comments are carried through.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const COLUMNS: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Word {
    pub id: String,
    pub form: String,
    pub lemma: String,
    pub upos: String,
    pub xpos: String,
    pub feats: Vec<(String, String)>,
    pub head: String,
    pub deprel: String,
    pub deps: String,
    pub misc: String,
}

impl Word {
    /// A word with only the id, form and UPOS columns filled.
    pub fn new(id: usize, form: impl Into<String>, upos: impl Into<String>) -> Self {
        let blank = || "_".to_string();
        Word {
            id: id.to_string(),
            form: form.into(),
            lemma: blank(),
            upos: upos.into(),
            xpos: blank(),
            feats: Vec::new(),
            head: blank(),
            deprel: blank(),
            deps: blank(),
            misc: blank(),
        }
    }

    pub fn with_feats(mut self, feats: &[(&str, &str)]) -> Self {
        self.feats = feats.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        self
    }

    pub fn feats_string(&self) -> String {
        format_feats(&self.feats)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Sentence {
    pub comments: Vec<String>,
    pub words: Vec<Word>,
}

impl Sentence {
    pub fn forms(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(|w| w.form.as_str())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
}

impl Corpus {
    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

pub fn parse_feats(field: &str, line: usize) -> Result<Vec<(String, String)>> {
    if field == "_" {
        return Ok(Vec::new());
    }
    field
        .split('|')
        .map(|feat| match feat.split_once('=') {
            Some((k, v)) if !k.is_empty() && !v.is_empty() => Ok((k.to_string(), v.to_string())),
            _ => Err(Error::BadFeats {
                line,
                feat: feat.to_string(),
            }),
        })
        .collect()
}

pub fn format_feats(feats: &[(String, String)]) -> String {
    if feats.is_empty() {
        return "_".to_string();
    }
    let mut s = String::new();
    for (i, (k, v)) in feats.iter().enumerate() {
        if i > 0 {
            s.push('|');
        }
        let _ = write!(s, "{k}={v}");
    }
    s
}

pub fn parse_conllu<R: BufRead>(reader: R) -> Result<Corpus> {
    let mut corpus = Corpus::default();
    let mut current = Sentence::default();

    let flush = |corpus: &mut Corpus, current: &mut Sentence| {
        let s = std::mem::take(current);
        if !s.words.is_empty() {
            corpus.sentences.push(s);
        }
    };

    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            flush(&mut corpus, &mut current);
            continue;
        }
        if line.starts_with('#') {
            current.comments.push(line.to_string());
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != COLUMNS {
            return Err(Error::MalformedLine {
                line: line_no,
                detail: format!("expected {COLUMNS} tab-separated columns, found {}", cols.len()),
            });
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        current.words.push(Word {
            id: cols[0].to_string(),
            form: cols[1].to_string(),
            lemma: cols[2].to_string(),
            upos: cols[3].to_string(),
            xpos: cols[4].to_string(),
            feats: parse_feats(cols[5], line_no)?,
            head: cols[6].to_string(),
            deprel: cols[7].to_string(),
            deps: cols[8].to_string(),
            misc: cols[9].to_string(),
        });
    }
    flush(&mut corpus, &mut current);
    Ok(corpus)
}

pub fn parse_conllu_str(text: &str) -> Result<Corpus> {
    parse_conllu(text.as_bytes())
}

pub fn read_conllu_file(path: impl AsRef<Path>) -> Result<Corpus> {
    parse_conllu(BufReader::new(File::open(path)?))
}

pub fn write_conllu<W: Write>(mut out: W, corpus: &Corpus) -> io::Result<()> {
    for sentence in &corpus.sentences {
        for c in &sentence.comments {
            writeln!(out, "{c}")?;
        }
        for w in &sentence.words {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                w.id,
                w.form,
                w.lemma,
                w.upos,
                w.xpos,
                w.feats_string(),
                w.head,
                w.deprel,
                w.deps,
                w.misc
            )?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn to_conllu_string(corpus: &Corpus) -> String {
    let mut buf = Vec::new();
    write_conllu(&mut buf, corpus).expect("writing to memory");
    String::from_utf8(buf).expect("utf-8 input yields utf-8 output")
}
