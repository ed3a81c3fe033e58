//! Word embedding tables in the plain-text format: an optional `V d` header,
//! then one `word f1 ... fd` line per word.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How surface forms are matched against table entries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Normalization {
    /// Retry a missed lookup with the lowercased form.
    pub lowercase_fallback: bool,
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization {
            lowercase_fallback: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    words: Vec<String>,
    index: HashMap<String, usize>,
    dim: usize,
    matrix: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            words: Vec::new(),
            index: HashMap::new(),
            dim,
            matrix: Vec::new(),
        }
    }

    pub fn push(&mut self, word: impl Into<String>, row: &[f64]) -> Result<usize> {
        let word = word.into();
        let line = self.words.len() + 1;
        if row.len() != self.dim {
            return Err(Error::DimensionMismatch {
                line,
                expected: self.dim,
                found: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse(format!("non-finite value for {word:?}")));
        }
        if self.index.contains_key(&word) {
            return Err(Error::DuplicateWord { line, word });
        }
        self.index.insert(word.clone(), self.words.len());
        self.words.push(word);
        self.matrix.extend_from_slice(row);
        Ok(self.words.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn lookup(&self, form: &str, norm: Normalization) -> Option<usize> {
        self.get(form).or_else(|| {
            if norm.lowercase_fallback {
                let lower = form.to_lowercase();
                if lower != form {
                    return self.get(&lower);
                }
            }
            None
        })
    }

    pub fn contains(&self, form: &str, norm: Normalization) -> bool {
        self.lookup(form, norm).is_some()
    }

    /// Standard deviation over all entries; 1.0 for an empty table.
    pub fn std(&self) -> f64 {
        if self.matrix.len() < 2 {
            return 1.0;
        }
        let n = self.matrix.len() as f64;
        let mean = self.matrix.iter().sum::<f64>() / n;
        let var = self.matrix.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        var.sqrt()
    }
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let mut it = line.split_ascii_whitespace();
    let v = it.next()?.parse().ok()?;
    let d = it.next()?.parse().ok()?;
    it.next().is_none().then_some((v, d))
}

/// Reads a table. Without a header, the dimension is `expected_dim` if given,
/// otherwise the width of the first row.
pub fn read_embedding_table<R: BufRead>(reader: R, expected_dim: Option<usize>) -> Result<EmbeddingTable> {
    let mut table: Option<EmbeddingTable> = expected_dim.map(EmbeddingTable::new);
    let mut declared_rows = None;
    let mut first = true;

    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        if std::mem::take(&mut first) {
            if let Some((v, d)) = parse_header(line) {
                if let Some(e) = expected_dim.filter(|&e| e != d) {
                    return Err(Error::DimensionMismatch {
                        line: line_no,
                        expected: e,
                        found: d,
                    });
                }
                declared_rows = Some(v);
                table = Some(EmbeddingTable::new(d));
                continue;
            }
        }
        let mut fields = line.split_ascii_whitespace();
        let word = fields.next().expect("non-empty line");
        let row = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {line_no}: {f:?}: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let t = table.get_or_insert_with(|| EmbeddingTable::new(row.len()));
        t.push(word, &row).map_err(|e| match e {
            Error::DimensionMismatch { expected, found, .. } => Error::DimensionMismatch {
                line: line_no,
                expected,
                found,
            },
            Error::DuplicateWord { word, .. } => Error::DuplicateWord { line: line_no, word },
            Error::Parse(m) => Error::Parse(format!("line {line_no}: {m}")),
            other => other,
        })?;
    }

    let table = table.unwrap_or_else(|| EmbeddingTable::new(expected_dim.unwrap_or(0)));
    if let Some(v) = declared_rows.filter(|&v| v != table.len()) {
        return Err(Error::Parse(format!("header declares {v} words, found {}", table.len())));
    }
    Ok(table)
}

pub fn load_embedding_table(path: impl AsRef<Path>, expected_dim: Option<usize>) -> Result<EmbeddingTable> {
    read_embedding_table(BufReader::new(File::open(path)?), expected_dim)
}

/// Writes with a header. Floats use the shortest representation that parses
/// back to the same value.
pub fn write_embedding_table<W: Write>(out: W, table: &EmbeddingTable) -> io::Result<()> {
    let mut out = BufWriter::new(out);
    writeln!(out, "{} {}", table.len(), table.dim())?;
    for (i, w) in table.words().iter().enumerate() {
        write!(out, "{w}")?;
        for v in table.row(i) {
            write!(out, " {v}")?;
        }
        writeln!(out)?;
    }
    out.flush()
}

pub fn save_embedding_table(path: impl AsRef<Path>, table: &EmbeddingTable) -> Result<()> {
    write_embedding_table(File::create(path)?, table)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row_text(word: &str, n: usize) -> String {
        let vals: Vec<String> = (0..n).map(|i| format!("{}", i as f64 * 0.5)).collect();
        format!("{word} {}\n", vals.join(" "))
    }

    #[test]
    fn two_word_table() {
        let text = format!("2 64\n{}{}", row_text("the", 64), row_text("cat", 64));
        let t = read_embedding_table(text.as_bytes(), Some(64)).unwrap();
        assert_eq!((t.len(), t.dim()), (2, 64));
        assert_eq!(t.get("cat"), Some(1));
        assert_eq!(t.row(1)[3], 1.5);
    }

    #[test]
    fn headerless_dim_inferred() {
        let text = format!("{}{}", row_text("a", 3), row_text("b", 3));
        let t = read_embedding_table(text.as_bytes(), None).unwrap();
        assert_eq!(t.dim(), 3);
    }

    #[test]
    fn short_row_is_dimension_mismatch() {
        let text = format!("{}{}", row_text("the", 64), row_text("cat", 63));
        assert!(matches!(
            read_embedding_table(text.as_bytes(), Some(64)),
            Err(Error::DimensionMismatch {
                line: 2,
                expected: 64,
                found: 63
            })
        ));
    }

    #[test]
    fn duplicates_and_garbage() {
        let text = format!("{}{}", row_text("a", 2), row_text("a", 2));
        assert!(matches!(
            read_embedding_table(text.as_bytes(), None),
            Err(Error::DuplicateWord { line: 2, .. })
        ));
        assert!(matches!(
            read_embedding_table("a 1.0 x\n".as_bytes(), None),
            Err(Error::Parse(_))
        ));
        assert!(matches!(
            read_embedding_table("3 2\na 1 2\n".as_bytes(), None),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn lowercase_fallback() {
        let mut t = EmbeddingTable::new(1);
        t.push("paris", &[1.0]).unwrap();
        let on = Normalization::default();
        let off = Normalization {
            lowercase_fallback: false,
        };
        assert_eq!(t.lookup("Paris", on), Some(0));
        assert_eq!(t.lookup("Paris", off), None);
    }
}
