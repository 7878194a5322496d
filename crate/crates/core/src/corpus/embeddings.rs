use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use super::{read_to_string, source_name};
use crate::error::{Error, Result};

/// Read-only token → vector table. Tokens are lowercased on insertion.
#[derive(Debug, Clone, PartialEq)]
pub struct WordEmbeddingTable {
    dim: usize,
    tokens: Vec<String>,
    vectors: Vec<f64>,
    index: HashMap<String, usize>,
}

impl WordEmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Argument("word vectors need a positive dimension".into()));
        }
        Ok(Self {
            dim,
            tokens: Vec::new(),
            vectors: Vec::new(),
            index: HashMap::new(),
        })
    }

    /// Inserts or replaces a token's vector.
    pub fn insert(&mut self, token: &str, vector: &[f64]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Argument(format!(
                "vector for `{token}` has length {}, table dim is {}",
                vector.len(),
                self.dim
            )));
        }
        let token = token.to_lowercase();
        match self.index.get(&token) {
            Some(&row) => self.vectors[row * self.dim..(row + 1) * self.dim].copy_from_slice(vector),
            None => {
                self.index.insert(token.clone(), self.tokens.len());
                self.tokens.push(token);
                self.vectors.extend_from_slice(vector);
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens in first-insertion order.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn row_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.row_of(token).map(|r| self.row(r))
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.vectors[row * self.dim..(row + 1) * self.dim]
    }

    /// All vectors, row-major in token order.
    pub fn flat(&self) -> &[f64] {
        &self.vectors
    }
}

pub fn parse_word_embeddings<R: BufRead>(reader: R, source: &str) -> Result<WordEmbeddingTable> {
    let mut table: Option<WordEmbeddingTable> = None;
    let mut values = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let no = i + 1;
        let line = line.map_err(|e| Error::format(source, no, e.to_string()))?;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        values.clear();
        for tok in parts {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::format(source, no, format!("bad real `{tok}`")))?;
            if !v.is_finite() {
                return Err(Error::format(source, no, format!("non-finite value `{tok}`")));
            }
            values.push(v);
        }
        if values.is_empty() {
            return Err(Error::format(source, no, format!("token `{token}` has no vector")));
        }
        let t = match &mut table {
            Some(t) => t,
            None => table.insert(WordEmbeddingTable::new(values.len())?),
        };
        if values.len() != t.dim() {
            return Err(Error::format(
                source,
                no,
                format!("dimension {} differs from {}", values.len(), t.dim()),
            ));
        }
        t.insert(token, &values)?;
    }
    table.ok_or_else(|| Error::format(source, 0, "no word vectors found"))
}

pub fn load_word_embeddings(path: &Path) -> Result<WordEmbeddingTable> {
    let text = read_to_string(path)?;
    parse_word_embeddings(text.as_bytes(), &source_name(path))
}

pub fn write_word_embeddings(table: &WordEmbeddingTable) -> String {
    let mut out = String::new();
    for (i, token) in table.tokens().iter().enumerate() {
        out.push_str(token);
        for v in table.row(i) {
            out.push_str(&format!(" {v:e}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<WordEmbeddingTable> {
        parse_word_embeddings(text.as_bytes(), "mem")
    }

    #[test]
    fn parses_simple_table() {
        let t = parse("cat 1 0\ndog 0 1\n").unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.len(), 2);
        assert_eq!(t.get("dog"), Some(&[0.0, 1.0][..]));
    }

    #[test]
    fn last_occurrence_wins() {
        let t = parse("a 1 2\na 3 4\n").unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.get("a"), Some(&[3.0, 4.0][..]));
    }

    #[test]
    fn dimension_mismatch_names_line() {
        match parse("a 1 2\nb 1\n") {
            Err(Error::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_rejected() {
        assert!(matches!(parse(""), Err(Error::Format { .. })));
        assert!(matches!(parse("\n \n"), Err(Error::Format { .. })));
    }

    #[test]
    fn absent_token_is_distinguishable() {
        let t = parse("cat 0 0\n").unwrap();
        assert!(t.get("cat").is_some());
        assert!(t.get("zzz").is_none());
    }

    #[test]
    fn roundtrips_through_text() {
        let t = parse("Cat 0.1 -2e-7\ndog 3 4\n").unwrap();
        assert_eq!(parse(&write_word_embeddings(&t)).unwrap(), t);
    }
}
