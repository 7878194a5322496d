use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use super::text::normalize_answer;
use super::{read_to_string, source_name};
use crate::error::{Error, Result};

/// Symmetric answer-pair similarity in `[0, 1]`; identical strings score 1,
/// unlisted pairs score 0.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimilarityTable {
    entries: HashMap<(String, String), f64>,
}

fn key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

impl SimilarityTable {
    pub fn insert(&mut self, a: &str, b: &str, score: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::Argument(format!("similarity {score} outside [0, 1]")));
        }
        self.entries.insert(key(a, b), score);
        Ok(())
    }

    pub fn value(&self, a: &str, b: &str) -> f64 {
        if a == b {
            return 1.0;
        }
        self.entries.get(&key(a, b)).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn parse_similarity_table<R: BufRead>(reader: R, source: &str) -> Result<SimilarityTable> {
    let mut table = SimilarityTable::default();
    for (i, line) in reader.lines().enumerate() {
        let no = i + 1;
        let line = line.map_err(|e| Error::format(source, no, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::format(source, no, "expected `a<TAB>b<TAB>score`"));
        }
        let (a, b) = (normalize_answer(fields[0]), normalize_answer(fields[1]));
        if a.is_empty() || b.is_empty() {
            return Err(Error::format(source, no, "empty answer"));
        }
        let score: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| Error::format(source, no, format!("bad score `{}`", fields[2])))?;
        table
            .insert(&a, &b, score)
            .map_err(|e| Error::format(source, no, e.to_string()))?;
    }
    Ok(table)
}

pub fn load_similarity_table(path: &Path) -> Result<SimilarityTable> {
    let text = read_to_string(path)?;
    parse_similarity_table(text.as_bytes(), &source_name(path))
}
