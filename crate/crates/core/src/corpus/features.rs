use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use super::{read_to_string, source_name};
use crate::error::{Error, Result};

/// Precomputed image features keyed by image id.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<f64>,
    index: HashMap<String, usize>,
}

impl FeatureStore {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Argument("features need a positive dimension".into()));
        }
        Ok(Self {
            dim,
            ids: Vec::new(),
            vectors: Vec::new(),
            index: HashMap::new(),
        })
    }

    pub fn insert(&mut self, id: &str, vector: &[f64]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Argument(format!(
                "feature `{id}` has length {}, store dim is {}",
                vector.len(),
                self.dim
            )));
        }
        if self.index.contains_key(id) {
            return Err(Error::Argument(format!("duplicate image id `{id}`")));
        }
        self.index.insert(id.to_string(), self.ids.len());
        self.ids.push(id.to_string());
        self.vectors.extend_from_slice(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index
            .get(id)
            .map(|&r| &self.vectors[r * self.dim..(r + 1) * self.dim])
    }
}

pub fn parse_features<R: BufRead>(reader: R, source: &str) -> Result<FeatureStore> {
    let mut store: Option<FeatureStore> = None;
    let mut values = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let no = i + 1;
        let line = line.map_err(|e| Error::format(source, no, e.to_string()))?;
        let mut parts = line.split_whitespace();
        let Some(first) = parts.next() else { continue };
        let Some(store) = store.as_mut() else {
            if first != "dim" {
                return Err(Error::format(source, no, "expected header `dim D`"));
            }
            let dim: usize = parts
                .next()
                .and_then(|t| t.parse().ok())
                .filter(|&d| d > 0)
                .ok_or_else(|| Error::format(source, no, "header needs a positive dimension"))?;
            if parts.next().is_some() {
                return Err(Error::format(source, no, "trailing tokens after header"));
            }
            store = Some(FeatureStore::new(dim)?);
            continue;
        };
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
        if values.len() != store.dim() {
            return Err(Error::format(
                source,
                no,
                format!("expected {} values, found {}", store.dim(), values.len()),
            ));
        }
        store
            .insert(first, &values)
            .map_err(|e| Error::format(source, no, e.to_string()))?;
    }
    store.ok_or_else(|| Error::format(source, 0, "missing `dim` header"))
}

pub fn load_features(path: &Path) -> Result<FeatureStore> {
    let text = read_to_string(path)?;
    parse_features(text.as_bytes(), &source_name(path))
}

pub fn write_features(store: &FeatureStore) -> String {
    let mut out = format!("dim {}\n", store.dim());
    for id in store.ids() {
        out.push_str(id);
        for v in store.get(id).expect("listed id") {
            out.push_str(&format!(" {v:e}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<FeatureStore> {
        parse_features(text.as_bytes(), "mem")
    }

    #[test]
    fn parses_header_and_rows() {
        let s = parse("dim 2\nimg1 0.5 1\nimg2 0 0\n").unwrap();
        assert_eq!(s.dim(), 2);
        assert_eq!(s.get("img1"), Some(&[0.5, 1.0][..]));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(parse("").is_err());
        assert!(parse("img 1 2\n").is_err());
        assert!(parse("dim 0\n").is_err());
        assert!(parse("dim 2\nimg 1\n").is_err());
        assert!(parse("dim 1\nimg 1\nimg 2\n").is_err());
    }

    #[test]
    fn roundtrips_through_text() {
        let s = parse("dim 3\na 1 2 3\nb -1e-9 0 7\n").unwrap();
        assert_eq!(parse(&write_features(&s)).unwrap(), s);
    }
}
