//! Versioned text container for checkpoints.
//!
//! ```text
//! ansemb-container 1
//! meta <key> <value...>          # value is the rest of the line
//! list <name> <count>            # followed by <count> raw lines
//! tensor <name> <rows> <cols>    # followed by <rows> lines of <cols> reals
//! end
//! ```
//!
//! Sections may appear in any order and names are unique per section kind.
//! Reals are written in shortest round-trip exponent form, so a write/parse
//! cycle reproduces every value bit for bit. Lines inside a `list` body are
//! taken verbatim and must not contain newlines.

use crate::error::{Error, Result};

use super::matrix::Matrix;

pub const MAGIC: &str = "ansemb-container";
pub const VERSION: u32 = 1;

const SOURCE: &str = "container";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    pub meta: Vec<(String, String)>,
    pub lists: Vec<(String, Vec<String>)>,
    pub tensors: Vec<(String, Matrix)>,
}

impl Container {
    pub fn push_meta(&mut self, key: impl Into<String>, value: impl ToString) {
        self.meta.push((key.into(), value.to_string()));
    }

    pub fn push_list(&mut self, name: impl Into<String>, items: Vec<String>) {
        self.lists.push((name.into(), items));
    }

    pub fn push_tensor(&mut self, name: impl Into<String>, tensor: Matrix) {
        self.tensors.push((name.into(), tensor));
    }

    pub fn push_vector(&mut self, name: impl Into<String>, values: &[f64]) {
        let m = Matrix::from_vec(1, values.len(), values.to_vec()).expect("row vector shape");
        self.tensors.push((name.into(), m));
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require_meta(&self, key: &str) -> Result<&str> {
        self.meta(key)
            .ok_or_else(|| Error::format(SOURCE, 0, format!("missing meta entry `{key}`")))
    }

    pub fn list(&self, name: &str) -> Option<&[String]> {
        self.lists
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    pub fn tensor(&self, name: &str) -> Result<&Matrix> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::format(SOURCE, 0, format!("missing tensor `{name}`")))
    }

    /// Tensor stored as a single row, returned as a vector.
    pub fn vector(&self, name: &str) -> Result<Vec<f64>> {
        let m = self.tensor(name)?;
        if m.rows() != 1 && m.cols() != 0 {
            return Err(Error::format(
                SOURCE,
                0,
                format!("tensor `{name}` is {}x{}, expected one row", m.rows(), m.cols()),
            ));
        }
        Ok(m.as_slice().to_vec())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC} {VERSION}\n");
        for (k, v) in &self.meta {
            out.push_str(&format!("meta {k} {v}\n"));
        }
        for (name, items) in &self.lists {
            out.push_str(&format!("list {name} {}\n", items.len()));
            for item in items {
                out.push_str(item);
                out.push('\n');
            }
        }
        for (name, m) in &self.tensors {
            out.push_str(&format!("tensor {name} {} {}\n", m.rows(), m.cols()));
            for r in 0..m.rows() {
                let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:e}")).collect();
                out.push_str(&row.join(" "));
                out.push('\n');
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::format(SOURCE, 1, "empty container"))?;
        let mut head = header.split_whitespace();
        if head.next() != Some(MAGIC) {
            return Err(Error::format(SOURCE, 1, "not an ansemb container"));
        }
        match head.next().map(str::parse::<u32>) {
            Some(Ok(VERSION)) => {}
            Some(Ok(v)) => {
                return Err(Error::format(SOURCE, 1, format!("unsupported version {v}")));
            }
            _ => return Err(Error::format(SOURCE, 1, "missing version")),
        }

        if let Some((no, _)) = text.lines().enumerate().find(|(_, l)| l.contains('\r')) {
            return Err(Error::format(SOURCE, no + 1, "stray carriage return"));
        }
        let mut out = Container::default();
        let mut ended = false;
        while let Some((no, line)) = lines.next() {
            if line == "end" {
                ended = true;
                break;
            }
            let (kind, rest) = line.split_once(' ').unwrap_or((line, ""));
            match kind {
                "meta" => {
                    let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                    if k.is_empty() {
                        return Err(Error::format(SOURCE, no, "meta entry without key"));
                    }
                    if out.meta(k).is_some() {
                        return Err(Error::format(SOURCE, no, format!("duplicate meta `{k}`")));
                    }
                    out.meta.push((k.to_string(), v.to_string()));
                }
                "list" => {
                    let (name, count) = name_and_counts::<1>(rest, no)?;
                    if out.list(&name).is_some() {
                        return Err(Error::format(SOURCE, no, format!("duplicate list `{name}`")));
                    }
                    let mut items = Vec::new();
                    for _ in 0..count[0] {
                        let (_, item) = lines
                            .next()
                            .ok_or_else(|| Error::format(SOURCE, no, "list truncated"))?;
                        items.push(item.to_string());
                    }
                    out.lists.push((name, items));
                }
                "tensor" => {
                    let (name, [rows, cols]) = name_and_counts::<2>(rest, no)?;
                    if out.tensors.iter().any(|(n, _)| *n == name) {
                        return Err(Error::format(SOURCE, no, format!("duplicate tensor `{name}`")));
                    }
                    let total = rows
                        .checked_mul(cols)
                        .ok_or_else(|| Error::format(SOURCE, no, "tensor shape overflows"))?;
                    // Shape headers are untrusted; grow as rows actually arrive.
                    let mut data = Vec::with_capacity(total.min(1 << 16));
                    for _ in 0..rows {
                        let (row_no, row) = lines
                            .next()
                            .ok_or_else(|| Error::format(SOURCE, no, "tensor truncated"))?;
                        let before = data.len();
                        for tok in row.split_whitespace() {
                            let v = tok.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                                Error::format(SOURCE, row_no, format!("bad real `{tok}`"))
                            })?;
                            data.push(v);
                        }
                        if data.len() - before != cols {
                            return Err(Error::format(
                                SOURCE,
                                row_no,
                                format!("expected {cols} values, found {}", data.len() - before),
                            ));
                        }
                    }
                    out.tensors.push((name, Matrix::from_vec(rows, cols, data)?));
                }
                _ => {
                    return Err(Error::format(SOURCE, no, format!("unknown section `{kind}`")));
                }
            }
        }
        if !ended {
            return Err(Error::format(SOURCE, 0, "missing `end` marker"));
        }
        Ok(out)
    }
}

fn name_and_counts<const N: usize>(rest: &str, line: usize) -> Result<(String, [usize; N])> {
    let mut parts = rest.split_whitespace();
    let name = parts
        .next()
        .ok_or_else(|| Error::format(SOURCE, line, "section without name"))?
        .to_string();
    let mut counts = [0usize; N];
    for c in &mut counts {
        *c = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::format(SOURCE, line, "bad section size"))?;
    }
    if parts.next().is_some() {
        return Err(Error::format(SOURCE, line, "trailing tokens in section header"));
    }
    Ok((name, counts))
}
