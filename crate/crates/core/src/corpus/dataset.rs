use std::collections::{BTreeSet, HashMap};
use std::io::BufRead;
use std::path::Path;

use super::features::{load_features, FeatureStore};
use super::text::{normalize_answer, tokenize};
use super::{read_to_string, source_name};
use crate::error::{Error, Result};

/// One question record: image reference, question tokens, the correct-answer
/// multiset `C` and the incorrect-answer set `D`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triplet {
    pub image_id: String,
    pub question: Vec<String>,
    /// Multiset; repeats are kept (one entry per annotation).
    pub correct: Vec<String>,
    /// Set in first-occurrence order.
    pub incorrect: Vec<String>,
    pub question_type: Option<String>,
}

impl Triplet {
    pub fn new(
        image_id: impl Into<String>,
        question: &str,
        correct: &[&str],
        incorrect: &[&str],
    ) -> Result<Self> {
        let correct: Vec<String> = correct.iter().map(|a| normalize_answer(a)).collect();
        let mut incorrect_norm: Vec<String> = Vec::new();
        for a in incorrect {
            let a = normalize_answer(a);
            if !incorrect_norm.contains(&a) {
                incorrect_norm.push(a);
            }
        }
        let t = Self {
            image_id: image_id.into(),
            question: tokenize(question),
            correct,
            incorrect: incorrect_norm,
            question_type: None,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn with_type(mut self, question_type: impl Into<String>) -> Self {
        self.question_type = Some(question_type.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.correct.is_empty() {
            return Err(Error::Argument("correct answer set is empty".into()));
        }
        if self.correct.iter().chain(&self.incorrect).any(|a| a.is_empty()) {
            return Err(Error::Argument("empty answer string".into()));
        }
        if let Some(a) = self.incorrect.iter().find(|a| self.correct.contains(a)) {
            return Err(Error::Argument(format!(
                "answer `{a}` is both correct and incorrect"
            )));
        }
        Ok(())
    }

    /// Most frequent member of `C`; ties go to the lexicographically smallest.
    pub fn dominant_answer(&self) -> &str {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for a in &self.correct {
            *counts.entry(a.as_str()).or_default() += 1;
        }
        counts
            .into_iter()
            .max_by(|(a, ca), (b, cb)| ca.cmp(cb).then_with(|| b.cmp(a)))
            .map(|(a, _)| a)
            .expect("validated triplets have a correct answer")
    }

    /// Distinct correct answers in first-occurrence order.
    pub fn distinct_correct(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for a in &self.correct {
            if !out.contains(&a.as_str()) {
                out.push(a);
            }
        }
        out
    }

    /// Multiple-choice candidates: distinct correct answers then incorrect ones.
    pub fn candidates(&self) -> Vec<&str> {
        let mut out = self.distinct_correct();
        out.extend(self.incorrect.iter().map(String::as_str));
        out
    }

    pub fn is_correct(&self, answer: &str) -> bool {
        self.correct.iter().any(|a| a == answer)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn infer(stem: &str) -> Self {
        let stem = stem.to_lowercase();
        if stem.contains("test") {
            Split::Test
        } else if stem.contains("val") {
            Split::Val
        } else {
            Split::Train
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub name: String,
    pub split: Split,
    pub triplets: Vec<Triplet>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, split: Split, triplets: Vec<Triplet>) -> Self {
        Self {
            name: name.into(),
            split,
            triplets,
        }
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    /// Image ids that `features` cannot resolve, sorted and deduplicated.
    pub fn unresolved_images(&self, features: &FeatureStore) -> Vec<String> {
        self.triplets
            .iter()
            .filter(|t| features.get(&t.image_id).is_none())
            .map(|t| t.image_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn check_links(&self, features: &FeatureStore) -> Result<()> {
        let missing = self.unresolved_images(features);
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Link(missing))
        }
    }

    /// Distinct answers over all `C ∪ D`, first-occurrence order.
    pub fn all_answers(&self) -> Vec<String> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for t in &self.triplets {
            for a in t.correct.iter().chain(&t.incorrect) {
                if seen.insert(a.as_str()) {
                    out.push(a.clone());
                }
            }
        }
        out
    }
}

fn split_answers(field: &str) -> Vec<String> {
    if field.trim().is_empty() {
        return Vec::new();
    }
    field.split('|').map(normalize_answer).collect()
}

/// Parses `image_id<TAB>question<TAB>c1|c2|...<TAB>d1|d2|...[<TAB>type]`.
pub fn parse_triplets<R: BufRead>(reader: R, source: &str) -> Result<Vec<Triplet>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let no = i + 1;
        let line = line.map_err(|e| Error::format(source, no, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if !(4..=5).contains(&fields.len()) {
            return Err(Error::format(
                source,
                no,
                format!("expected 4 or 5 tab-separated fields, found {}", fields.len()),
            ));
        }
        let image_id = fields[0].trim();
        if image_id.is_empty() {
            return Err(Error::format(source, no, "empty image id"));
        }
        let correct = split_answers(fields[2]);
        if correct.is_empty() {
            return Err(Error::format(source, no, "empty correct answer set"));
        }
        let mut incorrect: Vec<String> = Vec::new();
        for a in split_answers(fields[3]) {
            if !incorrect.contains(&a) {
                incorrect.push(a);
            }
        }
        let question_type = fields
            .get(4)
            .map(|s| s.trim().to_lowercase())
            .filter(|s| !s.is_empty());
        let t = Triplet {
            image_id: image_id.to_string(),
            question: tokenize(fields[1]),
            correct,
            incorrect,
            question_type,
        };
        t.validate()
            .map_err(|e| Error::format(source, no, e.to_string()))?;
        out.push(t);
    }
    Ok(out)
}

pub fn write_triplets(dataset: &Dataset) -> String {
    let mut out = String::new();
    for t in &dataset.triplets {
        out.push_str(&t.image_id);
        out.push('\t');
        out.push_str(&t.question.join(" "));
        out.push('\t');
        out.push_str(&t.correct.join("|"));
        out.push('\t');
        out.push_str(&t.incorrect.join("|"));
        if let Some(ty) = &t.question_type {
            out.push('\t');
            out.push_str(ty);
        }
        out.push('\n');
    }
    out
}

/// Reads a triplet file without resolving features.
pub fn read_dataset(triplet_path: &Path) -> Result<Dataset> {
    let text = read_to_string(triplet_path)?;
    let triplets = parse_triplets(text.as_bytes(), &source_name(triplet_path))?;
    let stem = triplet_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    Ok(Dataset::new(stem.clone(), Split::infer(&stem), triplets))
}

/// Reads a triplet file and its feature file, checking every image id
/// resolves.
pub fn load_dataset(triplet_path: &Path, feature_path: &Path) -> Result<(Dataset, FeatureStore)> {
    let dataset = read_dataset(triplet_path)?;
    let features = load_features(feature_path)?;
    dataset.check_links(&features)?;
    Ok((dataset, features))
}
