use std::collections::{HashMap, HashSet};

use super::dataset::Dataset;
use crate::error::{Error, Result};

/// The answer universe: a frequency-ranked block of correct answers
/// followed by any incorrect answers not already ranked.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerVocabulary {
    answers: Vec<String>,
    frequency: Vec<u64>,
    ranked_len: usize,
    index: HashMap<String, usize>,
}

impl AnswerVocabulary {
    /// Builds a vocabulary from explicit parts, e.g. a checkpoint snapshot.
    pub fn from_parts(answers: Vec<String>, frequency: Vec<u64>, ranked_len: usize) -> Result<Self> {
        if answers.len() != frequency.len() || ranked_len > answers.len() {
            return Err(Error::Argument("vocabulary parts have inconsistent lengths".into()));
        }
        let mut index = HashMap::with_capacity(answers.len());
        for (i, a) in answers.iter().enumerate() {
            if index.insert(a.clone(), i).is_some() {
                return Err(Error::Argument(format!("duplicate answer `{a}` in vocabulary")));
            }
        }
        Ok(Self {
            answers,
            frequency,
            ranked_len,
            index,
        })
    }

    /// Vocabulary over an explicit answer list (all treated as ranked,
    /// frequency zero), e.g. a caller-provided candidate universe.
    pub fn from_answers<I: IntoIterator<Item = String>>(answers: I) -> Result<Self> {
        let answers: Vec<String> = answers.into_iter().collect();
        let n = answers.len();
        Self::from_parts(answers, vec![0; n], n)
    }

    pub fn answers(&self) -> &[String] {
        &self.answers
    }

    pub fn frequency(&self) -> &[u64] {
        &self.frequency
    }

    /// Number of leading entries that came from the ranked correct answers.
    pub fn ranked_len(&self) -> usize {
        self.ranked_len
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    pub fn position(&self, answer: &str) -> Option<usize> {
        self.index.get(answer).copied()
    }

    pub fn contains(&self, answer: &str) -> bool {
        self.index.contains_key(answer)
    }

    /// The first `k` answers (clipped to the vocabulary size).
    pub fn top(&self, k: usize) -> &[String] {
        &self.answers[..k.min(self.answers.len())]
    }

    /// This vocabulary followed by every answer of `extra` it lacks, in
    /// `extra`'s order.
    pub fn union_with<'a, I: IntoIterator<Item = &'a str>>(&self, extra: I) -> Self {
        let mut answers = self.answers.clone();
        let mut frequency = self.frequency.clone();
        let mut index = self.index.clone();
        for a in extra {
            if !index.contains_key(a) {
                index.insert(a.to_string(), answers.len());
                answers.push(a.to_string());
                frequency.push(0);
            }
        }
        Self {
            answers,
            frequency,
            ranked_len: self.ranked_len,
            index,
        }
    }
}

fn ranked(counts: HashMap<&str, u64>) -> Vec<(String, u64)> {
    let mut v: Vec<(String, u64)> = counts.into_iter().map(|(a, c)| (a.to_string(), c)).collect();
    v.sort_by(|(a, ca), (b, cb)| cb.cmp(ca).then_with(|| a.cmp(b)));
    v
}

/// Ranks correct answers by descending count (ties: ascending string),
/// truncates to `top_k`, then appends incorrect answers not yet present,
/// ranked the same way by their count in the incorrect sets.
pub fn build_answer_vocabulary(dataset: &Dataset, top_k: Option<usize>) -> Result<AnswerVocabulary> {
    if dataset.is_empty() {
        return Err(Error::Argument("cannot build a vocabulary from an empty dataset".into()));
    }
    if top_k == Some(0) {
        return Err(Error::Argument("top_k must be positive".into()));
    }
    let mut correct: HashMap<&str, u64> = HashMap::new();
    let mut incorrect: HashMap<&str, u64> = HashMap::new();
    for t in &dataset.triplets {
        for a in &t.correct {
            *correct.entry(a).or_default() += 1;
        }
        for a in &t.incorrect {
            *incorrect.entry(a).or_default() += 1;
        }
    }
    let mut block = ranked(correct);
    if let Some(k) = top_k {
        block.truncate(k);
    }
    let ranked_len = block.len();
    let present: HashSet<String> = block.iter().map(|(a, _)| a.clone()).collect();
    incorrect.retain(|a, _| !present.contains(*a));
    block.extend(ranked(incorrect));
    let (answers, frequency) = block.into_iter().unzip();
    AnswerVocabulary::from_parts(answers, frequency, ranked_len)
}

/// Size of the intersection of two vocabularies' top-`k` answer sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlapStats {
    pub per_k: Vec<(usize, usize)>,
    pub full: usize,
}

pub fn answer_overlap_stats(a: &AnswerVocabulary, b: &AnswerVocabulary, ks: &[usize]) -> OverlapStats {
    let common = |k: usize| {
        let left: HashSet<&str> = a.top(k).iter().map(String::as_str).collect();
        b.top(k).iter().filter(|x| left.contains(x.as_str())).count()
    };
    OverlapStats {
        per_k: ks.iter().map(|&k| (k, common(k))).collect(),
        full: common(usize::MAX),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Split, Triplet};

    fn ds(records: &[(&[&str], &[&str])]) -> Dataset {
        let triplets = records
            .iter()
            .enumerate()
            .map(|(i, (c, d))| Triplet::new(format!("i{i}"), "q", c, d).unwrap())
            .collect();
        Dataset::new("t", Split::Train, triplets)
    }

    fn vocab(answers: &[&str]) -> AnswerVocabulary {
        AnswerVocabulary::from_answers(answers.iter().map(|s| s.to_string())).unwrap()
    }

    #[test]
    fn orders_by_frequency() {
        let v = build_answer_vocabulary(&ds(&[(&["a", "a", "b"], &[]), (&["a"], &[])]), None).unwrap();
        assert_eq!(v.answers(), &["a", "b"]);
        assert_eq!(v.frequency(), &[3, 1]);
    }

    #[test]
    fn ties_break_lexicographically() {
        let v = build_answer_vocabulary(&ds(&[(&["b", "a"], &[]), (&["b", "a"], &[])]), None).unwrap();
        assert_eq!(v.answers(), &["a", "b"]);
    }

    #[test]
    fn truncates_then_appends_incorrect() {
        let v = build_answer_vocabulary(
            &ds(&[(&["a", "a", "a", "b", "b", "c"], &["d"])]),
            Some(2),
        )
        .unwrap();
        assert_eq!(v.answers(), &["a", "b", "d"]);
        assert_eq!(v.ranked_len(), 2);
        assert_eq!(v.frequency(), &[3, 2, 1]);
    }

    #[test]
    fn incorrect_already_ranked_is_not_duplicated() {
        let v = build_answer_vocabulary(&ds(&[(&["a"], &["b"]), (&["b"], &["a"])]), None).unwrap();
        assert_eq!(v.answers(), &["a", "b"]);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(build_answer_vocabulary(&ds(&[(&["a"], &[])]), Some(0)).is_err());
        assert!(build_answer_vocabulary(&Dataset::new("e", Split::Train, vec![]), None).is_err());
    }

    #[test]
    fn overlap_examples() {
        let v = vocab(&["a", "b", "c", "d", "e"]);
        assert_eq!(answer_overlap_stats(&v, &v, &[3]).per_k, vec![(3, 3)]);
        let w = vocab(&["p", "q"]);
        assert_eq!(answer_overlap_stats(&v, &w, &[100]).per_k, vec![(100, 0)]);
        let x = vocab(&["x", "y", "z"]);
        let y = vocab(&["y", "w", "x"]);
        let stats = answer_overlap_stats(&x, &y, &[2]);
        assert_eq!(stats.per_k, vec![(2, 1)]);
        assert_eq!(stats.full, 2);
    }

    #[test]
    fn union_appends_missing() {
        let v = vocab(&["a", "b"]).union_with(["b", "c"]);
        assert_eq!(v.answers(), &["a", "b", "c"]);
        assert_eq!(v.position("c"), Some(2));
    }
}
