use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::dataset::{write_triplets, Dataset, Split, Triplet};
use super::embeddings::{write_word_embeddings, WordEmbeddingTable};
use super::features::{write_features, FeatureStore};
use super::vocab::build_answer_vocabulary;
use crate::error::{Error, Result};

const QUESTION_TYPES: [&str; 3] = ["what", "which", "describe"];

/// Shape of a generated source/target corpus pair.
///
/// Every answer is a phrase with one word per latent attribute. An image
/// feature is the sum of one random prototype per attribute value plus
/// Gaussian noise, so the answer is recoverable from the image, and answers
/// unseen in the source are still built from words the source has used.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub attributes: usize,
    pub values_per_attribute: usize,
    /// Synonymous surface words per attribute value.
    pub words_per_value: usize,
    pub word_dim: usize,
    pub feature_dim: usize,
    pub train_answers: usize,
    pub target_answers: usize,
    /// Fraction of target answers drawn from the train answers.
    pub overlap: f64,
    pub train_records: usize,
    pub target_records: usize,
    pub incorrect_per_record: usize,
    pub annotations_per_record: usize,
    pub feature_noise: f64,
    pub filler_words: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            attributes: 2,
            values_per_attribute: 8,
            words_per_value: 1,
            word_dim: 16,
            feature_dim: 32,
            train_answers: 40,
            target_answers: 40,
            overlap: 0.5,
            train_records: 2000,
            target_records: 1000,
            incorrect_per_record: 3,
            annotations_per_record: 1,
            feature_noise: 0.3,
            filler_words: 12,
        }
    }
}

impl SynthSpec {
    fn seen_target_answers(&self) -> usize {
        (self.overlap * self.target_answers as f64).round() as usize
    }

    fn combo_count(&self) -> Option<usize> {
        let mut n: usize = 1;
        for _ in 0..self.attributes {
            n = n.checked_mul(self.values_per_attribute)?;
        }
        Some(n)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.overlap) {
            return Err(Error::Argument(format!(
                "overlap fraction {} outside [0, 1]",
                self.overlap
            )));
        }
        let positive = [
            ("attributes", self.attributes),
            ("values_per_attribute", self.values_per_attribute),
            ("words_per_value", self.words_per_value),
            ("word_dim", self.word_dim),
            ("feature_dim", self.feature_dim),
            ("train_answers", self.train_answers),
            ("target_answers", self.target_answers),
            ("train_records", self.train_records),
            ("target_records", self.target_records),
            ("annotations_per_record", self.annotations_per_record),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Argument(format!("{name} must be positive")));
        }
        if !(self.feature_noise >= 0.0) {
            return Err(Error::Argument("feature_noise must be non-negative".into()));
        }
        let seen = self.seen_target_answers();
        let unseen = self.target_answers - seen;
        let universe = self
            .combo_count()
            .filter(|&n| n <= 1 << 24)
            .ok_or_else(|| Error::Argument("answer space too large".into()))?;
        if self.train_answers + unseen > universe {
            return Err(Error::Argument(format!(
                "{} train answers plus {unseen} unseen target answers exceed the {universe} possible answers",
                self.train_answers
            )));
        }
        if seen > self.train_answers {
            return Err(Error::Argument(
                "more overlapping target answers than train answers".into(),
            ));
        }
        if self.incorrect_per_record >= self.train_answers.min(self.target_answers) {
            return Err(Error::Argument(
                "not enough answers to draw the incorrect choices from".into(),
            ));
        }
        Ok(())
    }
}

/// Generated corpus. `features` covers the images of both datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub train: Dataset,
    pub target: Dataset,
    pub table: WordEmbeddingTable,
    pub features: FeatureStore,
    /// Per target record: does any candidate occur in the train vocabulary.
    pub target_seen: Vec<bool>,
}

impl SyntheticCorpus {
    pub const TRAIN_FILE: &'static str = "train.tsv";
    pub const TARGET_FILE: &'static str = "target.tsv";
    pub const FEATURE_FILE: &'static str = "features.txt";
    pub const WORD_FILE: &'static str = "words.txt";

    /// Writes the four corpus files into `dir` and returns their paths.
    pub fn write_files(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            (Self::TRAIN_FILE, write_triplets(&self.train)),
            (Self::TARGET_FILE, write_triplets(&self.target)),
            (Self::FEATURE_FILE, write_features(&self.features)),
            (Self::WORD_FILE, write_word_embeddings(&self.table)),
        ];
        let mut out = Vec::new();
        for (name, body) in files {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            out.push(path);
        }
        Ok(out)
    }
}

fn gaussian(rng: &mut ChaCha8Rng, len: usize, std: f64) -> Vec<f64> {
    (0..len)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn word(attribute: usize, value: usize, synonym: usize) -> String {
    format!("a{attribute}v{value}s{synonym}")
}

struct Generator<'a> {
    spec: &'a SynthSpec,
    rng: ChaCha8Rng,
    prototypes: Vec<Vec<Vec<f64>>>,
}

impl Generator<'_> {
    fn phrase(&mut self, combo: &[usize], canonical: bool) -> String {
        let words: Vec<String> = combo
            .iter()
            .enumerate()
            .map(|(a, &v)| {
                let s = if canonical || self.spec.words_per_value == 1 {
                    0
                } else {
                    self.rng.gen_range(0..self.spec.words_per_value)
                };
                word(a, v, s)
            })
            .collect();
        words.join(" ")
    }

    fn feature(&mut self, combo: &[usize]) -> Vec<f64> {
        let mut f = gaussian(&mut self.rng, self.spec.feature_dim, self.spec.feature_noise);
        for (a, &v) in combo.iter().enumerate() {
            for (x, p) in f.iter_mut().zip(&self.prototypes[a][v]) {
                *x += p;
            }
        }
        f
    }

    fn record(
        &mut self,
        image_id: String,
        combo: &[usize],
        pool: &[Vec<usize>],
        fallback: &[Vec<usize>],
    ) -> (Triplet, Vec<f64>) {
        let feature = self.feature(combo);
        let correct: Vec<String> = (0..self.spec.annotations_per_record)
            .map(|k| self.phrase(combo, k == 0))
            .collect();
        let source = if pool.len() > self.spec.incorrect_per_record {
            pool
        } else {
            fallback
        };
        let others: Vec<&Vec<usize>> = source.iter().filter(|c| c.as_slice() != combo).collect();
        let incorrect: Vec<String> = others
            .choose_multiple(&mut self.rng, self.spec.incorrect_per_record)
            .map(|c| c.iter().enumerate().map(|(a, &v)| word(a, v, 0)).collect::<Vec<_>>().join(" "))
            .collect();
        let qtype = QUESTION_TYPES[self.rng.gen_range(0..QUESTION_TYPES.len())];
        let mut question = vec![qtype.to_string()];
        for _ in 0..2 {
            question.push(format!("f{}", self.rng.gen_range(0..self.spec.filler_words.max(1))));
        }
        let triplet = Triplet {
            image_id,
            question,
            correct,
            incorrect,
            question_type: Some(qtype.to_string()),
        };
        (triplet, feature)
    }
}

/// Deterministic corpus generation: identical `(spec, seed)` yields
/// identical output.
pub fn generate_synthetic(spec: &SynthSpec, seed: u64) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut table = WordEmbeddingTable::new(spec.word_dim)?;
    for a in 0..spec.attributes {
        for v in 0..spec.values_per_attribute {
            let proto = gaussian(&mut rng, spec.word_dim, 0.5);
            for s in 0..spec.words_per_value {
                let jitter = gaussian(&mut rng, spec.word_dim, 0.05);
                let vec: Vec<f64> = proto.iter().zip(&jitter).map(|(p, j)| p + j).collect();
                table.insert(&word(a, v, s), &vec)?;
            }
        }
    }
    for qtype in QUESTION_TYPES {
        table.insert(qtype, &gaussian(&mut rng, spec.word_dim, 0.5))?;
    }
    for k in 0..spec.filler_words {
        table.insert(&format!("f{k}"), &gaussian(&mut rng, spec.word_dim, 0.5))?;
    }

    let prototypes: Vec<Vec<Vec<f64>>> = (0..spec.attributes)
        .map(|_| {
            (0..spec.values_per_attribute)
                .map(|_| gaussian(&mut rng, spec.feature_dim, 1.0))
                .collect()
        })
        .collect();

    let universe = spec.combo_count().expect("validated");
    let mut combos: Vec<Vec<usize>> = (0..universe)
        .map(|mut n| {
            (0..spec.attributes)
                .map(|_| {
                    let v = n % spec.values_per_attribute;
                    n /= spec.values_per_attribute;
                    v
                })
                .collect()
        })
        .collect();
    combos.shuffle(&mut rng);

    let seen_count = spec.seen_target_answers();
    let unseen_count = spec.target_answers - seen_count;
    let train_set: Vec<Vec<usize>> = combos[..spec.train_answers].to_vec();
    let unseen_set: Vec<Vec<usize>> =
        combos[spec.train_answers..spec.train_answers + unseen_count].to_vec();
    let mut seen_set = train_set.clone();
    seen_set.shuffle(&mut rng);
    seen_set.truncate(seen_count);
    let target_set: Vec<Vec<usize>> = seen_set.iter().chain(&unseen_set).cloned().collect();

    let mut gen = Generator {
        spec,
        rng,
        prototypes,
    };
    let mut features = FeatureStore::new(spec.feature_dim)?;

    let mut train_order: Vec<usize> = (0..spec.train_records).map(|n| n % spec.train_answers).collect();
    train_order.shuffle(&mut gen.rng);
    let mut train = Vec::with_capacity(spec.train_records);
    for (n, &c) in train_order.iter().enumerate() {
        let id = format!("train-{n:06}");
        let (t, f) = gen.record(id.clone(), &train_set[c], &train_set, &train_set);
        features.insert(&id, &f)?;
        train.push(t);
    }

    let mut target_order: Vec<usize> =
        (0..spec.target_records).map(|n| n % spec.target_answers).collect();
    target_order.shuffle(&mut gen.rng);
    let mut target = Vec::with_capacity(spec.target_records);
    for (n, &c) in target_order.iter().enumerate() {
        let id = format!("target-{n:06}");
        let pool = if c < seen_count { &seen_set } else { &unseen_set };
        let (t, f) = gen.record(id.clone(), &target_set[c], pool, &target_set);
        features.insert(&id, &f)?;
        target.push(t);
    }

    let train = Dataset::new("synthetic-train", Split::Train, train);
    let target = Dataset::new("synthetic-target", Split::Test, target);
    let train_vocab = build_answer_vocabulary(&train, None)?;
    let known: HashSet<&str> = train_vocab.answers().iter().map(String::as_str).collect();
    let target_seen = target
        .triplets
        .iter()
        .map(|t| t.candidates().iter().any(|a| known.contains(a)))
        .collect();

    Ok(SyntheticCorpus {
        train,
        target,
        table,
        features,
        target_seen,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            train_records: 120,
            target_records: 80,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn full_overlap_has_no_unseen_answers() {
        let spec = SynthSpec {
            overlap: 1.0,
            ..small()
        };
        let c = generate_synthetic(&spec, 1).unwrap();
        let train_vocab = build_answer_vocabulary(&c.train, None).unwrap();
        let target_vocab = build_answer_vocabulary(&c.target, None).unwrap();
        assert!(target_vocab.answers().iter().all(|a| train_vocab.contains(a)));
        assert!(c.target_seen.iter().all(|&s| s));
    }

    #[test]
    fn half_overlap_leaves_half_unseen() {
        let c = generate_synthetic(&small(), 2).unwrap();
        let train_vocab = build_answer_vocabulary(&c.train, None).unwrap();
        let target_vocab = build_answer_vocabulary(&c.target, None).unwrap();
        assert_eq!(target_vocab.len(), 40);
        let absent = target_vocab
            .answers()
            .iter()
            .filter(|a| !train_vocab.contains(a))
            .count();
        assert_eq!(absent, 20);
    }

    #[test]
    fn deterministic_in_seed() {
        let a = generate_synthetic(&small(), 5).unwrap();
        let b = generate_synthetic(&small(), 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(write_features(&a.features), write_features(&b.features));
        let c = generate_synthetic(&small(), 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn records_are_well_formed() {
        let c = generate_synthetic(&small(), 3).unwrap();
        for t in c.train.triplets.iter().chain(&c.target.triplets) {
            t.validate().unwrap();
            assert_eq!(t.incorrect.len(), 3);
            assert!(c.features.get(&t.image_id).is_some());
            for tok in &t.question {
                assert!(c.table.get(tok).is_some());
            }
            for a in t.candidates() {
                for w in a.split(' ') {
                    assert!(c.table.get(w).is_some());
                }
            }
        }
    }

    #[test]
    fn rejects_bad_overlap() {
        for overlap in [-0.1, 1.5] {
            let spec = SynthSpec { overlap, ..small() };
            assert!(matches!(generate_synthetic(&spec, 0), Err(Error::Argument(_))));
        }
    }

    #[test]
    fn synonyms_yield_annotation_variants() {
        let spec = SynthSpec {
            words_per_value: 3,
            annotations_per_record: 10,
            ..small()
        };
        let c = generate_synthetic(&spec, 4).unwrap();
        let t = &c.train.triplets[0];
        assert_eq!(t.correct.len(), 10);
        assert!(t.distinct_correct().len() > 1);
    }
}
