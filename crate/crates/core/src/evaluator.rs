//! Prediction, accuracy metrics, transfer evaluation, the inference
//! benchmark and answer-embedding export.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{AnswerVocabulary, Dataset, FeatureStore, Triplet, WordEmbeddingTable};
use crate::encoders::{encode_answer, encode_iq};
use crate::error::{Error, Result};
use crate::model::{Family, Model, ModelParams};
use crate::numerics::dot;

/// Precomputed `g(a)` for a fixed list of answers.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerIndex {
    answers: Vec<String>,
    embeddings: Vec<Vec<f64>>,
}

impl AnswerIndex {
    pub fn new(answers: Vec<String>, embeddings: Vec<Vec<f64>>) -> Result<Self> {
        if answers.len() != embeddings.len() {
            return Err(Error::Argument(format!(
                "{} answers but {} embeddings",
                answers.len(),
                embeddings.len()
            )));
        }
        if let Some(first) = embeddings.first() {
            if embeddings.iter().any(|e| e.len() != first.len()) {
                return Err(Error::Argument("answer embeddings differ in length".into()));
            }
        }
        Ok(Self { answers, embeddings })
    }

    pub fn answers(&self) -> &[String] {
        &self.answers
    }

    pub fn embeddings(&self) -> &[Vec<f64>] {
        &self.embeddings
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }
}

/// Embeds every answer once. Only factorized models have an answer tower.
pub fn precompute_answer_index(model: &Model, answers: &[String], table: &WordEmbeddingTable) -> Result<AnswerIndex> {
    let ModelParams::Fpmc { g, .. } = &model.params else {
        return Err(Error::Family(format!(
            "a {} checkpoint has no factorized answer index",
            model.family()
        )));
    };
    let embeddings = answers
        .iter()
        .map(|a| encode_answer(a, g, table))
        .collect::<Result<Vec<_>>>()?;
    AnswerIndex::new(answers.to_vec(), embeddings)
}

/// Index of the first maximum.
fn argmax(scores: impl IntoIterator<Item = f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.into_iter().enumerate() {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best
}

/// Highest-scoring index answer; ties go to the earliest entry.
pub fn predict_open_ended<S: AsRef<str>>(
    model: &Model,
    index: &AnswerIndex,
    image_feat: &[f64],
    question: &[S],
    table: &WordEmbeddingTable,
) -> Result<(String, f64)> {
    let ModelParams::Fpmc { f, .. } = &model.params else {
        return Err(Error::Family(format!("{} models cannot use an answer index", model.family())));
    };
    let query = encode_iq(image_feat, question, f, table)?;
    let (i, score) = argmax(index.embeddings.iter().map(|g| dot(&query, g)))
        .ok_or_else(|| Error::Argument("answer index is empty".into()))?;
    Ok((index.answers[i].clone(), score))
}

/// Chosen candidate position. Classifiers only score candidates among their
/// classes and fall back to the first candidate when none is.
pub fn predict_mc<S: AsRef<str>>(
    model: &Model,
    image_feat: &[f64],
    question: &[S],
    candidates: &[&str],
    table: &WordEmbeddingTable,
) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::Argument("no candidates to choose from".into()));
    }
    let scores = model.score_candidates(image_feat, question, candidates, table)?;
    let best = argmax(
        scores
            .iter()
            .map(|s| s.unwrap_or(f64::NEG_INFINITY)),
    );
    Ok(match best {
        Some((i, _)) if scores[i].is_some() => i,
        _ => 0,
    })
}

/// Consensus accuracy `min(1, matches / 3)`.
pub fn vqa_accuracy<S: AsRef<str>>(predicted: &str, annotations: &[S]) -> f64 {
    let matches = annotations.iter().filter(|a| a.as_ref() == predicted).count();
    matches.min(3) as f64 / 3.0
}

/// Number of annotations at which open-ended scoring switches from exact
/// match on the dominant answer to the consensus metric.
pub const CONSENSUS_ANNOTATIONS: usize = 10;

/// Open-ended credit for one record.
pub fn open_ended_credit(predicted: &str, triplet: &Triplet) -> f64 {
    if triplet.correct.len() == CONSENSUS_ANNOTATIONS {
        vqa_accuracy(predicted, &triplet.correct)
    } else if predicted == triplet.dominant_answer() {
        1.0
    } else {
        0.0
    }
}

const MC_ORDER_SEED: u64 = 0x6d63_5f6f_7264_6572;

/// Multiple-choice candidates of record `index` in presentation order: the
/// distinct correct and the incorrect answers, shuffled by a generator
/// seeded from the record index so the file order of correct answers
/// carries no signal.
pub fn mc_candidates(triplet: &Triplet, index: usize) -> Vec<&str> {
    let mut c = triplet.candidates();
    let mut rng = ChaCha8Rng::seed_from_u64(MC_ORDER_SEED ^ index as u64);
    c.shuffle(&mut rng);
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    OpenEnded,
    MultipleChoice,
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "open_ended" | "open-ended" | "oe" => Ok(Self::OpenEnded),
            "multiple_choice" | "multiple-choice" | "mc" => Ok(Self::MultipleChoice),
            _ => Err(Error::Argument(format!("unknown mode `{s}` (open_ended|multiple_choice)"))),
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::OpenEnded => "open_ended",
            Self::MultipleChoice => "multiple_choice",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub record_id: usize,
    pub prediction: String,
    /// Credit in `[0, 1]`; 0 or 1 except for consensus scoring.
    pub credit: f64,
    pub seen: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupScore {
    pub records: usize,
    pub accuracy: f64,
}

impl GroupScore {
    fn from_sum(sum: f64, records: usize) -> Self {
        Self {
            records,
            accuracy: if records == 0 { 0.0 } else { sum / records as f64 },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub overall: GroupScore,
    pub per_type: BTreeMap<String, GroupScore>,
    pub seen: Option<GroupScore>,
    pub unseen: Option<GroupScore>,
    pub predictions: Vec<Prediction>,
}

impl EvalReport {
    fn from_predictions(mode: EvalMode, dataset: &Dataset, predictions: Vec<Prediction>) -> Self {
        let total: f64 = predictions.iter().map(|p| p.credit).sum();
        let overall = GroupScore::from_sum(total, predictions.len());
        let mut by_type: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for p in &predictions {
            if let Some(t) = &dataset.triplets[p.record_id].question_type {
                let e = by_type.entry(t.clone()).or_default();
                e.0 += p.credit;
                e.1 += 1;
            }
        }
        let per_type = by_type
            .into_iter()
            .map(|(k, (s, n))| (k, GroupScore::from_sum(s, n)))
            .collect();
        let group = |want: bool| {
            let (s, n) = predictions
                .iter()
                .filter(|p| p.seen == Some(want))
                .fold((0.0, 0), |(s, n), p| (s + p.credit, n + 1));
            GroupScore::from_sum(s, n)
        };
        let tagged = predictions.iter().any(|p| p.seen.is_some());
        Self {
            mode,
            overall,
            per_type,
            seen: tagged.then(|| group(true)),
            unseen: tagged.then(|| group(false)),
            predictions,
        }
    }

    /// Key/value summary followed by a per-group table.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mode {}", self.mode);
        let _ = writeln!(s, "records {}", self.overall.records);
        let _ = writeln!(s, "accuracy {}", self.overall.accuracy);
        s.push_str("group\trecords\taccuracy\n");
        let _ = writeln!(s, "all\t{}\t{}", self.overall.records, self.overall.accuracy);
        for (name, g) in [("seen", self.seen), ("unseen", self.unseen)] {
            if let Some(g) = g {
                let _ = writeln!(s, "{name}\t{}\t{}", g.records, g.accuracy);
            }
        }
        for (t, g) in &self.per_type {
            let _ = writeln!(s, "type:{t}\t{}\t{}", g.records, g.accuracy);
        }
        s
    }

    /// `record_id,prediction,correct_flag,seen_flag`; the seen flag is empty
    /// outside transfer runs.
    pub fn predictions_csv(&self) -> String {
        let mut s = String::from("record_id,prediction,correct_flag,seen_flag\n");
        for p in &self.predictions {
            let seen = match p.seen {
                Some(true) => "1",
                Some(false) => "0",
                None => "",
            };
            let _ = writeln!(s, "{},{},{},{}", p.record_id, csv_field(&p.prediction), p.credit, seen);
        }
        s
    }
}

fn csv_field(v: &str) -> String {
    if v.contains([',', '"', '\n']) {
        format!("\"{}\"", v.replace('"', "\"\""))
    } else {
        v.to_string()
    }
}

fn feature<'a>(features: &'a FeatureStore, t: &Triplet) -> Result<&'a [f64]> {
    features
        .get(&t.image_id)
        .ok_or_else(|| Error::Link(vec![t.image_id.clone()]))
}

/// Scores every record. `universe` is the open-ended candidate set and is
/// ignored in multiple-choice mode.
pub fn evaluate(
    model: &Model,
    dataset: &Dataset,
    features: &FeatureStore,
    table: &WordEmbeddingTable,
    mode: EvalMode,
    universe: &[String],
) -> Result<EvalReport> {
    evaluate_tagged(model, dataset, features, table, mode, universe, None)
}

fn evaluate_tagged(
    model: &Model,
    dataset: &Dataset,
    features: &FeatureStore,
    table: &WordEmbeddingTable,
    mode: EvalMode,
    universe: &[String],
    source: Option<&AnswerVocabulary>,
) -> Result<EvalReport> {
    dataset.check_links(features)?;
    let seen_of = |t: &Triplet| source.map(|v| t.candidates().iter().any(|a| v.contains(a)));
    let mut predictions = Vec::with_capacity(dataset.len());
    match mode {
        EvalMode::MultipleChoice => {
            if let Some(i) = dataset.triplets.iter().position(|t| t.incorrect.is_empty()) {
                return Err(Error::Argument(format!(
                    "multiple-choice evaluation needs incorrect answers; record {i} has none"
                )));
            }
            for (i, t) in dataset.triplets.iter().enumerate() {
                let candidates = mc_candidates(t, i);
                let choice = predict_mc(model, feature(features, t)?, &t.question, &candidates, table)?;
                let prediction = candidates[choice].to_string();
                predictions.push(Prediction {
                    record_id: i,
                    credit: if t.is_correct(&prediction) { 1.0 } else { 0.0 },
                    prediction,
                    seen: seen_of(t),
                });
            }
        }
        EvalMode::OpenEnded => {
            if universe.is_empty() {
                return Err(Error::Argument("open-ended evaluation needs a non-empty candidate universe".into()));
            }
            let index = match model.family() {
                Family::Fpmc => Some(precompute_answer_index(model, universe, table)?),
                _ => None,
            };
            let refs: Vec<&str> = universe.iter().map(String::as_str).collect();
            for (i, t) in dataset.triplets.iter().enumerate() {
                let feat = feature(features, t)?;
                let prediction = match &index {
                    Some(index) => predict_open_ended(model, index, feat, &t.question, table)?.0,
                    None => universe[predict_mc(model, feat, &t.question, &refs, table)?].clone(),
                };
                predictions.push(Prediction {
                    record_id: i,
                    credit: open_ended_credit(&prediction, t),
                    prediction,
                    seen: seen_of(t),
                });
            }
        }
    }
    Ok(EvalReport::from_predictions(mode, dataset, predictions))
}

/// Evaluates a model trained elsewhere on `target` without retraining,
/// tagging each record seen when any of its candidates is in
/// `source_vocab`. Open-ended candidates are `source_vocab` followed by the
/// target answers it lacks.
pub fn transfer_evaluate(
    model: &Model,
    source_vocab: &AnswerVocabulary,
    target: &Dataset,
    features: &FeatureStore,
    table: &WordEmbeddingTable,
    mode: EvalMode,
) -> Result<EvalReport> {
    let answers = target.all_answers();
    let universe = source_vocab.union_with(answers.iter().map(String::as_str));
    evaluate_tagged(
        model,
        target,
        features,
        table,
        mode,
        universe.answers(),
        Some(source_vocab),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timing {
    pub mean_ms: f64,
    pub std_ms: f64,
}

impl Timing {
    fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean_ms: mean,
            std_ms: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub vocab_size: usize,
    pub batch_size: usize,
    pub repetitions: usize,
    pub fpmc: Timing,
    pub upmc: Timing,
}

impl BenchmarkReport {
    /// How many times faster the factorized path is.
    pub fn ratio(&self) -> f64 {
        self.upmc.mean_ms / self.fpmc.mean_ms
    }

    pub fn to_text(&self) -> String {
        format!(
            "vocab_size {}\nbatch_size {}\nrepetitions {}\nfpmc_ms {} +- {}\nupmc_ms {} +- {}\nratio {}\n",
            self.vocab_size,
            self.batch_size,
            self.repetitions,
            self.fpmc.mean_ms,
            self.fpmc.std_ms,
            self.upmc.mean_ms,
            self.upmc.std_ms,
            self.ratio()
        )
    }
}

/// Mean per-batch wall time of open-ended scoring of `batch_size` random
/// queries against `vocab_size` answers, for a factorized and an
/// unfactorized model. Answer strings are pairs of table tokens; index
/// construction and query generation are outside the timed region, and one
/// warm-up batch precedes timing.
pub fn benchmark_inference(
    fpmc: &Model,
    upmc: &Model,
    table: &WordEmbeddingTable,
    vocab_size: usize,
    batch_size: usize,
    repetitions: usize,
    seed: u64,
) -> Result<BenchmarkReport> {
    if fpmc.family() != Family::Fpmc || upmc.family() != Family::Upmc {
        return Err(Error::Family("benchmark needs an fpmc and a upmc model".into()));
    }
    if fpmc.feature_dim() != upmc.feature_dim() {
        return Err(Error::Argument("benchmark models disagree on feature dim".into()));
    }
    if vocab_size == 0 || batch_size == 0 || repetitions == 0 || table.is_empty() {
        return Err(Error::Argument("benchmark sizes must be positive and the table non-empty".into()));
    }
    let tokens = table.tokens();
    let answers: Vec<String> = (0..vocab_size)
        .map(|i| {
            let (a, b) = (i % tokens.len(), (i / tokens.len()) % tokens.len());
            format!("{} {} {}", tokens[a], tokens[b], i)
        })
        .collect();
    let refs: Vec<&str> = answers.iter().map(String::as_str).collect();
    let index = precompute_answer_index(fpmc, &answers, table)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = fpmc.feature_dim();
    let queries: Vec<(Vec<f64>, Vec<&str>)> = (0..batch_size)
        .map(|_| {
            let feat = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let q = (0..4).map(|_| tokens[rng.gen_range(0..tokens.len())].as_str()).collect();
            (feat, q)
        })
        .collect();

    let run_fpmc = || -> Result<f64> {
        let start = Instant::now();
        for (feat, q) in &queries {
            std::hint::black_box(predict_open_ended(fpmc, &index, feat, q, table)?);
        }
        Ok(start.elapsed().as_secs_f64() * 1e3)
    };
    let run_upmc = || -> Result<f64> {
        let start = Instant::now();
        for (feat, q) in &queries {
            std::hint::black_box(predict_mc(upmc, feat, q, &refs, table)?);
        }
        Ok(start.elapsed().as_secs_f64() * 1e3)
    };
    run_fpmc()?;
    run_upmc()?;
    let mut f_samples = Vec::with_capacity(repetitions);
    let mut u_samples = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        f_samples.push(run_fpmc()?);
        u_samples.push(run_upmc()?);
    }
    Ok(BenchmarkReport {
        vocab_size,
        batch_size,
        repetitions,
        fpmc: Timing::from_samples(&f_samples),
        upmc: Timing::from_samples(&u_samples),
    })
}

/// One `answer<TAB>v1 ... vE` line per index entry, reals in shortest
/// round-trip form.
pub fn format_embedding_export(index: &AnswerIndex) -> String {
    let mut s = String::new();
    for (a, e) in index.answers.iter().zip(&index.embeddings) {
        s.push_str(a);
        s.push('\t');
        for (k, v) in e.iter().enumerate() {
            if k > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{v:e}");
        }
        s.push('\n');
    }
    s
}

pub fn parse_embedding_export<R: BufRead>(reader: R, source: &str) -> Result<AnswerIndex> {
    let mut answers = Vec::new();
    let mut embeddings: Vec<Vec<f64>> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| Error::format(source, n, e.to_string()))?;
        if line.is_empty() {
            continue;
        }
        let (answer, values) = line
            .split_once('\t')
            .ok_or_else(|| Error::format(source, n, "expected `answer<TAB>values`"))?;
        if answer.is_empty() {
            return Err(Error::format(source, n, "empty answer"));
        }
        let v = values
            .split_whitespace()
            .map(|t| t.parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| Error::format(source, n, "bad real value"))?;
        if v.is_empty() {
            return Err(Error::format(source, n, "no values"));
        }
        if let Some(first) = embeddings.first() {
            if first.len() != v.len() {
                return Err(Error::format(
                    source,
                    n,
                    format!("expected {} values, found {}", first.len(), v.len()),
                ));
            }
        }
        if answers.iter().any(|a| a == answer) {
            return Err(Error::format(source, n, format!("duplicate answer `{answer}`")));
        }
        answers.push(answer.to_string());
        embeddings.push(v);
    }
    AnswerIndex::new(answers, embeddings)
}

/// Writes the answer index of `answers` to `path`.
pub fn export_embeddings(model: &Model, answers: &[String], table: &WordEmbeddingTable, path: &Path) -> Result<AnswerIndex> {
    let index = precompute_answer_index(model, answers, table)?;
    std::fs::write(path, format_embedding_export(&index)).map_err(|e| Error::io(path, e))?;
    Ok(index)
}
