//! The compatibility posterior, the weighted negative log-likelihood and
//! per-batch candidate universes.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::corpus::{AnswerVocabulary, SimilarityTable, Triplet};
use crate::error::{Error, Result};
use crate::numerics::dot;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    /// Correct for some triplet of the batch.
    BatchPositive,
    /// Appears in the batch only as an incorrect answer.
    BatchNegative,
    /// Drawn from the vocabulary complement.
    Sampled,
}

/// Candidate answers of one batch: the batch union followed by sampled
/// negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniUniverse {
    answers: Vec<String>,
    origins: Vec<Origin>,
    in_batch_count: usize,
    index: HashMap<String, usize>,
}

impl MiniUniverse {
    /// A universe over an explicit answer list, every entry counted as
    /// in-batch. Duplicates are an error.
    pub fn from_answers<I: IntoIterator<Item = String>>(answers: I) -> Result<Self> {
        let mut u = Self::empty();
        for a in answers {
            if !u.push(a.clone(), Origin::BatchPositive) {
                return Err(Error::Argument(format!("duplicate answer `{a}` in universe")));
            }
        }
        u.in_batch_count = u.answers.len();
        Ok(u)
    }

    fn empty() -> Self {
        Self {
            answers: Vec::new(),
            origins: Vec::new(),
            in_batch_count: 0,
            index: HashMap::new(),
        }
    }

    fn push(&mut self, answer: String, origin: Origin) -> bool {
        if self.index.contains_key(&answer) {
            return false;
        }
        self.index.insert(answer.clone(), self.answers.len());
        self.answers.push(answer);
        self.origins.push(origin);
        true
    }

    pub fn answers(&self) -> &[String] {
        &self.answers
    }

    pub fn origins(&self) -> &[Origin] {
        &self.origins
    }

    pub fn in_batch_count(&self) -> usize {
        self.in_batch_count
    }

    pub fn batch_answers(&self) -> &[String] {
        &self.answers[..self.in_batch_count]
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

    /// Appends sampled negatives; answers already present are ignored.
    pub fn extend_sampled<I: IntoIterator<Item = String>>(&mut self, sampled: I) {
        for a in sampled {
            self.push(a, Origin::Sampled);
        }
    }
}

/// Union of `C ∪ D` over the batch in first-occurrence order.
pub fn build_mini_universe<T: std::borrow::Borrow<Triplet>>(batch: &[T]) -> MiniUniverse {
    let positives: HashSet<&str> = batch
        .iter()
        .flat_map(|t| t.borrow().correct.iter().map(String::as_str))
        .collect();
    let mut u = MiniUniverse::empty();
    for t in batch {
        let t = t.borrow();
        for a in t.correct.iter().chain(&t.incorrect) {
            let origin = if positives.contains(a.as_str()) {
                Origin::BatchPositive
            } else {
                Origin::BatchNegative
            };
            u.push(a.clone(), origin);
        }
    }
    u.in_batch_count = u.answers.len();
    u
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NegativeSampling {
    #[default]
    Uniform,
    /// Proportional to training frequency (at least 1 per answer).
    Frequency,
}

impl FromStr for NegativeSampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "frequency" => Ok(Self::Frequency),
            _ => Err(Error::Config(format!("unknown negative sampling `{s}` (uniform|frequency)"))),
        }
    }
}

impl fmt::Display for NegativeSampling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Uniform => "uniform",
            Self::Frequency => "frequency",
        })
    }
}

/// Draws `min(m, |vocab − batch|)` answers without replacement from the
/// vocabulary entries not in `batch`, returned in vocabulary order.
///
/// The first picks never depend on how many follow, so from a shared rng
/// state a smaller `m` yields a subset of a larger one.
pub fn sample_negatives<R: Rng + ?Sized>(
    vocab: &AnswerVocabulary,
    batch: &MiniUniverse,
    m: usize,
    mode: NegativeSampling,
    rng: &mut R,
) -> Vec<String> {
    let complement: Vec<usize> = (0..vocab.len())
        .filter(|&i| !batch.contains(&vocab.answers()[i]))
        .collect();
    let take = m.min(complement.len());
    if take == 0 {
        return Vec::new();
    }
    let mut chosen: Vec<usize> = match mode {
        NegativeSampling::Uniform => {
            // Partial Fisher-Yates.
            let mut pool = complement;
            let n = pool.len();
            for k in 0..take {
                let j = rng.gen_range(k..n);
                pool.swap(k, j);
            }
            pool.truncate(take);
            pool
        }
        NegativeSampling::Frequency => {
            // Weighted sampling without replacement by exponential keys.
            let mut keyed: Vec<(f64, usize)> = complement
                .into_iter()
                .map(|i| {
                    let w = vocab.frequency()[i].max(1) as f64;
                    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                    (u.ln() / w, i)
                })
                .collect();
            keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            keyed.into_iter().take(take).map(|(_, i)| i).collect()
        }
    };
    chosen.sort_unstable();
    chosen.into_iter().map(|i| vocab.answers()[i].clone()).collect()
}

/// Softmax with max-logit subtraction.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    let (max, total) = stabilized(logits)?;
    Ok(logits.iter().map(|l| (l - max).exp() / total).collect())
}

fn stabilized(logits: &[f64]) -> Result<(f64, f64)> {
    if logits.is_empty() {
        return Err(Error::Argument("softmax over an empty candidate set".into()));
    }
    if let Some(i) = logits.iter().position(|l| !l.is_finite()) {
        return Err(Error::Numeric(format!("logit {i} is {}", logits[i])));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    Ok((max, total))
}

/// `p(a | i, q)` over the candidates: softmax of `f · g(a)`.
pub fn pmc_posterior(f_emb: &[f64], answer_embs: &[Vec<f64>]) -> Result<Vec<f64>> {
    softmax(&logits(f_emb, answer_embs)?)
}

fn logits(f_emb: &[f64], answer_embs: &[Vec<f64>]) -> Result<Vec<f64>> {
    answer_embs
        .iter()
        .map(|g| {
            if g.len() != f_emb.len() {
                return Err(Error::Argument(format!(
                    "answer embedding has dim {}, query has {}",
                    g.len(),
                    f_emb.len()
                )));
            }
            Ok(dot(f_emb, g))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlphaKind {
    OneHot,
    MultiHot,
    Soft,
    Wups,
}

impl FromStr for AlphaKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one_hot" => Ok(Self::OneHot),
            "multi_hot" => Ok(Self::MultiHot),
            "soft" => Ok(Self::Soft),
            "wups" => Ok(Self::Wups),
            _ => Err(Error::Config(format!(
                "unknown alpha `{s}` (one_hot|multi_hot|soft|wups)"
            ))),
        }
    }
}

impl fmt::Display for AlphaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::OneHot => "one_hot",
            Self::MultiHot => "multi_hot",
            Self::Soft => "soft",
            Self::Wups => "wups",
        })
    }
}

/// How much each candidate contributes to a triplet's likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightingRule {
    kind: AlphaKind,
    lambda: f64,
    exact_match_weight: f64,
    similarity: Option<SimilarityTable>,
}

impl WeightingRule {
    pub const DEFAULT_LAMBDA: f64 = 0.9;
    pub const DEFAULT_EXACT_MATCH_WEIGHT: f64 = 8.0;

    /// Rules other than `wups`.
    pub fn new(kind: AlphaKind) -> Result<Self> {
        if kind == AlphaKind::Wups {
            return Err(Error::Config("alpha = wups needs a similarity table".into()));
        }
        Ok(Self {
            kind,
            lambda: Self::DEFAULT_LAMBDA,
            exact_match_weight: Self::DEFAULT_EXACT_MATCH_WEIGHT,
            similarity: None,
        })
    }

    pub fn wups(similarity: SimilarityTable, lambda: f64, exact_match_weight: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Config(format!("wups lambda {lambda} outside [0, 1]")));
        }
        if !(exact_match_weight > 0.0 && exact_match_weight.is_finite()) {
            return Err(Error::Config("wups exact-match weight must be positive".into()));
        }
        Ok(Self {
            kind: AlphaKind::Wups,
            lambda,
            exact_match_weight,
            similarity: Some(similarity),
        })
    }

    pub fn kind(&self) -> AlphaKind {
        self.kind
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn exact_match_weight(&self) -> f64 {
        self.exact_match_weight
    }
}

/// Weights over `universe` for one triplet, or `None` when every weight
/// would be zero (no correct answer in the universe); such triplets are
/// skipped by the trainer.
pub fn compute_weights(rule: &WeightingRule, triplet: &Triplet, universe: &MiniUniverse) -> Option<Vec<f64>> {
    let mut w = vec![0.0; universe.len()];
    match rule.kind {
        AlphaKind::OneHot => {
            w[universe.position(triplet.dominant_answer())?] = 1.0;
        }
        AlphaKind::MultiHot => {
            for a in &triplet.correct {
                if let Some(p) = universe.position(a) {
                    w[p] += 1.0;
                }
            }
        }
        AlphaKind::Soft => {
            let distinct = triplet.distinct_correct();
            let share = 1.0 / distinct.len() as f64;
            for a in distinct {
                if let Some(p) = universe.position(a) {
                    w[p] = share;
                }
            }
        }
        AlphaKind::Wups => {
            let table = rule.similarity.as_ref().expect("wups rule carries a table");
            let t = triplet.dominant_answer();
            for (wi, d) in w.iter_mut().zip(universe.answers()) {
                let s = table.value(t, d);
                *wi = if s == 1.0 {
                    rule.exact_match_weight
                } else if s > rule.lambda {
                    1.0
                } else {
                    0.0
                };
            }
        }
    }
    w.iter().any(|&x| x > 0.0).then_some(w)
}

fn check_weights(weights: &[f64], n: usize) -> Result<f64> {
    if weights.len() != n {
        return Err(Error::Argument(format!(
            "{} weights for {n} candidates",
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::Argument("weights must be finite and non-negative".into()));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::Argument("all weights are zero".into()));
    }
    Ok(total)
}

/// `−Σ α_d log p_d` and its gradient with respect to the logits,
/// `(Σα) p − α`.
pub fn weighted_nll_logits(logits: &[f64], weights: &[f64]) -> Result<(f64, Vec<f64>)> {
    let total_weight = check_weights(weights, logits.len())?;
    let (max, total) = stabilized(logits)?;
    let log_total = total.ln();
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (l, w) in logits.iter().zip(weights) {
        let shifted = l - max;
        if *w != 0.0 {
            loss -= w * (shifted - log_total);
        }
        grad.push(total_weight * shifted.exp() / total - w);
    }
    Ok((loss, grad))
}

/// Weighted NLL of the posterior over `universe_embs` with gradients with
/// respect to `f_emb` and every candidate embedding.
pub fn weighted_nll(
    f_emb: &[f64],
    universe_embs: &[Vec<f64>],
    weights: &[f64],
) -> Result<(f64, Vec<f64>, Vec<Vec<f64>>)> {
    let z = logits(f_emb, universe_embs)?;
    let (loss, grad_z) = weighted_nll_logits(&z, weights)?;
    let mut grad_f = vec![0.0; f_emb.len()];
    let mut grad_u = Vec::with_capacity(universe_embs.len());
    for (g, dz) in universe_embs.iter().zip(&grad_z) {
        for (gf, gv) in grad_f.iter_mut().zip(g) {
            *gf += dz * gv;
        }
        grad_u.push(f_emb.iter().map(|fv| dz * fv).collect());
    }
    Ok((loss, grad_f, grad_u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(c: &[&str], d: &[&str]) -> Triplet {
        Triplet::new("img", "what", c, d).unwrap()
    }

    fn universe(a: &[&str]) -> MiniUniverse {
        MiniUniverse::from_answers(a.iter().map(|s| s.to_string())).unwrap()
    }

    fn vocab(n: usize) -> AnswerVocabulary {
        AnswerVocabulary::from_answers((0..n).map(|i| format!("a{i:03}"))).unwrap()
    }

    #[test]
    fn universe_union_in_first_occurrence_order() {
        let u = build_mini_universe(&[t(&["a"], &[]), t(&["b"], &[])]);
        assert_eq!(u.answers(), ["a", "b"]);
        let u = build_mini_universe(&[t(&["a"], &["x", "y"]), t(&["a"], &["y", "z"])]);
        assert_eq!(u.answers(), ["a", "x", "y", "z"]);
        assert_eq!(u.in_batch_count(), 4);
        assert_eq!(u.origins()[0], Origin::BatchPositive);
        assert_eq!(u.origins()[1], Origin::BatchNegative);
        let single = t(&["p", "q", "p"], &["r"]);
        assert_eq!(build_mini_universe(&[single]).answers(), ["p", "q", "r"]);
    }

    #[test]
    fn answer_correct_elsewhere_is_positive() {
        let u = build_mini_universe(&[t(&["a"], &["b"]), t(&["b"], &[])]);
        assert_eq!(u.origins(), [Origin::BatchPositive, Origin::BatchPositive]);
    }

    #[test]
    fn sampling_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v = vocab(100);
        let batch = MiniUniverse::from_answers(v.answers()[..10].to_vec()).unwrap();
        assert!(sample_negatives(&v, &batch, 0, NegativeSampling::Uniform, &mut rng).is_empty());
        let all = MiniUniverse::from_answers(v.answers().to_vec()).unwrap();
        assert!(sample_negatives(&v, &all, 50, NegativeSampling::Uniform, &mut rng).is_empty());
        for mode in [NegativeSampling::Uniform, NegativeSampling::Frequency] {
            let s = sample_negatives(&v, &batch, 3000, mode, &mut rng);
            assert_eq!(s.len(), 90);
            assert!(s.iter().all(|a| !batch.contains(a)));
            let distinct: HashSet<_> = s.iter().collect();
            assert_eq!(distinct.len(), 90);
        }
    }

    #[test]
    fn uniform_sampling_covers_complement_evenly() {
        let v = vocab(6);
        let batch = universe(&["a000", "a001"]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut counts = HashMap::new();
        let draws = 20000;
        for _ in 0..draws {
            for a in sample_negatives(&v, &batch, 1, NegativeSampling::Uniform, &mut rng) {
                *counts.entry(a).or_insert(0usize) += 1;
            }
        }
        assert_eq!(counts.len(), 4);
        for c in counts.values() {
            let share = *c as f64 / draws as f64;
            assert!((share - 0.25).abs() < 0.02, "{share}");
        }
    }

    #[test]
    fn frequency_sampling_prefers_frequent_answers() {
        let v = AnswerVocabulary::from_parts(vec!["x".into(), "y".into(), "z".into()], vec![98, 1, 1], 3).unwrap();
        let batch = universe(&["q"]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let hits = (0..2000)
            .filter(|_| sample_negatives(&v, &batch, 1, NegativeSampling::Frequency, &mut rng) == ["x"])
            .count();
        assert!(hits > 1800, "{hits}");
    }

    #[test]
    fn posterior_examples() {
        assert_eq!(pmc_posterior(&[1.0], &[vec![3.0]]).unwrap(), [1.0]);
        assert_eq!(pmc_posterior(&[1.0, 1.0], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(), [0.5, 0.5]);
        let p = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(softmax(&[f64::NAN]), Err(Error::Numeric(_))));
        assert!(softmax(&[]).is_err());
        assert!(pmc_posterior(&[1.0], &[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn large_logits_stay_finite() {
        let p = softmax(&[1000.0, 999.0, -1000.0]).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weight_examples() {
        let one = WeightingRule::new(AlphaKind::OneHot).unwrap();
        let tr = t(&["yes", "yes", "yes", "no"], &[]);
        assert_eq!(compute_weights(&one, &tr, &universe(&["yes", "no", "maybe"])).unwrap(), [1.0, 0.0, 0.0]);

        let soft = WeightingRule::new(AlphaKind::Soft).unwrap();
        assert_eq!(compute_weights(&soft, &t(&["a", "b"], &[]), &universe(&["a", "b", "c"])).unwrap(), [0.5, 0.5, 0.0]);

        let multi = WeightingRule::new(AlphaKind::MultiHot).unwrap();
        assert_eq!(compute_weights(&multi, &t(&["yes", "yes", "no"], &[]), &universe(&["yes", "no"])).unwrap(), [2.0, 1.0]);
    }

    #[test]
    fn soft_counts_distinct_answers() {
        let soft = WeightingRule::new(AlphaKind::Soft).unwrap();
        let w = compute_weights(&soft, &t(&["a", "a", "b"], &[]), &universe(&["b", "a"])).unwrap();
        assert_eq!(w, [0.5, 0.5]);
    }

    #[test]
    fn one_hot_tie_goes_to_smallest_string() {
        let one = WeightingRule::new(AlphaKind::OneHot).unwrap();
        let w = compute_weights(&one, &t(&["b", "a"], &[]), &universe(&["a", "b"])).unwrap();
        assert_eq!(w, [1.0, 0.0]);
    }

    #[test]
    fn wups_thresholds() {
        let mut sim = SimilarityTable::default();
        sim.insert("cat", "kitten", 0.95).unwrap();
        sim.insert("cat", "dog", 0.9).unwrap();
        sim.insert("cat", "feline", 1.0).unwrap();
        let rule = WeightingRule::wups(sim, 0.9, 8.0).unwrap();
        let u = universe(&["cat", "kitten", "dog", "tree", "feline"]);
        let w = compute_weights(&rule, &t(&["cat"], &[]), &u).unwrap();
        assert_eq!(w, [8.0, 1.0, 0.0, 0.0, 8.0]);
        assert!(WeightingRule::new(AlphaKind::Wups).is_err());
        assert!(WeightingRule::wups(SimilarityTable::default(), 1.5, 8.0).is_err());
    }

    #[test]
    fn absent_positive_is_skipped() {
        for kind in [AlphaKind::OneHot, AlphaKind::MultiHot, AlphaKind::Soft] {
            let rule = WeightingRule::new(kind).unwrap();
            assert!(compute_weights(&rule, &t(&["a"], &[]), &universe(&["b", "c"])).is_none());
        }
        let rule = WeightingRule::wups(SimilarityTable::default(), 0.9, 8.0).unwrap();
        assert!(compute_weights(&rule, &t(&["a"], &[]), &universe(&["b"])).is_none());
    }

    #[test]
    fn nll_examples() {
        let (loss, _) = weighted_nll_logits(&[0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        let (loss, _) = weighted_nll_logits(&[50.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!(loss < 1e-20);
        let (loss, _) = weighted_nll_logits(&[0.0; 3], &[0.5, 0.5, 0.0]).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-15);
        assert!(matches!(weighted_nll_logits(&[0.0, 1.0], &[0.0, 0.0]), Err(Error::Argument(_))));
        assert!(weighted_nll_logits(&[0.0, 1.0], &[1.0]).is_err());
        assert!(weighted_nll_logits(&[0.0, 1.0], &[-1.0, 2.0]).is_err());
    }

    #[test]
    fn universe_of_one_has_zero_loss() {
        let (loss, grad) = weighted_nll_logits(&[3.7], &[1.0]).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grad, [0.0]);
    }

    fn pack(f: &[f64], g: &[Vec<f64>]) -> Vec<f64> {
        let mut out = f.to_vec();
        g.iter().for_each(|v| out.extend(v));
        out
    }

    fn unpack(flat: &[f64], dim: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
        let f = flat[..dim].to_vec();
        let g = flat[dim..].chunks(dim).map(<[f64]>::to_vec).collect();
        (f, g)
    }

    proptest! {
        #[test]
        fn posterior_normalized_and_shift_invariant(
            logits in prop::collection::vec(-40.0f64..40.0, 1..12),
            shift in -100.0f64..100.0,
        ) {
            let p = softmax(&logits).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let moved: Vec<f64> = logits.iter().map(|l| l + shift).collect();
            let q = softmax(&moved).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn posterior_bitwise_shift_invariant_for_exact_shifts(
            ticks in prop::collection::vec(-4096i32..4096, 1..12),
            shift_ticks in -65536i32..65536,
        ) {
            // Multiples of 1/64 well inside the mantissa make every shift exact.
            let logits: Vec<f64> = ticks.iter().map(|&k| k as f64 / 64.0).collect();
            let shift = shift_ticks as f64 / 64.0;
            let moved: Vec<f64> = logits.iter().map(|l| l + shift).collect();
            prop_assert_eq!(softmax(&logits).unwrap(), softmax(&moved).unwrap());
        }

        #[test]
        fn posterior_argmax_matches_logit_argmax(logits in prop::collection::vec(-30.0f64..30.0, 1..10)) {
            let p = softmax(&logits).unwrap();
            let arg = |v: &[f64]| v.iter().enumerate().fold(0, |b, (i, x)| if *x > v[b] { i } else { b });
            prop_assert_eq!(arg(&p), arg(&logits));
        }

        #[test]
        fn nll_gradients_match_finite_differences(
            seed in any::<u64>(),
            dim in 1usize..6,
            n in 1usize..6,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let g: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let mut w: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { rng.gen_range(0.0..3.0) } else { 0.0 }).collect();
            w[0] += 1.0;
            let check = grad_check(
                |flat| {
                    let (f, g) = unpack(flat, dim);
                    let (loss, gf, gu) = weighted_nll(&f, &g, &w)?;
                    Ok((loss, pack(&gf, &gu)))
                },
                &pack(&f, &g),
                1e-5,
            ).unwrap();
            prop_assert!(check.max_relative_error < 1e-4, "{}", check.max_relative_error);
        }

        #[test]
        fn one_hot_has_single_unit_weight(
            correct in prop::collection::vec(0usize..5, 1..6),
            extra in prop::collection::vec(0usize..5, 0..4),
        ) {
            let names = ["a", "b", "c", "d", "e"];
            let c: Vec<&str> = correct.iter().map(|&i| names[i]).collect();
            let tr = t(&c, &[]);
            let mut u: Vec<String> = c.iter().map(|s| s.to_string()).collect();
            u.extend(extra.iter().map(|&i| names[i].to_string()));
            let mut seen = HashSet::new();
            u.retain(|a| seen.insert(a.clone()));
            let rule = WeightingRule::new(AlphaKind::OneHot).unwrap();
            let w = compute_weights(&rule, &tr, &MiniUniverse::from_answers(u).unwrap()).unwrap();
            prop_assert_eq!(w.iter().filter(|&&x| x != 0.0).count(), 1);
            prop_assert!(w.iter().all(|&x| x == 0.0 || x == 1.0));
        }

        #[test]
        fn smaller_sample_is_subset(
            seed in any::<u64>(),
            n in 1usize..60,
            in_batch in 0usize..20,
            m1 in 0usize..40,
            extra in 0usize..40,
            frequency in any::<bool>(),
        ) {
            let v = vocab(n);
            let batch = MiniUniverse::from_answers(v.answers()[..in_batch.min(n)].to_vec()).unwrap();
            let mode = if frequency { NegativeSampling::Frequency } else { NegativeSampling::Uniform };
            let small = sample_negatives(&v, &batch, m1, mode, &mut ChaCha8Rng::seed_from_u64(seed));
            let large = sample_negatives(&v, &batch, m1 + extra, mode, &mut ChaCha8Rng::seed_from_u64(seed));
            let large: HashSet<_> = large.into_iter().collect();
            prop_assert!(small.iter().all(|a| large.contains(a)));
            prop_assert_eq!(small.len(), m1.min(n - in_batch.min(n)));
        }
    }
}
