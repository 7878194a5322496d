//! Minibatch training for the three model families under one seeded driver.
//!
//! Randomness comes from four independent ChaCha8 streams derived from the
//! seed: parameter initialization, epoch shuffling, negative sampling and
//! dropout. Changing the number of negatives therefore leaves the batch
//! order and the question-side dropout masks untouched.

mod config;
mod log;

pub use config::{parse_config_entries, parse_train_config, ConfigEntry, TrainConfig};
pub use log::{EpochRecord, TrainLog};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{build_answer_vocabulary, AnswerVocabulary, Dataset, FeatureStore, Triplet, WordEmbeddingTable};
use crate::encoders::{embed_text, FParams, GParams};
use crate::error::{Error, Result};
use crate::model::{ClsParams, Family, Model, ModelParams, UpmcParams};
use crate::numerics::container::Container;
use crate::numerics::{dot, AdamState};
use crate::objective::{
    build_mini_universe, compute_weights, sample_negatives, weighted_nll_logits, AlphaKind, MiniUniverse,
    WeightingRule,
};

const STREAM_SHUFFLE: u64 = 1;
const STREAM_SAMPLE: u64 = 2;
const STREAM_DROPOUT: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Result of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: Model,
    pub vocab: AnswerVocabulary,
    pub log: TrainLog,
}

impl TrainOutcome {
    pub fn checkpoint(&self, config: &TrainConfig) -> Container {
        self.model.to_container(&self.vocab, &train_meta(config))
    }
}

fn train_meta(config: &TrainConfig) -> Vec<(String, String)> {
    let model_keys: Vec<&str> = config.model.to_pairs().iter().map(|(k, _)| *k).collect();
    config
        .to_pairs()
        .into_iter()
        .filter(|(k, _)| !model_keys.contains(&k.as_str()))
        .map(|(k, v)| (format!("train.{k}"), v))
        .collect()
}

pub fn load_checkpoint(text: &str) -> Result<(Model, AnswerVocabulary)> {
    Model::from_container(&Container::parse(text)?)
}

/// Loss and gradients of one batch.
#[derive(Debug, Clone)]
pub struct BatchObjective {
    /// Mean loss over the retained triplets (0 when none were retained).
    pub loss: f64,
    pub grads: ModelParams,
    pub retained: usize,
    pub skipped: usize,
}

/// What the driver saw for one batch, handed to observers before the
/// parameter update.
#[derive(Debug)]
pub struct BatchReport<'a> {
    pub epoch: u32,
    pub batch: usize,
    pub indices: &'a [usize],
    pub universe: &'a MiniUniverse,
    pub objective: &'a BatchObjective,
    pub model: &'a Model,
}

fn feature_of<'a>(features: &'a FeatureStore, t: &Triplet) -> Result<&'a [f64]> {
    features
        .get(&t.image_id)
        .ok_or_else(|| Error::Link(vec![t.image_id.clone()]))
}

/// Loss and gradients of `batch` over `universe` in training mode, with
/// dropout masks drawn from `dropout_seed`.
///
/// For `cls` models `universe` must be the class list and the rule is
/// forced to one-hot (cross-entropy against the dominant answer).
pub fn batch_objective(
    model: &Model,
    batch: &[&Triplet],
    universe: &MiniUniverse,
    features: &FeatureStore,
    table: &WordEmbeddingTable,
    rule: &WeightingRule,
    dropout_seed: u64,
) -> Result<BatchObjective> {
    let one_hot;
    let rule = if model.family() == Family::Cls {
        one_hot = WeightingRule::new(AlphaKind::OneHot)?;
        &one_hot
    } else {
        rule
    };
    let weights: Vec<Option<Vec<f64>>> = batch.iter().map(|t| compute_weights(rule, t, universe)).collect();
    let retained = weights.iter().filter(|w| w.is_some()).count();
    let skipped = batch.len() - retained;
    let mut grads = model.params.zeros_like();
    if retained == 0 {
        return Ok(BatchObjective {
            loss: 0.0,
            grads,
            retained,
            skipped,
        });
    }
    let work: Vec<(&Triplet, &[f64], &[f64])> = batch
        .iter()
        .zip(&weights)
        .filter_map(|(t, w)| w.as_deref().map(|w| (*t, w)))
        .map(|(t, w)| Ok((t, feature_of(features, t)?, w)))
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    let scale = 1.0 / retained as f64;
    let total = match (&model.params, &mut grads) {
        (ModelParams::Fpmc { f, g }, ModelParams::Fpmc { f: gf, g: gg }) => {
            fpmc_batch(f, g, gf, gg, &work, universe, table, scale, &mut rng)?
        }
        (ModelParams::Upmc(u), ModelParams::Upmc(gu)) => upmc_batch(u, gu, &work, universe, table, scale, &mut rng)?,
        (ModelParams::Cls(c), ModelParams::Cls(gc)) => cls_batch(c, gc, &work, universe, table, scale, &mut rng)?,
        _ => unreachable!("zeros_like keeps the family"),
    };
    Ok(BatchObjective {
        loss: total * scale,
        grads,
        retained,
        skipped,
    })
}

type Work<'a> = [(&'a Triplet, &'a [f64], &'a [f64])];

#[allow(clippy::too_many_arguments)]
fn fpmc_batch(
    f: &FParams,
    g: &GParams,
    gf: &mut FParams,
    gg: &mut GParams,
    work: &Work<'_>,
    universe: &MiniUniverse,
    table: &WordEmbeddingTable,
    scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let f_masks: Vec<_> = work.iter().map(|_| f.draw_masks(rng)).collect();
    // Logits use g without its output bias: the bias adds the same term to
    // every logit, and leaving it out keeps the loss bitwise independent of it.
    let mut answer_embs = Vec::with_capacity(universe.len());
    let mut answer_caches = Vec::with_capacity(universe.len());
    for a in universe.answers() {
        let mask = g.draw_mask(rng);
        let (_, cache) = g.forward(a, table, mask.as_deref(), true)?;
        answer_embs.push(cache.unbiased_output().to_vec());
        answer_caches.push(cache);
    }
    let dim = f.embed_dim();
    let mut answer_grads = vec![vec![0.0; dim]; universe.len()];
    let mut total = 0.0;
    for ((t, feat, w), masks) in work.iter().zip(&f_masks) {
        let (emb, cache) = f.forward(feat, &t.question, table, Some(masks), true)?;
        let logits: Vec<f64> = answer_embs.iter().map(|a| dot(&emb, a)).collect();
        let (loss, dz) = weighted_nll_logits(&logits, w)?;
        total += loss;
        let mut grad_emb = vec![0.0; dim];
        for ((a, ga), d) in answer_embs.iter().zip(&mut answer_grads).zip(&dz) {
            let d = d * scale;
            if d == 0.0 {
                continue;
            }
            for k in 0..dim {
                grad_emb[k] += d * a[k];
                ga[k] += d * emb[k];
            }
        }
        f.backward_into(&cache, &grad_emb, gf)?;
    }
    if g.mlp.is_some() {
        for (cache, grad) in answer_caches.iter().zip(&answer_grads) {
            g.backward_into(cache, grad, gg)?;
        }
    }
    Ok(total)
}

fn upmc_batch(
    u: &UpmcParams,
    gu: &mut UpmcParams,
    work: &Work<'_>,
    universe: &MiniUniverse,
    table: &WordEmbeddingTable,
    scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let answer_vecs: Vec<Vec<f64>> = universe
        .answers()
        .iter()
        .map(|a| embed_text(&a.split_whitespace().collect::<Vec<_>>(), table))
        .collect();
    let feat_dim = u.feature_dim();
    let q_dim = u.question.dim();
    let mut total = 0.0;
    let mut input = Vec::with_capacity(u.scorer.in_dim());
    for (t, feat, w) in work {
        if feat.len() != feat_dim {
            return Err(Error::Argument(format!(
                "image feature has length {}, expected {feat_dim}",
                feat.len()
            )));
        }
        let q_mask = u.question.draw_mask(rng);
        let (qvec, q_cache) = u.question.forward(&t.question, table, Some(&q_mask), true)?;
        let mut scores = Vec::with_capacity(universe.len());
        let mut caches = Vec::with_capacity(universe.len());
        for a in &answer_vecs {
            input.clear();
            input.extend_from_slice(feat);
            input.extend_from_slice(&qvec);
            input.extend_from_slice(a);
            let mask = u.scorer.draw_mask(rng);
            let (_, cache) = u.scorer.forward(&input, Some(&mask), true)?;
            scores.push(cache.unbiased_output()[0]);
            caches.push(cache);
        }
        let (loss, dz) = weighted_nll_logits(&scores, w)?;
        total += loss;
        let mut grad_in = vec![0.0; u.scorer.in_dim()];
        for (cache, d) in caches.iter().zip(&dz) {
            let d = d * scale;
            if d != 0.0 {
                u.scorer.backward_into(cache, &[d], &mut gu.scorer, Some(&mut grad_in))?;
            }
        }
        u.question
            .backward_into(&q_cache, &grad_in[feat_dim..feat_dim + q_dim], &mut gu.question);
    }
    Ok(total)
}

fn cls_batch(
    c: &ClsParams,
    gc: &mut ClsParams,
    work: &Work<'_>,
    universe: &MiniUniverse,
    table: &WordEmbeddingTable,
    scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if universe.answers() != c.classes.as_slice() {
        return Err(Error::Contract("cls batches must use the class list as universe".into()));
    }
    let mut total = 0.0;
    for (t, feat, w) in work {
        let masks = c.f.draw_masks(rng);
        let (emb, cache) = c.f.forward(feat, &t.question, table, Some(&masks), true)?;
        let logits = c.classifier.forward(&emb);
        let (loss, dz) = weighted_nll_logits(&logits, w)?;
        total += loss;
        let dz: Vec<f64> = dz.iter().map(|d| d * scale).collect();
        let mut grad_emb = vec![0.0; emb.len()];
        c.classifier
            .backward_acc(&emb, &dz, &mut gc.classifier, Some(&mut grad_emb));
        c.f.backward_into(&cache, &grad_emb, &mut gc.f)?;
    }
    Ok(total)
}

/// The classes a `cls` model is trained over: the top-K ranked answers.
pub fn cls_classes(vocab: &AnswerVocabulary, top_k: usize) -> Vec<String> {
    vocab.top(top_k.min(vocab.ranked_len())).to_vec()
}

/// Trains the family named in `config`.
pub fn train(
    dataset: &Dataset,
    features: &FeatureStore,
    table: &WordEmbeddingTable,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_observed(dataset, features, table, config, |_| {})
}

/// [`train`] with the family forced to `cls`.
pub fn train_cls(
    dataset: &Dataset,
    features: &FeatureStore,
    table: &WordEmbeddingTable,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let mut config = config.clone();
    config.model.family = Family::Cls;
    train(dataset, features, table, &config)
}

/// [`train`] with the family forced to `upmc`.
pub fn train_upmc(
    dataset: &Dataset,
    features: &FeatureStore,
    table: &WordEmbeddingTable,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let mut config = config.clone();
    config.model.family = Family::Upmc;
    train(dataset, features, table, &config)
}

/// [`train`] that calls `observer` for every batch before its update.
pub fn train_observed<F: FnMut(&BatchReport<'_>)>(
    dataset: &Dataset,
    features: &FeatureStore,
    table: &WordEmbeddingTable,
    config: &TrainConfig,
    mut observer: F,
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Argument("cannot train on an empty dataset".into()));
    }
    dataset.check_links(features)?;
    config.model.check_table(table)?;
    if features.dim() != config.model.feature_dim {
        return Err(Error::Argument(format!(
            "feature store dim {} differs from configured feature_dim {}",
            features.dim(),
            config.model.feature_dim
        )));
    }
    let vocab = build_answer_vocabulary(dataset, None)?;
    let family = config.model.family;
    let classes = (family == Family::Cls).then(|| cls_classes(&vocab, config.model.top_k));
    let class_universe = classes
        .as_ref()
        .map(|c| MiniUniverse::from_answers(c.iter().cloned()))
        .transpose()?;
    let mut model = Model::init(&config.model, table, classes, config.seed)?;
    let rule = config.weighting_rule()?;
    let m = config.effective_negatives();

    let mut shuffle_rng = stream(config.seed, STREAM_SHUFFLE);
    let mut sample_rng = stream(config.seed, STREAM_SAMPLE);
    let mut dropout_rng = stream(config.seed, STREAM_DROPOUT);
    let mut adam = AdamState::new(&model.params, config.adam);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let lr = config.schedule.at_epoch(epoch);
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut retained, mut skipped) = (0.0, 0usize, 0u64);
        for (b, indices) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Triplet> = indices.iter().map(|&i| &dataset.triplets[i]).collect();
            let sampled;
            let universe = match &class_universe {
                Some(u) => u,
                None => {
                    let mut u = build_mini_universe(&batch);
                    let negatives = sample_negatives(&vocab, &u, m, config.negative_sampling, &mut sample_rng);
                    u.extend_sampled(negatives);
                    sampled = u;
                    &sampled
                }
            };
            let seed: u64 = dropout_rng.gen();
            let at = |e: Error| match e {
                Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch} batch {b}: {msg}")),
                other => other,
            };
            let objective =
                batch_objective(&model, &batch, universe, features, table, &rule, seed).map_err(at)?;
            if !objective.loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "epoch {epoch} batch {b}: loss is {}",
                    objective.loss
                )));
            }
            observer(&BatchReport {
                epoch,
                batch: b,
                indices,
                universe,
                objective: &objective,
                model: &model,
            });
            skipped += objective.skipped as u64;
            if objective.retained > 0 {
                loss_sum += objective.loss * objective.retained as f64;
                retained += objective.retained;
                adam.step(&mut model.params, &objective.grads, lr).map_err(at)?;
            }
        }
        log.push(EpochRecord {
            epoch,
            lr,
            loss: if retained > 0 { loss_sum / retained as f64 } else { 0.0 },
            skipped,
            seconds: if config.log_wall_time {
                started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        })?;
    }
    Ok(TrainOutcome { model, vocab, log })
}
