//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ansemb::cli::{gradcheck_suite, GRADCHECK_TOLERANCE};
use ansemb::corpus::{generate_synthetic, Dataset, SynthSpec};
use ansemb::evaluator::{benchmark_inference, evaluate, transfer_evaluate, vqa_accuracy, EvalMode};
use ansemb::model::{Family, Model, ModelConfig, ModelParams};
use ansemb::numerics::{dot, LrSchedule};
use ansemb::objective::{pmc_posterior, weighted_nll_logits, AlphaKind};
use ansemb::trainer::{train, train_observed, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

/// Name, check, runtime budget in seconds.
type Criterion = (&'static str, fn() -> Check, u64);

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn gradient_correctness() -> Check {
    let results = gradcheck_suite(0, 3).map_err(fail)?;
    let worst = results
        .iter()
        .max_by(|a, b| a.1.max_relative_error.total_cmp(&b.1.max_relative_error))
        .ok_or("no cases ran")?;
    let (case, r) = worst;
    ensure(
        r.max_relative_error <= GRADCHECK_TOLERANCE,
        format!(
            "{} cases, worst {:.3e} ({} {} case {case}, {})",
            results.len(),
            r.max_relative_error,
            r.family,
            r.alpha,
            r.worst_block
        ),
    )
}

fn oracle_equivalence() -> Check {
    let spec = SynthSpec {
        train_answers: 20,
        target_answers: 20,
        overlap: 1.0,
        train_records: 60,
        target_records: 10,
        incorrect_per_record: 0,
        ..SynthSpec::default()
    };
    let corpus = generate_synthetic(&spec, 11).map_err(fail)?;
    let mut config = TrainConfig::default();
    config.model.dropout_rate = 0.0;
    config.alpha = AlphaKind::OneHot;
    config.negatives = Some(20);
    config.batch_size = 8;
    config.epochs = 3;
    let vocab = corpus.train.all_answers();
    if vocab.len() != 20 {
        return Err(format!("toy vocabulary has {} answers", vocab.len()));
    }
    let (mut batches, mut mismatches) = (0usize, Vec::new());
    let outcome = train_observed(&corpus.train, &corpus.features, &corpus.table, &config, |r| {
        batches += 1;
        let batch: Vec<_> = r.indices.iter().map(|&i| &corpus.train.triplets[i]).collect();
        let vocab_order = r_vocab(&corpus.train);
        // Exhaustive universe: batch answers first, then every other answer
        // in vocabulary order.
        let mut order: Vec<String> = Vec::new();
        for t in &batch {
            for a in t.correct.iter().chain(&t.incorrect) {
                if !order.contains(a) {
                    order.push(a.clone());
                }
            }
        }
        for a in &vocab_order {
            if !order.contains(a) {
                order.push(a.clone());
            }
        }
        if r.universe.answers() != order.as_slice() {
            mismatches.push(format!("epoch {} batch {}: universe order differs", r.epoch, r.batch));
            return;
        }
        match oracle_loss(r.model, &batch, &order, &corpus) {
            Ok(loss) if loss.to_bits() == r.objective.loss.to_bits() => {}
            Ok(loss) => mismatches.push(format!(
                "epoch {} batch {}: trainer {:e} vs oracle {loss:e}",
                r.epoch, r.batch, r.objective.loss
            )),
            Err(e) => mismatches.push(e),
        }
    });
    outcome.map_err(fail)?;
    ensure(
        mismatches.is_empty() && batches > 0,
        match mismatches.first() {
            None => format!("{batches} batches bitwise equal"),
            Some(m) => format!("{} of {batches} batches differ, first: {m}", mismatches.len()),
        },
    )
}

fn r_vocab(dataset: &Dataset) -> Vec<String> {
    ansemb::corpus::build_answer_vocabulary(dataset, None)
        .expect("vocabulary")
        .answers()
        .to_vec()
}

/// Mean one-hot PMC loss over the full answer set, written directly against
/// the encoders.
fn oracle_loss(
    model: &Model,
    batch: &[&ansemb::corpus::Triplet],
    universe: &[String],
    corpus: &ansemb::corpus::SyntheticCorpus,
) -> Result<f64, String> {
    let ModelParams::Fpmc { f, g } = &model.params else {
        return Err("expected an fpmc model".into());
    };
    let mut answer_embs = Vec::new();
    for a in universe {
        let (_, cache) = g.forward(a, &corpus.table, None, true).map_err(fail)?;
        answer_embs.push(cache.unbiased_output().to_vec());
    }
    let mut total = 0.0;
    for t in batch {
        let feat = corpus.features.get(&t.image_id).ok_or("missing feature")?;
        let (emb, _) = f.forward(feat, &t.question, &corpus.table, None, true).map_err(fail)?;
        let logits: Vec<f64> = answer_embs.iter().map(|a| dot(&emb, a)).collect();
        let mut w = vec![0.0; universe.len()];
        let target = universe
            .iter()
            .position(|a| a == t.dominant_answer())
            .ok_or("target outside universe")?;
        w[target] = 1.0;
        total += weighted_nll_logits(&logits, &w).map_err(fail)?.0;
    }
    Ok(total * (1.0 / batch.len() as f64))
}

fn posterior_contract() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_sum = 0.0f64;
    for case in 0..1000 {
        let dim = rng.gen_range(1..=8);
        let n = rng.gen_range(1..=30);
        // Dyadic values keep `x + shift` exact, so the stabilized logits
        // are the same bits before and after the shift.
        let dyadic = |rng: &mut ChaCha8Rng| f64::from(rng.gen_range(-4096i32..=4096)) / 1024.0;
        let f: Vec<f64> = (0..dim).map(|_| dyadic(&mut rng)).collect();
        let embs: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| dyadic(&mut rng)).collect()).collect();
        let p = pmc_posterior(&f, &embs).map_err(fail)?;
        worst_sum = worst_sum.max((p.iter().sum::<f64>() - 1.0).abs());
        // A shared shift of the logits: add the same extra coordinate to f
        // and a constant 1 to every answer embedding.
        let shift = f64::from(rng.gen_range(-1000i32..=1000));
        let mut fs = f.clone();
        fs.push(shift);
        let shifted: Vec<Vec<f64>> = embs
            .iter()
            .map(|e| {
                let mut e = e.clone();
                e.push(1.0);
                e
            })
            .collect();
        let q = pmc_posterior(&fs, &shifted).map_err(fail)?;
        if p.iter().zip(&q).any(|(a, b)| a.to_bits() != b.to_bits()) {
            return Err(format!("case {case}: shifted posterior differs"));
        }
    }
    ensure(worst_sum <= 1e-9, format!("1000 cases, worst |sum - 1| {worst_sum:.1e}, shifts bitwise equal"))
}

fn overfit_family(family: Family) -> Result<(f64, Duration), String> {
    let spec = SynthSpec {
        train_records: 50,
        train_answers: 10,
        target_answers: 10,
        target_records: 10,
        ..SynthSpec::default()
    };
    let corpus = generate_synthetic(&spec, 1).map_err(fail)?;
    let mut config = TrainConfig::default();
    config.model.family = family;
    config.epochs = 200;
    config.batch_size = 10;
    config.schedule.initial = 1e-2;
    let started = Instant::now();
    let out = train(&corpus.train, &corpus.features, &corpus.table, &config).map_err(fail)?;
    let report = evaluate(
        &out.model,
        &corpus.train,
        &corpus.features,
        &corpus.table,
        EvalMode::OpenEnded,
        out.vocab.answers(),
    )
    .map_err(fail)?;
    Ok((report.overall.accuracy, started.elapsed()))
}

fn overfit_sanity() -> Check {
    let mut parts = Vec::new();
    let mut ok = true;
    for family in [Family::Fpmc, Family::Upmc, Family::Cls] {
        let (acc, took) = overfit_family(family)?;
        ok &= acc >= 0.95 && took < Duration::from_secs(120);
        parts.push(format!("{family} {acc:.3} in {:.1}s", took.as_secs_f64()));
    }
    ensure(ok, parts.join(", "))
}

fn transfer_claim() -> Check {
    let corpus = generate_synthetic(&SynthSpec::default(), 7).map_err(fail)?;
    let unseen_records = corpus.target_seen.iter().filter(|s| !**s).count();
    let mut unseen = Vec::new();
    for family in [Family::Fpmc, Family::Cls] {
        let mut config = TrainConfig::default();
        config.model.family = family;
        config.epochs = 20;
        let out = train(&corpus.train, &corpus.features, &corpus.table, &config).map_err(fail)?;
        let report = transfer_evaluate(
            &out.model,
            &out.vocab,
            &corpus.target,
            &corpus.features,
            &corpus.table,
            EvalMode::MultipleChoice,
        )
        .map_err(fail)?;
        let score = report.unseen.ok_or("no unseen breakdown")?;
        unseen.push((score.records, score.accuracy));
    }
    let (fpmc, cls) = (unseen[0].1, unseen[1].1);
    ensure(
        unseen_records >= 400 && unseen[0].0 >= 400 && (cls - 0.25).abs() <= 0.05 && fpmc >= 0.40,
        format!("{} unseen records, fpmc {fpmc:.3}, cls {cls:.3}", unseen[0].0),
    )
}

fn negative_sampling_ablation() -> Check {
    let answers = 300;
    let spec = SynthSpec {
        attributes: 3,
        train_answers: answers,
        target_answers: answers,
        overlap: 1.0,
        train_records: 3000,
        target_records: 1000,
        incorrect_per_record: 0,
        ..SynthSpec::default()
    };
    let corpus = generate_synthetic(&spec, 3).map_err(fail)?;
    let mut acc = Vec::new();
    for m in [0, answers / 2, answers] {
        let mut config = TrainConfig::default();
        config.epochs = 40;
        config.batch_size = 32;
        config.negatives = Some(m);
        let out = train(&corpus.train, &corpus.features, &corpus.table, &config).map_err(fail)?;
        let report = evaluate(
            &out.model,
            &corpus.target,
            &corpus.features,
            &corpus.table,
            EvalMode::OpenEnded,
            out.vocab.answers(),
        )
        .map_err(fail)?;
        acc.push(report.overall.accuracy * 100.0);
    }
    let (zero, half, full) = (acc[0], acc[1], acc[2]);
    ensure(
        full - zero >= 2.0 && (full - half).abs() < 2.0,
        format!("M=0 {zero:.1}, M={} {half:.1}, M={answers} {full:.1}", answers / 2),
    )
}

fn efficiency_claim() -> Check {
    let corpus = generate_synthetic(&SynthSpec::default(), 5).map_err(fail)?;
    let base = ModelConfig::default();
    let fpmc = Model::init(&ModelConfig { family: Family::Fpmc, ..base.clone() }, &corpus.table, None, 5).map_err(fail)?;
    let upmc = Model::init(&ModelConfig { family: Family::Upmc, ..base }, &corpus.table, None, 5).map_err(fail)?;
    let large = benchmark_inference(&fpmc, &upmc, &corpus.table, 1000, 128, 5, 5).map_err(fail)?;
    let small = benchmark_inference(&fpmc, &upmc, &corpus.table, 10, 128, 5, 5).map_err(fail)?;
    let (rl, rs) = (large.ratio(), small.ratio());
    ensure(rl >= 5.0 && rl > rs, format!("speedup {rl:.1}x at |A|=1000, {rs:.1}x at |A|=10"))
}

fn within_ulp(a: f64, b: f64) -> bool {
    (a.to_bits() as i64 - b.to_bits() as i64).abs() <= 1
}

fn schedule_check() -> Check {
    let s = LrSchedule {
        initial: 0.001,
        decay_epochs: 15,
    };
    let got = [s.at_epoch(0), s.at_epoch(15), s.at_epoch(30)];
    let want = [0.001, 0.0005, 0.00025];
    ensure(
        got.iter().zip(&want).all(|(g, w)| within_ulp(*g, *w)),
        format!("{got:?}"),
    )
}

fn metric_check() -> Check {
    let annotations = |matches: usize| -> Vec<&str> {
        let mut v = vec!["yes"; matches];
        v.resize(10, "no");
        v
    };
    let got: Vec<f64> = [0, 1, 2, 3, 7, 10]
        .iter()
        .map(|&m| vqa_accuracy("yes", &annotations(m)))
        .collect();
    let want = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0, 1.0, 1.0];
    ensure(got == want, format!("{got:?} for matches 0,1,2,3,7,10"))
}

fn run_cli(args: &[&str], cwd: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_ansemb"))
        .args(args)
        .current_dir(cwd)
        .output()
        .map_err(fail)?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(fail)?;
    let root = dir.path();
    std::fs::write(
        root.join("synth.conf"),
        "synth.train_records = 200\nsynth.target_records = 50\nsynth.train_answers = 20\nsynth.target_answers = 20\n",
    )
    .map_err(fail)?;
    run_cli(&["gen-synth", "--config", "synth.conf", "--out", "data", "--seed", "4"], root)?;
    std::fs::write(
        root.join("train.conf"),
        "train_data = data/train.tsv\nfeatures = data/features.txt\nwords = data/words.txt\nepochs = 3\nbatch_size = 16\n",
    )
    .map_err(fail)?;
    run_cli(&["train", "--config", "train.conf", "--out", "a"], root)?;
    run_cli(&["train", "--config", "train.conf", "--out", "b"], root)?;
    for file in ["checkpoint.txt", "train_log.csv"] {
        let a = std::fs::read(root.join("a").join(file)).map_err(fail)?;
        let b = std::fs::read(root.join("b").join(file)).map_err(fail)?;
        if a != b {
            return Err(format!("{file} differs between runs"));
        }
    }
    Ok("checkpoint.txt and train_log.csv byte-identical".into())
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("gradient correctness", gradient_correctness, 60),
        ("oracle equivalence", oracle_equivalence, 30),
        ("posterior contract", posterior_contract, 30),
        ("overfit sanity", overfit_sanity, 360),
        ("transfer claim", transfer_claim, 300),
        ("negative-sampling ablation", negative_sampling_ablation, 600),
        ("efficiency claim", efficiency_claim, 120),
        ("schedule check", schedule_check, 5),
        ("metric check", metric_check, 5),
        ("determinism", determinism, 120),
    ];
    let mut failed = 0;
    for (i, (name, check, budget)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let result = check();
        let took = started.elapsed();
        let over = took > Duration::from_secs(*budget);
        let (status, detail) = match result {
            Ok(d) if !over => ("PASS", d),
            Ok(d) => ("FAIL", format!("{d}; took longer than {budget}s")),
            Err(d) => ("FAIL", d),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("criterion {:>2} {name}: {status} ({detail}) [{:.1}s]", i + 1, took.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
}
