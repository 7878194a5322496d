//! Command-line front end. Every subcommand writes its artifacts and a
//! `manifest` into one run directory.

use std::fmt::Write as _;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::corpus::{
    answer_overlap_stats, build_answer_vocabulary, generate_synthetic, load_dataset, load_similarity_table,
    load_word_embeddings, read_dataset, AnswerVocabulary, Dataset, FeatureStore, SimilarityTable, SynthSpec,
    Triplet, WordEmbeddingTable,
};
use crate::error::{Error, Result};
use crate::evaluator::{benchmark_inference, evaluate, export_embeddings, transfer_evaluate, EvalMode, EvalReport};
use crate::model::{Family, Model, ModelParams};
use crate::numerics::{assign_flat, flatten, grad_check, ParamSet};
use crate::objective::{build_mini_universe, AlphaKind, MiniUniverse, WeightingRule};
use crate::trainer::{batch_objective, load_checkpoint, parse_config_entries, train, TrainConfig};

pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const LOG_FILE: &str = "train_log.csv";
pub const MANIFEST_FILE: &str = "manifest";
pub const REPORT_FILE: &str = "report.txt";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const BENCHMARK_FILE: &str = "benchmark.txt";
pub const GRADCHECK_FILE: &str = "gradcheck.csv";
pub const EMBEDDINGS_FILE: &str = "embeddings.tsv";
pub const OVERLAP_FILE: &str = "overlap.csv";

/// Largest relative error the `gradcheck` subcommand accepts.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Central-difference step used by the gradcheck subcommand.
pub const GRADCHECK_STEP: f64 = 1e-5;

#[derive(Debug, Parser)]
#[command(name = "ansemb", version, about = "Factorized answer embeddings: train, evaluate, transfer")]
pub struct Cli {
    /// `key = value` config file; relative paths inside resolve against its directory.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory (default: `run-<unix seconds>`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Writes a synthetic train/target pair with features and word vectors.
    GenSynth,
    /// Trains a model; writes a checkpoint and a CSV log.
    Train,
    /// Evaluates a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Evaluates a checkpoint on another dataset with seen/unseen breakdown.
    Transfer(EvalArgs),
    /// Trains one model per negative-sample count and tabulates accuracy.
    SweepNegatives(SweepArgs),
    /// Times factorized against unfactorized inference.
    Benchmark(BenchArgs),
    /// Compares analytic and finite-difference gradients on random toys.
    Gradcheck(GradcheckArgs),
    /// Writes one `answer<TAB>vector` line per answer.
    ExportEmbeddings(ExportArgs),
    /// Counts answers shared by the top-k of two datasets.
    Overlap(OverlapArgs),
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset to evaluate (default: `eval_data`, then `target_data`, then `train_data`).
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long, default_value = "multiple_choice")]
    pub mode: EvalMode,
    /// Open-ended candidate answers, one per line (default: checkpoint vocabulary).
    #[arg(long)]
    pub candidates: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub m_list: Vec<usize>,
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long, default_value = "open_ended")]
    pub mode: EvalMode,
    #[arg(long)]
    pub candidates: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 1000)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 5)]
    pub repetitions: usize,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Random configurations per family and weighting rule.
    #[arg(long, default_value_t = 3)]
    pub cases: usize,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub candidates: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OverlapArgs {
    pub first: PathBuf,
    pub second: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "10,100,1000")]
    pub k_list: Vec<usize>,
}

/// Config keys naming input files.
const PATH_KEYS: [&str; 7] = [
    "train_data",
    "eval_data",
    "target_data",
    "features",
    "target_features",
    "words",
    "similarity",
];

/// Parsed config file plus command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub synth: SynthSpec,
    pub synth_seed: Option<u64>,
    paths: Vec<(String, PathBuf)>,
    lines: Vec<String>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut rc = RunConfig::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let base = path.parent().unwrap_or(Path::new(""));
            rc.apply(&text, base)?;
        }
        if let Some(s) = seed {
            rc.train.seed = s;
            rc.synth_seed = Some(s);
        }
        Ok(rc)
    }

    fn apply(&mut self, text: &str, base: &Path) -> Result<()> {
        for e in parse_config_entries(text)? {
            let at = |err: Error| Error::Config(format!("line {}: {}", e.line, strip_config(err)));
            if PATH_KEYS.contains(&e.key.as_str()) {
                self.paths.push((e.key.clone(), base.join(&e.value)));
            } else if let Some(k) = e.key.strip_prefix("synth.") {
                self.set_synth(k, &e.value).map_err(at)?;
            } else if !self.train.set(&e.key, &e.value).map_err(at)? {
                return Err(Error::Config(format!("line {}: unknown key `{}`", e.line, e.key)));
            }
            self.lines.push(format!("{} = {}", e.key, e.value));
        }
        Ok(())
    }

    fn set_synth(&mut self, key: &str, value: &str) -> Result<()> {
        let s = &mut self.synth;
        let p = |v: &str| -> Result<usize> { v.parse().map_err(|_| bad(key, v)) };
        let r = |v: &str| -> Result<f64> { v.parse().map_err(|_| bad(key, v)) };
        match key {
            "attributes" => s.attributes = p(value)?,
            "values_per_attribute" => s.values_per_attribute = p(value)?,
            "words_per_value" => s.words_per_value = p(value)?,
            "word_dim" => s.word_dim = p(value)?,
            "feature_dim" => s.feature_dim = p(value)?,
            "train_answers" => s.train_answers = p(value)?,
            "target_answers" => s.target_answers = p(value)?,
            "overlap" => s.overlap = r(value)?,
            "train_records" => s.train_records = p(value)?,
            "target_records" => s.target_records = p(value)?,
            "incorrect_per_record" => s.incorrect_per_record = p(value)?,
            "annotations_per_record" => s.annotations_per_record = p(value)?,
            "feature_noise" => s.feature_noise = r(value)?,
            "filler_words" => s.filler_words = p(value)?,
            "seed" => self.synth_seed = Some(value.parse().map_err(|_| bad(key, value))?),
            _ => return Err(Error::Config(format!("unknown key `synth.{key}`"))),
        }
        Ok(())
    }

    pub fn path(&self, key: &str) -> Option<&Path> {
        self.paths.iter().find(|(k, _)| k == key).map(|(_, p)| p.as_path())
    }

    pub fn require_path(&self, key: &str) -> Result<&Path> {
        self.path(key)
            .ok_or_else(|| Error::Config(format!("config needs `{key} = <path>`")))
    }

    /// Effective training settings, with the similarity table loaded when
    /// the weighting rule needs one.
    fn train_config(&self) -> Result<TrainConfig> {
        let mut c = self.train.clone();
        if c.alpha == AlphaKind::Wups {
            let p = self.require_path("similarity")?;
            c.similarity = Some(load_similarity_table(p)?);
        }
        c.validate()?;
        Ok(c)
    }
}

fn bad(key: &str, value: &str) -> Error {
    Error::Config(format!("bad value `{value}` for `{key}`"))
}

fn strip_config(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

struct Manifest {
    text: String,
}

impl Manifest {
    fn new(command: &str, rc: &RunConfig) -> Self {
        let mut text = String::from("ansemb-manifest 1\n");
        let _ = writeln!(text, "version {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(text, "command {command}");
        let _ = writeln!(text, "seed {}", rc.train.seed);
        for l in &rc.lines {
            let _ = writeln!(text, "config {l}");
        }
        Self { text }
    }

    fn note(&mut self, key: &str, value: impl std::fmt::Display) {
        let _ = writeln!(self.text, "{key} {value}");
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let digest = hex::encode(Sha256::digest(&bytes));
        let _ = writeln!(self.text, "input {} sha256 {digest}", path.display());
        Ok(())
    }
}

struct RunDir {
    path: PathBuf,
}

impl RunDir {
    fn create(out: Option<&Path>) -> Result<Self> {
        let path = match out {
            Some(p) => p.to_path_buf(),
            None => {
                let secs = SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0);
                PathBuf::from(format!("run-{secs}"))
            }
        };
        std::fs::create_dir_all(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self { path })
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        let p = self.path.join(name);
        std::fs::write(&p, contents).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }
}

struct Loaded {
    dataset: Dataset,
    features: FeatureStore,
}

fn load_data(path: &Path, features: &Path, manifest: &mut Manifest) -> Result<Loaded> {
    manifest.input(path)?;
    manifest.input(features)?;
    let (dataset, features) = load_dataset(path, features)?;
    Ok(Loaded { dataset, features })
}

fn load_words(rc: &RunConfig, manifest: &mut Manifest) -> Result<WordEmbeddingTable> {
    let p = rc.require_path("words")?;
    manifest.input(p)?;
    load_word_embeddings(p)
}

fn load_answer_list(path: &Path, manifest: &mut Manifest) -> Result<Vec<String>> {
    manifest.input(path)?;
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out: Vec<String> = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let a = crate::corpus::normalize_answer(&line);
        if !a.is_empty() && !out.contains(&a) {
            out.push(a);
        }
    }
    if out.is_empty() {
        return Err(Error::format(&path.display().to_string(), 0, "no candidate answers"));
    }
    Ok(out)
}

fn load_model(path: &Path, manifest: &mut Manifest) -> Result<(Model, AnswerVocabulary)> {
    manifest.input(path)?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    load_checkpoint(&text).map_err(|e| match e {
        Error::Format { line, message, .. } => Error::Format {
            source_name: path.display().to_string(),
            line,
            message,
        },
        other => other,
    })
}

/// Dataset path for evaluation-like commands.
fn eval_path<'a>(flag: Option<&'a Path>, rc: &'a RunConfig) -> Result<&'a Path> {
    flag.or_else(|| rc.path("eval_data"))
        .or_else(|| rc.path("target_data"))
        .or_else(|| rc.path("train_data"))
        .ok_or_else(|| Error::Config("no dataset: pass --target or set `eval_data`".into()))
}

fn target_features(rc: &RunConfig) -> Result<&Path> {
    rc.path("target_features")
        .map_or_else(|| rc.require_path("features"), Ok)
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code. Errors go to stderr as one line
/// `error[<category>]: <detail>`.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            0
        }
        Err(e) => {
            let cat = e.category();
            eprintln!("error[{}]: {}", cat.as_str(), e.detail().replace('\n', " "));
            cat.exit_code()
        }
    }
}

/// Runs one invocation and returns the run directory.
pub fn run(cli: &Cli) -> Result<PathBuf> {
    let rc = RunConfig::load(cli.config.as_deref(), cli.seed)?;
    let name = command_name(&cli.command);
    let mut manifest = Manifest::new(name, &rc);
    if let Some(c) = &cli.config {
        manifest.input(c)?;
    }
    let out = RunDir::create(cli.out.as_deref())?;
    match &cli.command {
        Command::GenSynth => gen_synth(&rc, &out, &mut manifest)?,
        Command::Train => train_cmd(&rc, &out, &mut manifest)?,
        Command::Eval(a) => eval_cmd(&rc, a, false, &out, &mut manifest)?,
        Command::Transfer(a) => eval_cmd(&rc, a, true, &out, &mut manifest)?,
        Command::SweepNegatives(a) => sweep_cmd(&rc, a, &out, &mut manifest)?,
        Command::Benchmark(a) => bench_cmd(&rc, a, &out, &mut manifest)?,
        Command::Gradcheck(a) => gradcheck_cmd(&rc, a, &out, &mut manifest)?,
        Command::ExportEmbeddings(a) => export_cmd(&rc, a, &out, &mut manifest)?,
        Command::Overlap(a) => overlap_cmd(&rc, a, &out, &mut manifest)?,
    }
    out.write(MANIFEST_FILE, &manifest.text)?;
    Ok(out.path)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::GenSynth => "gen-synth",
        Command::Train => "train",
        Command::Eval(_) => "eval",
        Command::Transfer(_) => "transfer",
        Command::SweepNegatives(_) => "sweep-negatives",
        Command::Benchmark(_) => "benchmark",
        Command::Gradcheck(_) => "gradcheck",
        Command::ExportEmbeddings(_) => "export-embeddings",
        Command::Overlap(_) => "overlap",
    }
}

fn gen_synth(rc: &RunConfig, out: &RunDir, manifest: &mut Manifest) -> Result<()> {
    let seed = rc.synth_seed.unwrap_or(rc.train.seed);
    manifest.note("synth_seed", seed);
    let corpus = generate_synthetic(&rc.synth, seed)?;
    corpus.write_files(&out.path)?;
    Ok(())
}

fn train_cmd(rc: &RunConfig, out: &RunDir, manifest: &mut Manifest) -> Result<()> {
    let config = rc.train_config()?;
    let table = load_words(rc, manifest)?;
    let data = load_data(rc.require_path("train_data")?, rc.require_path("features")?, manifest)?;
    if let Some(p) = rc.path("similarity") {
        manifest.input(p)?;
    }
    let outcome = train(&data.dataset, &data.features, &table, &config)?;
    out.write(CHECKPOINT_FILE, &outcome.checkpoint(&config).to_text())?;
    out.write(LOG_FILE, &outcome.log.to_csv())?;
    Ok(())
}

fn universe_for(
    candidates: Option<&Path>,
    vocab: &AnswerVocabulary,
    manifest: &mut Manifest,
) -> Result<Vec<String>> {
    match candidates {
        Some(p) => load_answer_list(p, manifest),
        None => Ok(vocab.answers().to_vec()),
    }
}

fn write_report(out: &RunDir, report: &EvalReport) -> Result<()> {
    out.write(REPORT_FILE, &report.to_text())?;
    out.write(PREDICTIONS_FILE, &report.predictions_csv())?;
    Ok(())
}

fn eval_cmd(rc: &RunConfig, a: &EvalArgs, transfer: bool, out: &RunDir, manifest: &mut Manifest) -> Result<()> {
    let (model, vocab) = load_model(&a.checkpoint, manifest)?;
    let table = load_words(rc, manifest)?;
    let path = if transfer {
        a.target
            .as_deref()
            .or_else(|| rc.path("target_data"))
            .ok_or_else(|| Error::Config("transfer needs --target or `target_data`".into()))?
    } else {
        eval_path(a.target.as_deref(), rc)?
    };
    let data = load_data(path, target_features(rc)?, manifest)?;
    manifest.note("mode", a.mode);
    let report = if transfer && a.candidates.is_none() {
        transfer_evaluate(&model, &vocab, &data.dataset, &data.features, &table, a.mode)?
    } else {
        let universe = universe_for(a.candidates.as_deref(), &vocab, manifest)?;
        let mut r = evaluate(&model, &data.dataset, &data.features, &table, a.mode, &universe)?;
        if transfer {
            tag_seen(&mut r, &vocab, &data.dataset);
        }
        r
    };
    write_report(out, &report)
}

/// Re-derives seen/unseen groups for a report computed with an explicit
/// candidate list.
fn tag_seen(report: &mut EvalReport, vocab: &AnswerVocabulary, dataset: &Dataset) {
    for p in &mut report.predictions {
        let t: &Triplet = &dataset.triplets[p.record_id];
        p.seen = Some(t.candidates().iter().any(|a| vocab.contains(a)));
    }
    let group = |want: bool| {
        let (s, n) = report
            .predictions
            .iter()
            .filter(|p| p.seen == Some(want))
            .fold((0.0, 0usize), |(s, n), p| (s + p.credit, n + 1));
        crate::evaluator::GroupScore {
            records: n,
            accuracy: if n == 0 { 0.0 } else { s / n as f64 },
        }
    };
    report.seen = Some(group(true));
    report.unseen = Some(group(false));
}

fn sweep_cmd(rc: &RunConfig, a: &SweepArgs, out: &RunDir, manifest: &mut Manifest) -> Result<()> {
    let base = rc.train_config()?;
    let table = load_words(rc, manifest)?;
    let train_data = load_data(rc.require_path("train_data")?, rc.require_path("features")?, manifest)?;
    let eval_data = match a.target.as_deref().or_else(|| rc.path("eval_data")) {
        Some(p) => load_data(p, target_features(rc)?, manifest)?,
        None => Loaded {
            dataset: train_data.dataset.clone(),
            features: train_data.features.clone(),
        },
    };
    manifest.note("mode", a.mode);
    manifest.note(
        "m_list",
        a.m_list.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
    );
    let mut csv = String::from("m,accuracy,records\n");
    for &m in &a.m_list {
        let mut config = base.clone();
        config.negatives = Some(m);
        let outcome = train(&train_data.dataset, &train_data.features, &table, &config)?;
        let universe = universe_for(a.candidates.as_deref(), &outcome.vocab, manifest)?;
        let report = evaluate(&outcome.model, &eval_data.dataset, &eval_data.features, &table, a.mode, &universe)?;
        let _ = writeln!(csv, "{m},{},{}", report.overall.accuracy, report.overall.records);
    }
    out.write(SWEEP_FILE, &csv)?;
    Ok(())
}

/// A seeded random word table for runs that do not name one.
fn random_table(dim: usize, tokens: usize, seed: u64) -> Result<WordEmbeddingTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = WordEmbeddingTable::new(dim)?;
    for i in 0..tokens {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        t.insert(&format!("w{i}"), &v)?;
    }
    Ok(t)
}

fn bench_cmd(rc: &RunConfig, a: &BenchArgs, out: &RunDir, manifest: &mut Manifest) -> Result<()> {
    let table = match rc.path("words") {
        Some(_) => load_words(rc, manifest)?,
        None => random_table(rc.train.model.word_dim, 64, rc.train.seed)?,
    };
    let mut fc = rc.train.model.clone();
    fc.family = Family::Fpmc;
    let mut uc = fc.clone();
    uc.family = Family::Upmc;
    let fpmc = Model::init(&fc, &table, None, rc.train.seed)?;
    let upmc = Model::init(&uc, &table, None, rc.train.seed)?;
    let report = benchmark_inference(&fpmc, &upmc, &table, a.vocab_size, a.batch_size, a.repetitions, rc.train.seed)?;
    out.write(BENCHMARK_FILE, &report.to_text())?;
    Ok(())
}

/// Result of one randomized gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckCase {
    pub family: Family,
    pub alpha: AlphaKind,
    pub params: usize,
    pub max_relative_error: f64,
    /// Parameter block holding the worst coordinate.
    pub worst_block: String,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// Random toy problem: dims at most 8, universe at most 6 answers.
pub fn gradcheck_case(family: Family, alpha: AlphaKind, seed: u64) -> Result<GradcheckCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let word_dim = rng.gen_range(2..=8);
    let feature_dim = rng.gen_range(2..=8);
    let answers: Vec<String> = (0..rng.gen_range(2..=6)).map(|i| format!("w{i} w{}", i + 1)).collect();
    let table = random_table(word_dim, answers.len() + 4, rng.gen())?;
    let mut features = FeatureStore::new(feature_dim)?;
    let mut triplets = Vec::new();
    for n in 0..rng.gen_range(1..=4) {
        let id = format!("i{n}");
        let f: Vec<f64> = (0..feature_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        features.insert(&id, &f)?;
        let k = rng.gen_range(0..answers.len());
        let mut correct = vec![answers[k].as_str()];
        if rng.gen_bool(0.5) {
            correct.push(answers[(k + 1) % answers.len()].as_str());
        }
        correct.push(answers[k].as_str());
        let q = format!("w{} w{}", rng.gen_range(0..table.len()), rng.gen_range(0..table.len()));
        triplets.push(Triplet::new(id, &q, &correct, &[])?);
    }
    let mut config = TrainConfig::default();
    config.alpha = alpha;
    config.model.family = family;
    config.model.word_dim = word_dim;
    config.model.feature_dim = feature_dim;
    config.model.hidden_dim = rng.gen_range(2..=8);
    config.model.embed_dim = rng.gen_range(2..=8);
    config.model.output_scale = 1.0;
    config.model.finetune_answer = family == Family::Fpmc && rng.gen_bool(0.5);
    if alpha == AlphaKind::Wups {
        let mut sim = SimilarityTable::default();
        for a in &answers {
            for b in &answers {
                if a < b {
                    sim.insert(a, b, rng.gen_range(0.8..1.0))?;
                }
            }
        }
        config.similarity = Some(sim);
    }
    let rule: WeightingRule = config.weighting_rule()?;
    let classes = (family == Family::Cls).then(|| answers.clone());
    let mut model = Model::init(&config.model, &table, classes, rng.gen())?;
    // Move biases off zero so that no hidden unit sits exactly on the relu kink.
    let mut x = flatten(&model.params);
    for v in &mut x {
        *v += rng.gen_range(-0.1..0.1);
    }
    assign_flat(&mut model.params, &x)?;
    let batch: Vec<&Triplet> = triplets.iter().collect();
    let universe = match family {
        Family::Cls => MiniUniverse::from_answers(answers.clone())?,
        _ => {
            let mut u = build_mini_universe(&batch);
            u.extend_sampled(answers.iter().cloned());
            u
        }
    };
    let dropout_seed: u64 = rng.gen();
    let mut probe = model.clone();
    let check = grad_check(
        |p| {
            assign_flat(&mut probe.params, p)?;
            let o = batch_objective(&probe, &batch, &universe, &features, &table, &rule, dropout_seed)?;
            Ok((o.loss, flatten(&o.grads)))
        },
        &x,
        GRADCHECK_STEP,
    )?;
    let mut offset = 0;
    let mut worst_block = String::new();
    for block in model.params.blocks() {
        offset += block.values.len();
        if check.worst_index < offset {
            worst_block = block.name;
            break;
        }
    }
    Ok(GradcheckCase {
        family,
        alpha,
        params: x.len(),
        worst_block,
        max_relative_error: check.max_relative_error,
        worst_analytic: check.analytic[check.worst_index],
        worst_numeric: check.numeric[check.worst_index],
    })
}

/// Runs `cases` randomized checks for every family and weighting rule, with
/// per-case seeds drawn from `seed`. Returns `(case index, result)` pairs.
pub fn gradcheck_suite(seed: u64, cases: usize) -> Result<Vec<(usize, GradcheckCase)>> {
    let mut seed_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for family in [Family::Fpmc, Family::Upmc, Family::Cls] {
        for alpha in [AlphaKind::OneHot, AlphaKind::MultiHot, AlphaKind::Soft, AlphaKind::Wups] {
            for case in 0..cases {
                out.push((case, gradcheck_case(family, alpha, seed_rng.gen())?));
            }
        }
    }
    Ok(out)
}

fn gradcheck_cmd(rc: &RunConfig, a: &GradcheckArgs, out: &RunDir, _: &mut Manifest) -> Result<()> {
    let mut csv = String::from("family,alpha,case,params,max_relative_error,worst_block,worst_analytic,worst_numeric\n");
    let mut worst = 0.0f64;
    for (case, r) in gradcheck_suite(rc.train.seed, a.cases)? {
        worst = worst.max(r.max_relative_error);
        let _ = writeln!(
            csv,
            "{},{},{case},{},{:e},{},{:e},{:e}",
            r.family, r.alpha, r.params, r.max_relative_error, r.worst_block, r.worst_analytic, r.worst_numeric
        );
    }
    out.write(GRADCHECK_FILE, &csv)?;
    if worst > GRADCHECK_TOLERANCE {
        return Err(Error::Numeric(format!(
            "gradient check failed: max relative error {worst:e} > {GRADCHECK_TOLERANCE:e}"
        )));
    }
    Ok(())
}

fn export_cmd(rc: &RunConfig, a: &ExportArgs, out: &RunDir, manifest: &mut Manifest) -> Result<()> {
    let (model, vocab) = load_model(&a.checkpoint, manifest)?;
    if !matches!(model.params, ModelParams::Fpmc { .. }) {
        return Err(Error::Family(format!("cannot export answer embeddings of a {} model", model.family())));
    }
    let table = load_words(rc, manifest)?;
    let answers = universe_for(a.candidates.as_deref(), &vocab, manifest)?;
    export_embeddings(&model, &answers, &table, &out.path.join(EMBEDDINGS_FILE))?;
    Ok(())
}

fn overlap_cmd(_: &RunConfig, a: &OverlapArgs, out: &RunDir, manifest: &mut Manifest) -> Result<()> {
    if a.k_list.contains(&0) {
        return Err(Error::Argument("k values must be positive".into()));
    }
    let mut vocabs = Vec::new();
    for p in [&a.first, &a.second] {
        manifest.input(p)?;
        vocabs.push(build_answer_vocabulary(&read_dataset(p)?, None)?);
    }
    let stats = answer_overlap_stats(&vocabs[0], &vocabs[1], &a.k_list);
    let mut csv = String::from("k,common\n");
    for (k, c) in &stats.per_k {
        let _ = writeln!(csv, "{k},{c}");
    }
    let _ = writeln!(csv, "all,{}", stats.full);
    out.write(OVERLAP_FILE, &csv)?;
    Ok(())
}
