//! Model configuration, the three model families, and their checkpoint
//! form.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{AnswerVocabulary, WordEmbeddingTable};
use crate::encoders::{init_f, init_params, init_question, FParams, GParams, QuestionEncoder};
use crate::error::{Error, Result};
use crate::numerics::container::Container;
use crate::numerics::{dot, DenseLayer, Matrix, Mlp, ParamBlock, ParamBlockMut, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Factorized: `f(i, q) · g(a)`.
    Fpmc,
    /// Unfactorized scorer `h(i, q, a)` trained with the same sampled softmax.
    Upmc,
    /// Multi-way classifier over the top-K training answers.
    Cls,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Fpmc => "fpmc",
            Family::Upmc => "upmc",
            Family::Cls => "cls",
        })
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fpmc" => Ok(Family::Fpmc),
            "upmc" => Ok(Family::Upmc),
            "cls" => Ok(Family::Cls),
            _ => Err(Error::Config(format!("unknown family `{s}` (fpmc|upmc|cls)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnswerMode {
    /// Perceptron over the mean answer word vector.
    Learned,
    /// The mean answer word vector itself; no learnable weights.
    Fixed,
}

impl fmt::Display for AnswerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnswerMode::Learned => "learned",
            AnswerMode::Fixed => "fixed",
        })
    }
}

impl FromStr for AnswerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learned" | "learned-mlp" => Ok(AnswerMode::Learned),
            "fixed" | "fixed-average" => Ok(AnswerMode::Fixed),
            _ => Err(Error::Config(format!("unknown g_mode `{s}` (learned|fixed)"))),
        }
    }
}

/// Architecture of one model. Desk-scale defaults; [`ModelConfig::full_scale`]
/// gives the large dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub family: Family,
    pub feature_dim: usize,
    pub word_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub dropout_rate: f64,
    pub output_scale: f64,
    pub answer_mode: AnswerMode,
    pub finetune_question: bool,
    pub finetune_answer: bool,
    /// Number of classes for `cls`.
    pub top_k: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            family: Family::Fpmc,
            feature_dim: 32,
            word_dim: 16,
            hidden_dim: 64,
            embed_dim: 32,
            dropout_rate: 0.5,
            output_scale: 10.0,
            answer_mode: AnswerMode::Learned,
            finetune_question: true,
            finetune_answer: false,
            top_k: 3000,
        }
    }
}

impl ModelConfig {
    pub fn full_scale() -> Self {
        Self {
            feature_dim: 2048,
            word_dim: 300,
            hidden_dim: 4096,
            embed_dim: 1024,
            ..Self::default()
        }
    }

    /// Output dimension of `f`; in fixed answer mode it must match the word
    /// dimension so that inner products with raw mean vectors are defined.
    pub fn effective_embed_dim(&self) -> usize {
        match self.answer_mode {
            AnswerMode::Fixed => self.word_dim,
            AnswerMode::Learned => self.embed_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("feature_dim", self.feature_dim),
            ("word_dim", self.word_dim),
            ("hidden_dim", self.hidden_dim),
            ("embed_dim", self.embed_dim),
            ("top_k", self.top_k),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout_rate)));
        }
        if !(self.output_scale > 0.0 && self.output_scale.is_finite()) {
            return Err(Error::Config("output_scale must be positive".into()));
        }
        if self.finetune_answer && (self.family != Family::Fpmc || self.answer_mode == AnswerMode::Fixed) {
            return Err(Error::Config(
                "finetune_answer needs family = fpmc with g_mode = learned".into(),
            ));
        }
        Ok(())
    }

    pub fn check_table(&self, table: &WordEmbeddingTable) -> Result<()> {
        if table.dim() != self.word_dim {
            return Err(Error::Argument(format!(
                "word table dim {} differs from configured word_dim {}",
                table.dim(),
                self.word_dim
            )));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("family", self.family.to_string()),
            ("feature_dim", self.feature_dim.to_string()),
            ("word_dim", self.word_dim.to_string()),
            ("hidden_dim", self.hidden_dim.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("dropout", format!("{:e}", self.dropout_rate)),
            ("output_scale", format!("{:e}", self.output_scale)),
            ("g_mode", self.answer_mode.to_string()),
            ("finetune_question", self.finetune_question.to_string()),
            ("finetune_answer", self.finetune_answer.to_string()),
            ("top_k", self.top_k.to_string()),
        ]
    }

    /// Applies one `key = value` setting; returns `Ok(false)` for keys that
    /// are not model settings.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "family" => self.family = value.parse()?,
            "feature_dim" => self.feature_dim = parse_value(key, value)?,
            "word_dim" => self.word_dim = parse_value(key, value)?,
            "hidden_dim" => self.hidden_dim = parse_value(key, value)?,
            "embed_dim" => self.embed_dim = parse_value(key, value)?,
            "dropout" => self.dropout_rate = parse_value(key, value)?,
            "output_scale" => self.output_scale = parse_value(key, value)?,
            "g_mode" => self.answer_mode = value.parse()?,
            "finetune_question" => self.finetune_question = parse_value(key, value)?,
            "finetune_answer" => self.finetune_answer = parse_value(key, value)?,
            "top_k" => self.top_k = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

pub(crate) fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

/// Unfactorized scorer: `h([i, question vector, mean answer vector]) ∈ ℝ`.
#[derive(Debug, Clone, PartialEq)]
pub struct UpmcParams {
    pub question: QuestionEncoder,
    pub scorer: Mlp,
}

impl UpmcParams {
    pub fn feature_dim(&self) -> usize {
        self.scorer.in_dim() - 2 * self.question.dim()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            question: self.question.zeros_like(),
            scorer: self.scorer.zeros_like(),
        }
    }
}

/// Classifier head on top of `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClsParams {
    pub f: FParams,
    pub classifier: DenseLayer,
    pub classes: Vec<String>,
}

impl ClsParams {
    pub fn class_index(&self, answer: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == answer)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            f: self.f.zeros_like(),
            classifier: DenseLayer::zeros(self.classifier.out_dim(), self.classifier.in_dim()),
            classes: self.classes.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    Fpmc { f: FParams, g: GParams },
    Upmc(UpmcParams),
    Cls(ClsParams),
}

impl ModelParams {
    pub fn family(&self) -> Family {
        match self {
            ModelParams::Fpmc { .. } => Family::Fpmc,
            ModelParams::Upmc(_) => Family::Upmc,
            ModelParams::Cls(_) => Family::Cls,
        }
    }

    /// Zeroed copy with identical block layout, used for gradients.
    pub fn zeros_like(&self) -> Self {
        match self {
            ModelParams::Fpmc { f, g } => ModelParams::Fpmc {
                f: f.zeros_like(),
                g: g.zeros_like(),
            },
            ModelParams::Upmc(u) => ModelParams::Upmc(u.zeros_like()),
            ModelParams::Cls(c) => ModelParams::Cls(c.zeros_like()),
        }
    }
}

impl ParamSet for ModelParams {
    fn blocks(&self) -> Vec<ParamBlock<'_>> {
        let mut out = Vec::new();
        match self {
            ModelParams::Fpmc { f, g } => {
                f.push_blocks("f", &mut out);
                g.push_blocks("g", &mut out);
            }
            ModelParams::Upmc(u) => {
                u.question.push_blocks("h.question", &mut out);
                u.scorer.push_blocks("h.scorer", &mut out);
            }
            ModelParams::Cls(c) => {
                c.f.push_blocks("f", &mut out);
                c.classifier.push_blocks("cls.classifier", &mut out);
            }
        }
        out
    }

    fn blocks_mut(&mut self) -> Vec<ParamBlockMut<'_>> {
        let mut out = Vec::new();
        match self {
            ModelParams::Fpmc { f, g } => {
                f.push_blocks_mut("f", &mut out);
                g.push_blocks_mut("g", &mut out);
            }
            ModelParams::Upmc(u) => {
                u.question.push_blocks_mut("h.question", &mut out);
                u.scorer.push_blocks_mut("h.scorer", &mut out);
            }
            ModelParams::Cls(c) => {
                c.f.push_blocks_mut("f", &mut out);
                c.classifier.push_blocks_mut("cls.classifier", &mut out);
            }
        }
        out
    }
}

/// A configured model together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Model {
    /// Seeded initialization. `classes` is required for `cls` and ignored
    /// otherwise.
    pub fn init(
        config: &ModelConfig,
        table: &WordEmbeddingTable,
        classes: Option<Vec<String>>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        config.check_table(table)?;
        let params = match config.family {
            Family::Fpmc => {
                let (f, g) = init_params(config, table, seed)?;
                ModelParams::Fpmc { f, g }
            }
            Family::Upmc => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let question = init_question(config, table, &mut rng);
                let scorer = Mlp::glorot(
                    config.feature_dim + 2 * config.word_dim,
                    config.hidden_dim,
                    1,
                    config.dropout_rate,
                    config.output_scale,
                    &mut rng,
                );
                ModelParams::Upmc(UpmcParams { question, scorer })
            }
            Family::Cls => {
                let classes = classes
                    .ok_or_else(|| Error::Argument("cls models need a class list".into()))?;
                if classes.is_empty() {
                    return Err(Error::Argument("cls models need at least one class".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let f = init_f(config, table, &mut rng);
                let classifier = DenseLayer::glorot(classes.len(), f.embed_dim(), &mut rng);
                ModelParams::Cls(ClsParams {
                    f,
                    classifier,
                    classes,
                })
            }
        };
        Ok(Self {
            config: config.clone(),
            params,
        })
    }

    pub fn family(&self) -> Family {
        self.params.family()
    }

    pub fn feature_dim(&self) -> usize {
        match &self.params {
            ModelParams::Fpmc { f, .. } => f.feature_dim(),
            ModelParams::Upmc(u) => u.feature_dim(),
            ModelParams::Cls(c) => c.f.feature_dim(),
        }
    }

    /// Inference-mode scores of each candidate. `None` marks candidates the
    /// model cannot score (answers outside a classifier's class list).
    pub fn score_candidates<S: AsRef<str>>(
        &self,
        image_feat: &[f64],
        question: &[S],
        candidates: &[&str],
        table: &WordEmbeddingTable,
    ) -> Result<Vec<Option<f64>>> {
        match &self.params {
            ModelParams::Fpmc { f, g } => {
                let query = f.forward(image_feat, question, table, None, false)?.0;
                candidates
                    .iter()
                    .map(|a| {
                        let emb = g.forward(a, table, None, false)?.0;
                        Ok(Some(dot(&query, &emb)))
                    })
                    .collect()
            }
            ModelParams::Upmc(u) => {
                if image_feat.len() != u.feature_dim() {
                    return Err(Error::Argument(format!(
                        "image feature has length {}, expected {}",
                        image_feat.len(),
                        u.feature_dim()
                    )));
                }
                let qvec = u.question.forward(question, table, None, false)?.0;
                let mut input = Vec::with_capacity(u.scorer.in_dim());
                input.extend_from_slice(image_feat);
                input.extend_from_slice(&qvec);
                let prefix = input.len();
                candidates
                    .iter()
                    .map(|a| {
                        input.truncate(prefix);
                        let tokens: Vec<&str> = a.split_whitespace().collect();
                        input.extend(crate::encoders::embed_text(&tokens, table));
                        Ok(Some(u.scorer.forward(&input, None, false)?.0[0]))
                    })
                    .collect()
            }
            ModelParams::Cls(c) => {
                let logits = cls_logits(c, image_feat, question, table)?;
                Ok(candidates
                    .iter()
                    .map(|a| c.class_index(a).map(|k| logits[k]))
                    .collect())
            }
        }
    }

    pub fn to_container(&self, vocab: &AnswerVocabulary, extra_meta: &[(String, String)]) -> Container {
        let mut c = Container::default();
        for (k, v) in self.config.to_pairs() {
            c.push_meta(format!("model.{k}"), v);
        }
        for (k, v) in extra_meta {
            c.push_meta(k.clone(), v);
        }
        c.push_meta("vocab.ranked", vocab.ranked_len());
        if let Some(t) = table_rows(&self.params) {
            c.push_meta("model.word_rows", t);
        }
        c.push_list(
            "vocab",
            vocab
                .answers()
                .iter()
                .zip(vocab.frequency())
                .map(|(a, f)| format!("{a}\t{f}"))
                .collect(),
        );
        if let ModelParams::Cls(cls) = &self.params {
            c.push_list("classes", cls.classes.clone());
        }
        for block in self.params.blocks() {
            let (rows, cols) = block.shape;
            let m = Matrix::from_vec(rows, cols, block.values.to_vec()).expect("block shape");
            c.push_tensor(block.name, m);
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<(Self, AnswerVocabulary)> {
        let bad = |msg: String| Error::format("checkpoint", 0, msg);
        let mut config = ModelConfig::default();
        for (k, v) in &c.meta {
            if let Some(key) = k.strip_prefix("model.") {
                if key == "word_rows" {
                    continue;
                }
                if !config.set(key, v).map_err(|e| bad(e.to_string()))? {
                    return Err(bad(format!("unknown model setting `{key}`")));
                }
            }
        }
        config.validate().map_err(|e| bad(e.to_string()))?;
        let word_rows: usize = match c.meta("model.word_rows") {
            Some(v) => v.parse().map_err(|_| bad("bad model.word_rows".into()))?,
            None => 0,
        };
        if word_rows.checked_mul(config.word_dim).is_none() {
            return Err(bad("word table size overflows".into()));
        }

        let mut vocab_answers = Vec::new();
        let mut vocab_freq = Vec::new();
        for line in c.list("vocab").ok_or_else(|| bad("missing vocab list".into()))? {
            let (a, f) = line
                .rsplit_once('\t')
                .ok_or_else(|| bad(format!("bad vocab entry `{line}`")))?;
            vocab_answers.push(a.to_string());
            vocab_freq.push(f.parse().map_err(|_| bad(format!("bad frequency `{f}`")))?);
        }
        let ranked: usize = c
            .require_meta("vocab.ranked")?
            .parse()
            .map_err(|_| bad("bad vocab.ranked".into()))?;
        let vocab = AnswerVocabulary::from_parts(vocab_answers, vocab_freq, ranked)
            .map_err(|e| bad(e.to_string()))?;

        let classes = c.list("classes").map(<[String]>::to_vec);
        // Sizes in the header are untrusted: refuse to allocate more than
        // the tensors actually hold.
        let held: usize = c.tensors.iter().map(|(_, t)| t.as_slice().len()).sum();
        let needed = param_count(&config, word_rows, classes.as_ref().map_or(0, Vec::len));
        if needed.is_none_or(|n| n > held) {
            return Err(bad(format!("checkpoint holds {held} values, its configuration needs more")));
        }
        let mut params = skeleton(&config, word_rows, classes)?;
        let names: Vec<String> = params.blocks().into_iter().map(|b| b.name).collect();
        for block in params.blocks_mut() {
            let t = c.tensor(&block.name)?;
            if (t.rows(), t.cols()) != block.shape && !(t.as_slice().is_empty() && block.values.is_empty()) {
                return Err(bad(format!(
                    "tensor `{}` is {}x{}, expected {}x{}",
                    block.name,
                    t.rows(),
                    t.cols(),
                    block.shape.0,
                    block.shape.1
                )));
            }
            block.values.copy_from_slice(t.as_slice());
        }
        if let Some((extra, _)) = c.tensors.iter().find(|(n, _)| !names.contains(n)) {
            return Err(bad(format!("unexpected tensor `{extra}`")));
        }
        Ok((Self { config, params }, vocab))
    }
}

fn table_rows(params: &ModelParams) -> Option<usize> {
    let (q, g) = match params {
        ModelParams::Fpmc { f, g } => (&f.question, g.word_table.as_ref()),
        ModelParams::Upmc(u) => (&u.question, None),
        ModelParams::Cls(c) => (&c.f.question, None),
    };
    let dim = q.transform.in_dim();
    q.word_table
        .as_ref()
        .or(g)
        .map(|t| if dim == 0 { 0 } else { t.len() / dim })
}

/// Zero parameters with the layout implied by `config`.
/// Number of learnable values [`Model::init`] allocates, or `None` on overflow.
fn param_count(config: &ModelConfig, word_rows: usize, classes: usize) -> Option<usize> {
    let dense = |out: usize, inp: usize| out.checked_mul(inp)?.checked_add(out);
    let mlp = |inp: usize, hidden: usize, out: usize| dense(hidden, inp)?.checked_add(dense(out, hidden)?);
    let w = config.word_dim;
    let table = word_rows.checked_mul(w)?;
    let question = dense(w, w)?.checked_add(if config.finetune_question { table } else { 0 })?;
    let f = || question.checked_add(mlp(config.feature_dim.checked_add(w)?, config.hidden_dim, config.effective_embed_dim())?);
    match config.family {
        Family::Fpmc => {
            let g = match config.answer_mode {
                AnswerMode::Fixed => 0,
                AnswerMode::Learned => mlp(w, config.hidden_dim, config.embed_dim)?
                    .checked_add(if config.finetune_answer { table } else { 0 })?,
            };
            f()?.checked_add(g)
        }
        Family::Upmc => question.checked_add(mlp(config.feature_dim.checked_add(w.checked_mul(2)?)?, config.hidden_dim, 1)?),
        Family::Cls => f()?.checked_add(dense(classes, config.effective_embed_dim())?),
    }
}

fn skeleton(config: &ModelConfig, word_rows: usize, classes: Option<Vec<String>>) -> Result<ModelParams> {
    let mut table = WordEmbeddingTable::new(config.word_dim)?;
    let zero = vec![0.0; config.word_dim];
    for r in 0..word_rows {
        table.insert(&format!("\u{1}{r}"), &zero)?;
    }
    let classes = match config.family {
        Family::Cls => Some(classes.ok_or_else(|| {
            Error::format("checkpoint", 0, "cls checkpoint without class list")
        })?),
        _ => None,
    };
    Ok(Model::init(config, &table, classes, 0)?.params)
}

pub(crate) fn cls_logits<S: AsRef<str>>(
    c: &ClsParams,
    image_feat: &[f64],
    question: &[S],
    table: &WordEmbeddingTable,
) -> Result<Vec<f64>> {
    let emb = c.f.forward(image_feat, question, table, None, false)?.0;
    Ok(c.classifier.forward(&emb))
}
