//! The two embedding towers.
//!
//! `f(i, q)`: the question is the mean of its word vectors, passed through a
//! square linear map, `tanh` and dropout; it is concatenated with the image
//! feature and fed to a one-hidden-layer perceptron.
//!
//! `g(a)`: either the same kind of perceptron over the mean of the answer's
//! word vectors (`learned`), or that mean itself (`fixed`).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::WordEmbeddingTable;
use crate::error::{Error, Result};
use crate::model::{AnswerMode, ModelConfig};
use crate::numerics::{
    draw_keep_mask, dropout_gate, DenseLayer, Mlp, MlpCache, ParamBlock, ParamBlockMut, ParamSet,
};

/// Mean of the vectors of tokens present in `table`; absent tokens are
/// skipped and an all-absent list maps to the zero vector.
pub fn embed_text<S: AsRef<str>>(tokens: &[S], table: &WordEmbeddingTable) -> Vec<f64> {
    let rows = present_rows(tokens, table);
    average_rows(&rows, table.flat(), table.dim())
}

fn present_rows<S: AsRef<str>>(tokens: &[S], table: &WordEmbeddingTable) -> Vec<usize> {
    tokens
        .iter()
        .filter_map(|t| table.row_of(t.as_ref()))
        .collect()
}

fn average_rows(rows: &[usize], flat: &[f64], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    if rows.is_empty() {
        return out;
    }
    for &r in rows {
        for (o, v) in out.iter_mut().zip(&flat[r * dim..(r + 1) * dim]) {
            *o += v;
        }
    }
    let n = rows.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

fn spread_to_rows(rows: &[usize], grad_avg: &[f64], grad_table: &mut [f64]) {
    let dim = grad_avg.len();
    let n = rows.len() as f64;
    for &r in rows {
        for (g, ga) in grad_table[r * dim..(r + 1) * dim].iter_mut().zip(grad_avg) {
            *g += ga / n;
        }
    }
}

fn table_shape(len: usize, dim: usize) -> (usize, usize) {
    if dim == 0 {
        (1, len)
    } else {
        (len / dim, dim)
    }
}

fn check_table_copy(copy: &Option<Vec<f64>>, table: &WordEmbeddingTable) -> Result<()> {
    match copy {
        Some(c) if c.len() != table.flat().len() => Err(Error::Contract(format!(
            "trainable word table has {} values, word table has {}",
            c.len(),
            table.flat().len()
        ))),
        _ => Ok(()),
    }
}

/// Question side: mean word vector → linear → tanh → dropout.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionEncoder {
    pub transform: DenseLayer,
    /// Fine-tuned copy of the word table, row-aligned with it.
    pub word_table: Option<Vec<f64>>,
    pub dropout_rate: f64,
}

#[derive(Debug, Clone)]
pub struct QuestionCache {
    rows: Vec<usize>,
    average: Vec<f64>,
    activation: Vec<f64>,
    gate: Vec<f64>,
}

impl QuestionEncoder {
    pub fn dim(&self) -> usize {
        self.transform.out_dim()
    }

    fn table_dim(&self) -> usize {
        self.transform.in_dim()
    }

    pub fn draw_mask<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<bool> {
        draw_keep_mask(self.dim(), self.dropout_rate, rng)
    }

    pub fn forward<S: AsRef<str>>(
        &self,
        tokens: &[S],
        table: &WordEmbeddingTable,
        mask: Option<&[bool]>,
        training: bool,
    ) -> Result<(Vec<f64>, QuestionCache)> {
        if table.dim() != self.transform.in_dim() {
            return Err(Error::Argument(format!(
                "word table dim {} does not match question transform input {}",
                table.dim(),
                self.transform.in_dim()
            )));
        }
        check_table_copy(&self.word_table, table)?;
        let rows = present_rows(tokens, table);
        let source = self.word_table.as_deref().unwrap_or(table.flat());
        let average = average_rows(&rows, source, table.dim());
        let activation: Vec<f64> = self
            .transform
            .forward(&average)
            .into_iter()
            .map(f64::tanh)
            .collect();
        let gate = dropout_gate(self.dim(), self.dropout_rate, mask, training)?;
        let out = activation.iter().zip(&gate).map(|(a, g)| a * g).collect();
        Ok((
            out,
            QuestionCache {
                rows,
                average,
                activation,
                gate,
            },
        ))
    }

    pub fn backward_into(&self, cache: &QuestionCache, grad_out: &[f64], grads: &mut QuestionEncoder) {
        let grad_pre: Vec<f64> = grad_out
            .iter()
            .zip(&cache.gate)
            .zip(&cache.activation)
            .map(|((g, m), a)| g * m * (1.0 - a * a))
            .collect();
        let mut grad_avg = vec![0.0; self.transform.in_dim()];
        self.transform
            .backward_acc(&cache.average, &grad_pre, &mut grads.transform, Some(&mut grad_avg));
        if let Some(gt) = grads.word_table.as_mut() {
            spread_to_rows(&cache.rows, &grad_avg, gt);
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            transform: DenseLayer::zeros(self.transform.out_dim(), self.transform.in_dim()),
            word_table: self.word_table.as_ref().map(|t| vec![0.0; t.len()]),
            dropout_rate: self.dropout_rate,
        }
    }

    pub(crate) fn push_blocks<'a>(&'a self, prefix: &str, out: &mut Vec<ParamBlock<'a>>) {
        self.transform.push_blocks(&format!("{prefix}.transform"), out);
        if let Some(t) = &self.word_table {
            out.push(ParamBlock {
                name: format!("{prefix}.word_table"),
                shape: table_shape(t.len(), self.table_dim()),
                values: t,
            });
        }
    }

    pub(crate) fn push_blocks_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamBlockMut<'a>>) {
        let dim = self.table_dim();
        self.transform.push_blocks_mut(&format!("{prefix}.transform"), out);
        if let Some(t) = &mut self.word_table {
            let shape = table_shape(t.len(), dim);
            out.push(ParamBlockMut {
                name: format!("{prefix}.word_table"),
                shape,
                values: t,
            });
        }
    }
}

/// Parameters θ of the joint image-question tower.
#[derive(Debug, Clone, PartialEq)]
pub struct FParams {
    pub question: QuestionEncoder,
    pub fuse: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FMasks {
    pub question: Vec<bool>,
    pub fuse: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct FCache {
    question: QuestionCache,
    fuse: MlpCache,
}

impl FParams {
    pub fn feature_dim(&self) -> usize {
        self.fuse.in_dim() - self.question.dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.fuse.out_dim()
    }

    pub fn draw_masks<R: Rng + ?Sized>(&self, rng: &mut R) -> FMasks {
        FMasks {
            question: self.question.draw_mask(rng),
            fuse: self.fuse.draw_mask(rng),
        }
    }

    pub fn forward<S: AsRef<str>>(
        &self,
        image_feat: &[f64],
        question: &[S],
        table: &WordEmbeddingTable,
        masks: Option<&FMasks>,
        training: bool,
    ) -> Result<(Vec<f64>, FCache)> {
        if image_feat.len() != self.feature_dim() {
            return Err(Error::Argument(format!(
                "image feature has length {}, expected {}",
                image_feat.len(),
                self.feature_dim()
            )));
        }
        let (qvec, qcache) = self.question.forward(
            question,
            table,
            masks.map(|m| m.question.as_slice()),
            training,
        )?;
        let mut input = Vec::with_capacity(self.fuse.in_dim());
        input.extend_from_slice(image_feat);
        input.extend_from_slice(&qvec);
        let (out, fcache) = self
            .fuse
            .forward(&input, masks.map(|m| m.fuse.as_slice()), training)?;
        Ok((
            out,
            FCache {
                question: qcache,
                fuse: fcache,
            },
        ))
    }

    pub fn backward_into(&self, cache: &FCache, grad_out: &[f64], grads: &mut FParams) -> Result<()> {
        let mut grad_in = vec![0.0; self.fuse.in_dim()];
        self.fuse
            .backward_into(&cache.fuse, grad_out, &mut grads.fuse, Some(&mut grad_in))?;
        let feat = self.feature_dim();
        self.question
            .backward_into(&cache.question, &grad_in[feat..], &mut grads.question);
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            question: self.question.zeros_like(),
            fuse: self.fuse.zeros_like(),
        }
    }

    pub(crate) fn push_blocks<'a>(&'a self, prefix: &str, out: &mut Vec<ParamBlock<'a>>) {
        self.question.push_blocks(&format!("{prefix}.question"), out);
        self.fuse.push_blocks(&format!("{prefix}.fuse"), out);
    }

    pub(crate) fn push_blocks_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamBlockMut<'a>>) {
        self.question.push_blocks_mut(&format!("{prefix}.question"), out);
        self.fuse.push_blocks_mut(&format!("{prefix}.fuse"), out);
    }
}

/// Inference-mode joint embedding `f(i, q)`.
pub fn encode_iq<S: AsRef<str>>(
    image_feat: &[f64],
    question: &[S],
    params: &FParams,
    table: &WordEmbeddingTable,
) -> Result<Vec<f64>> {
    params
        .forward(image_feat, question, table, None, false)
        .map(|(v, _)| v)
}

/// Parameters φ of the answer tower.
#[derive(Debug, Clone, PartialEq)]
pub struct GParams {
    pub mode: AnswerMode,
    /// Present iff `mode` is learned.
    pub mlp: Option<Mlp>,
    /// Fine-tuned answer-side word table; absent in the default setup,
    /// where answer word vectors stay fixed.
    pub word_table: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct GCache {
    rows: Vec<usize>,
    mlp: Option<MlpCache>,
    average: Vec<f64>,
}

impl GCache {
    /// The embedding without the output-layer bias, see
    /// [`MlpCache::unbiased_output`].
    pub fn unbiased_output(&self) -> &[f64] {
        self.mlp.as_ref().map_or(&self.average, MlpCache::unbiased_output)
    }
}

impl GParams {
    fn table_dim(&self) -> usize {
        self.mlp.as_ref().map_or(1, Mlp::in_dim)
    }

    pub fn draw_mask<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<Vec<bool>> {
        self.mlp.as_ref().map(|m| m.draw_mask(rng))
    }

    pub fn embed_dim(&self, word_dim: usize) -> usize {
        self.mlp.as_ref().map_or(word_dim, Mlp::out_dim)
    }

    pub fn forward(
        &self,
        answer: &str,
        table: &WordEmbeddingTable,
        mask: Option<&[bool]>,
        training: bool,
    ) -> Result<(Vec<f64>, GCache)> {
        check_table_copy(&self.word_table, table)?;
        let tokens: Vec<&str> = answer.split_whitespace().collect();
        let rows = present_rows(&tokens, table);
        let source = self.word_table.as_deref().unwrap_or(table.flat());
        let average = average_rows(&rows, source, table.dim());
        match &self.mlp {
            None => Ok((
                average.clone(),
                GCache {
                    rows,
                    mlp: None,
                    average,
                },
            )),
            Some(mlp) => {
                let (out, cache) = mlp.forward(&average, mask, training)?;
                Ok((
                    out,
                    GCache {
                        rows,
                        mlp: Some(cache),
                        average: Vec::new(),
                    },
                ))
            }
        }
    }

    pub fn backward_into(&self, cache: &GCache, grad_out: &[f64], grads: &mut GParams) -> Result<()> {
        let (Some(mlp), Some(mcache), Some(gmlp)) = (&self.mlp, &cache.mlp, grads.mlp.as_mut()) else {
            return Ok(());
        };
        let mut grad_avg = vec![0.0; mlp.in_dim()];
        mlp.backward_into(mcache, grad_out, gmlp, Some(&mut grad_avg))?;
        if let Some(gt) = grads.word_table.as_mut() {
            spread_to_rows(&cache.rows, &grad_avg, gt);
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            mode: self.mode,
            mlp: self.mlp.as_ref().map(Mlp::zeros_like),
            word_table: self.word_table.as_ref().map(|t| vec![0.0; t.len()]),
        }
    }

    pub(crate) fn push_blocks<'a>(&'a self, prefix: &str, out: &mut Vec<ParamBlock<'a>>) {
        if let Some(m) = &self.mlp {
            m.push_blocks(&format!("{prefix}.mlp"), out);
        }
        if let Some(t) = &self.word_table {
            out.push(ParamBlock {
                name: format!("{prefix}.word_table"),
                shape: table_shape(t.len(), self.table_dim()),
                values: t,
            });
        }
    }

    pub(crate) fn push_blocks_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamBlockMut<'a>>) {
        let dim = self.table_dim();
        if let Some(m) = &mut self.mlp {
            m.push_blocks_mut(&format!("{prefix}.mlp"), out);
        }
        if let Some(t) = &mut self.word_table {
            let shape = table_shape(t.len(), dim);
            out.push(ParamBlockMut {
                name: format!("{prefix}.word_table"),
                shape,
                values: t,
            });
        }
    }
}

/// Inference-mode answer embedding `g(a)`.
pub fn encode_answer(answer: &str, params: &GParams, table: &WordEmbeddingTable) -> Result<Vec<f64>> {
    params.forward(answer, table, None, false).map(|(v, _)| v)
}

macro_rules! param_set_via_blocks {
    ($ty:ty, $prefix:literal) => {
        impl ParamSet for $ty {
            fn blocks(&self) -> Vec<ParamBlock<'_>> {
                let mut out = Vec::new();
                self.push_blocks($prefix, &mut out);
                out
            }

            fn blocks_mut(&mut self) -> Vec<ParamBlockMut<'_>> {
                let mut out = Vec::new();
                self.push_blocks_mut($prefix, &mut out);
                out
            }
        }
    };
}

param_set_via_blocks!(QuestionEncoder, "question");
param_set_via_blocks!(FParams, "f");
param_set_via_blocks!(GParams, "g");

pub(crate) fn init_question<R: Rng + ?Sized>(
    config: &ModelConfig,
    table: &WordEmbeddingTable,
    rng: &mut R,
) -> QuestionEncoder {
    QuestionEncoder {
        transform: DenseLayer::glorot(config.word_dim, config.word_dim, rng),
        word_table: config.finetune_question.then(|| table.flat().to_vec()),
        dropout_rate: config.dropout_rate,
    }
}

pub(crate) fn init_f<R: Rng + ?Sized>(
    config: &ModelConfig,
    table: &WordEmbeddingTable,
    rng: &mut R,
) -> FParams {
    let question = init_question(config, table, rng);
    let fuse = Mlp::glorot(
        config.feature_dim + config.word_dim,
        config.hidden_dim,
        config.effective_embed_dim(),
        config.dropout_rate,
        config.output_scale,
        rng,
    );
    FParams { question, fuse }
}

/// Seeded initialization of both towers.
pub fn init_params(config: &ModelConfig, table: &WordEmbeddingTable, seed: u64) -> Result<(FParams, GParams)> {
    config.validate()?;
    config.check_table(table)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = init_f(config, table, &mut rng);
    let g = match config.answer_mode {
        AnswerMode::Fixed => GParams {
            mode: AnswerMode::Fixed,
            mlp: None,
            word_table: None,
        },
        AnswerMode::Learned => GParams {
            mode: AnswerMode::Learned,
            mlp: Some(Mlp::glorot(
                config.word_dim,
                config.hidden_dim,
                config.embed_dim,
                config.dropout_rate,
                config.output_scale,
                &mut rng,
            )),
            word_table: config.finetune_answer.then(|| table.flat().to_vec()),
        },
    };
    Ok((f, g))
}
