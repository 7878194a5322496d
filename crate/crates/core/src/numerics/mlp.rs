use rand::Rng;

use super::matrix::Matrix;
use super::params::{ParamBlock, ParamBlockMut, ParamSet};
use crate::error::{Error, Result};

/// Affine map `y = W x + b` with `W` shaped `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot<R: Rng + ?Sized>(out_dim: usize, in_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let mut layer = Self::zeros(out_dim, in_dim);
        for w in layer.weight.as_mut_slice() {
            *w = rng.gen_range(-limit..=limit);
        }
        layer
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.weight.matvec(x);
        for (yi, bi) in y.iter_mut().zip(&self.bias) {
            *yi += bi;
        }
        y
    }

    /// Accumulates `∂/∂W`, `∂/∂b` into `grad` and `Wᵀ·grad_out` into `grad_input`.
    pub fn backward_acc(
        &self,
        x: &[f64],
        grad_out: &[f64],
        grad: &mut DenseLayer,
        grad_input: Option<&mut [f64]>,
    ) {
        grad.weight.add_outer(grad_out, x);
        for (gb, g) in grad.bias.iter_mut().zip(grad_out) {
            *gb += g;
        }
        if let Some(gi) = grad_input {
            self.weight.matvec_t_acc(grad_out, gi);
        }
    }

    pub(crate) fn push_blocks<'a>(&'a self, prefix: &str, out: &mut Vec<ParamBlock<'a>>) {
        out.push(ParamBlock {
            name: format!("{prefix}.weight"),
            shape: (self.weight.rows(), self.weight.cols()),
            values: self.weight.as_slice(),
        });
        out.push(ParamBlock {
            name: format!("{prefix}.bias"),
            shape: (1, self.bias.len()),
            values: &self.bias,
        });
    }

    pub(crate) fn push_blocks_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamBlockMut<'a>>) {
        out.push(ParamBlockMut {
            name: format!("{prefix}.weight"),
            shape: (self.weight.rows(), self.weight.cols()),
            values: self.weight.as_mut_slice(),
        });
        out.push(ParamBlockMut {
            name: format!("{prefix}.bias"),
            shape: (1, self.bias.len()),
            values: &mut self.bias,
        });
    }
}

impl ParamSet for DenseLayer {
    fn blocks(&self) -> Vec<ParamBlock<'_>> {
        let mut out = Vec::new();
        self.push_blocks("dense", &mut out);
        out
    }

    fn blocks_mut(&mut self) -> Vec<ParamBlockMut<'_>> {
        let mut out = Vec::new();
        self.push_blocks_mut("dense", &mut out);
        out
    }
}

/// One-hidden-layer perceptron:
/// `scale · (W₂ · (mask ⊙ relu(W₁ x + b₁)) + b₂)`.
///
/// At inference the binary mask is replaced by the constant keep
/// probability `1 − dropout_rate` on every hidden unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub hidden: DenseLayer,
    pub output: DenseLayer,
    pub dropout_rate: f64,
    pub output_scale: f64,
}

/// Everything the backward pass needs from one forward call.
#[derive(Debug, Clone)]
pub struct MlpCache {
    input: Vec<f64>,
    pre_activation: Vec<f64>,
    gate: Vec<f64>,
    activation: Vec<f64>,
    /// `scale · W₂ · activation`, the output minus its bias term.
    unbiased: Vec<f64>,
}

impl MlpCache {
    pub fn input(&self) -> &[f64] {
        &self.input
    }

    /// Output without the output-layer bias. A bias shared by every
    /// candidate cannot move a softmax, so losses built from these values
    /// are exactly independent of it.
    pub fn unbiased_output(&self) -> &[f64] {
        &self.unbiased
    }
}

/// Gradient container shaped like [`Mlp`]'s learnable layers.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub hidden: DenseLayer,
    pub output: DenseLayer,
}

impl Mlp {
    pub fn zeros(in_dim: usize, hidden_dim: usize, out_dim: usize) -> Self {
        Self {
            hidden: DenseLayer::zeros(hidden_dim, in_dim),
            output: DenseLayer::zeros(out_dim, hidden_dim),
            dropout_rate: 0.5,
            output_scale: 10.0,
        }
    }

    pub fn glorot<R: Rng + ?Sized>(
        in_dim: usize,
        hidden_dim: usize,
        out_dim: usize,
        dropout_rate: f64,
        output_scale: f64,
        rng: &mut R,
    ) -> Self {
        let hidden = DenseLayer::glorot(hidden_dim, in_dim, rng);
        let output = DenseLayer::glorot(out_dim, hidden_dim, rng);
        Self {
            hidden,
            output,
            dropout_rate,
            output_scale,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.hidden.in_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden.out_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.output.out_dim()
    }

    pub fn check_shapes(&self) -> Result<()> {
        if self.hidden.out_dim() != self.output.in_dim() {
            return Err(Error::Argument(format!(
                "hidden layer emits {} units but output layer expects {}",
                self.hidden.out_dim(),
                self.output.in_dim()
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Argument(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if !(self.output_scale > 0.0) {
            return Err(Error::Argument(format!(
                "output scale {} must be positive",
                self.output_scale
            )));
        }
        Ok(())
    }

    /// Draws a keep-mask for the hidden layer (`true` = unit kept).
    pub fn draw_mask<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<bool> {
        draw_keep_mask(self.hidden_dim(), self.dropout_rate, rng)
    }

    pub fn forward(
        &self,
        input: &[f64],
        mask: Option<&[bool]>,
        training: bool,
    ) -> Result<(Vec<f64>, MlpCache)> {
        if input.len() != self.in_dim() {
            return Err(Error::Argument(format!(
                "mlp input has length {}, expected {}",
                input.len(),
                self.in_dim()
            )));
        }
        let gate = dropout_gate(self.hidden_dim(), self.dropout_rate, mask, training)?;
        let pre_activation = self.hidden.forward(input);
        let activation: Vec<f64> = pre_activation
            .iter()
            .zip(&gate)
            .map(|(&z, &g)| if z > 0.0 { z * g } else { 0.0 })
            .collect();
        let linear = self.output.weight.matvec(&activation);
        let output = linear
            .iter()
            .zip(&self.output.bias)
            .map(|(l, b)| (l + b) * self.output_scale)
            .collect();
        let unbiased = linear.iter().map(|l| l * self.output_scale).collect();
        let cache = MlpCache {
            input: input.to_vec(),
            pre_activation,
            gate,
            activation,
            unbiased,
        };
        Ok((output, cache))
    }

    pub fn grads_zeros(&self) -> MlpGrads {
        MlpGrads {
            hidden: DenseLayer::zeros(self.hidden.out_dim(), self.hidden.in_dim()),
            output: DenseLayer::zeros(self.output.out_dim(), self.output.in_dim()),
        }
    }

    /// Exact gradients of `grad_output · output` with respect to the
    /// parameters and the input.
    pub fn backward(&self, cache: &MlpCache, grad_output: &[f64]) -> Result<(MlpGrads, Vec<f64>)> {
        let mut grads = self.grads_zeros();
        let mut grad_input = vec![0.0; self.in_dim()];
        self.backward_acc(cache, grad_output, &mut grads, Some(&mut grad_input))?;
        Ok((grads, grad_input))
    }

    /// Like [`Mlp::backward`] but accumulates into caller-owned buffers.
    pub fn backward_acc(
        &self,
        cache: &MlpCache,
        grad_output: &[f64],
        grads: &mut MlpGrads,
        grad_input: Option<&mut [f64]>,
    ) -> Result<()> {
        if cache.input.len() != self.in_dim()
            || cache.pre_activation.len() != self.hidden_dim()
            || cache.gate.len() != self.hidden_dim()
        {
            return Err(Error::Contract(
                "forward cache does not match this network's shapes".into(),
            ));
        }
        if grad_output.len() != self.out_dim() {
            return Err(Error::Argument(format!(
                "output gradient has length {}, expected {}",
                grad_output.len(),
                self.out_dim()
            )));
        }
        self.backward_layers(cache, grad_output, &mut grads.hidden, &mut grads.output, grad_input)
    }

    /// Accumulates into another `Mlp` used as a gradient container.
    pub fn backward_into(
        &self,
        cache: &MlpCache,
        grad_output: &[f64],
        grads: &mut Mlp,
        grad_input: Option<&mut [f64]>,
    ) -> Result<()> {
        if cache.input.len() != self.in_dim()
            || cache.pre_activation.len() != self.hidden_dim()
            || cache.gate.len() != self.hidden_dim()
        {
            return Err(Error::Contract(
                "forward cache does not match this network's shapes".into(),
            ));
        }
        if grad_output.len() != self.out_dim() {
            return Err(Error::Argument(format!(
                "output gradient has length {}, expected {}",
                grad_output.len(),
                self.out_dim()
            )));
        }
        self.backward_layers(cache, grad_output, &mut grads.hidden, &mut grads.output, grad_input)
    }

    fn backward_layers(
        &self,
        cache: &MlpCache,
        grad_output: &[f64],
        hidden: &mut DenseLayer,
        output: &mut DenseLayer,
        grad_input: Option<&mut [f64]>,
    ) -> Result<()> {
        if let Some(gi) = grad_input.as_deref() {
            if gi.len() != self.in_dim() {
                return Err(Error::Argument("input gradient buffer has wrong length".into()));
            }
        }
        if hidden.weight.rows() != self.hidden_dim()
            || hidden.weight.cols() != self.in_dim()
            || output.weight.rows() != self.out_dim()
            || output.weight.cols() != self.hidden_dim()
        {
            return Err(Error::Argument("gradient container has wrong shapes".into()));
        }
        let scaled: Vec<f64> = grad_output.iter().map(|g| g * self.output_scale).collect();
        let mut grad_act = vec![0.0; self.hidden_dim()];
        self.output
            .backward_acc(&cache.activation, &scaled, output, Some(&mut grad_act));
        let grad_pre: Vec<f64> = grad_act
            .iter()
            .zip(&cache.pre_activation)
            .zip(&cache.gate)
            .map(|((&ga, &z), &g)| if z > 0.0 { ga * g } else { 0.0 })
            .collect();
        self.hidden.backward_acc(&cache.input, &grad_pre, hidden, grad_input);
        Ok(())
    }

    /// Zeroed copy usable as a gradient container.
    pub fn zeros_like(&self) -> Mlp {
        Mlp {
            hidden: DenseLayer::zeros(self.hidden.out_dim(), self.hidden.in_dim()),
            output: DenseLayer::zeros(self.output.out_dim(), self.output.in_dim()),
            dropout_rate: self.dropout_rate,
            output_scale: self.output_scale,
        }
    }

    pub(crate) fn push_blocks<'a>(&'a self, prefix: &str, out: &mut Vec<ParamBlock<'a>>) {
        self.hidden.push_blocks(&format!("{prefix}.hidden"), out);
        self.output.push_blocks(&format!("{prefix}.output"), out);
    }

    pub(crate) fn push_blocks_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamBlockMut<'a>>) {
        self.hidden.push_blocks_mut(&format!("{prefix}.hidden"), out);
        self.output.push_blocks_mut(&format!("{prefix}.output"), out);
    }
}

impl MlpGrads {
    pub(crate) fn push_blocks<'a>(&'a self, prefix: &str, out: &mut Vec<ParamBlock<'a>>) {
        self.hidden.push_blocks(&format!("{prefix}.hidden"), out);
        self.output.push_blocks(&format!("{prefix}.output"), out);
    }

    pub(crate) fn push_blocks_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamBlockMut<'a>>) {
        self.hidden.push_blocks_mut(&format!("{prefix}.hidden"), out);
        self.output.push_blocks_mut(&format!("{prefix}.output"), out);
    }
}

impl ParamSet for Mlp {
    fn blocks(&self) -> Vec<ParamBlock<'_>> {
        let mut out = Vec::new();
        self.push_blocks("mlp", &mut out);
        out
    }

    fn blocks_mut(&mut self) -> Vec<ParamBlockMut<'_>> {
        let mut out = Vec::new();
        self.push_blocks_mut("mlp", &mut out);
        out
    }
}

impl ParamSet for MlpGrads {
    fn blocks(&self) -> Vec<ParamBlock<'_>> {
        let mut out = Vec::new();
        self.push_blocks("mlp", &mut out);
        out
    }

    fn blocks_mut(&mut self) -> Vec<ParamBlockMut<'_>> {
        let mut out = Vec::new();
        self.push_blocks_mut("mlp", &mut out);
        out
    }
}

pub fn draw_keep_mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<bool> {
    (0..len).map(|_| rng.gen::<f64>() >= rate).collect()
}

/// Per-unit multiplier: the mask during training, `1 − rate` at inference.
pub fn dropout_gate(
    len: usize,
    rate: f64,
    mask: Option<&[bool]>,
    training: bool,
) -> Result<Vec<f64>> {
    if !training {
        return Ok(vec![1.0 - rate; len]);
    }
    match mask {
        Some(m) if m.len() == len => Ok(m.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect()),
        Some(m) => Err(Error::Argument(format!(
            "dropout mask has length {}, expected {len}",
            m.len()
        ))),
        None if rate == 0.0 => Ok(vec![1.0; len]),
        None => Err(Error::Argument(
            "training forward pass with dropout needs a mask".into(),
        )),
    }
}
