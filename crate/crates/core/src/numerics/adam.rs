use super::params::ParamSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &impl ParamSet, config: AdamConfig) -> Self {
        let shapes: Vec<usize> = params.blocks().iter().map(|b| b.values.len()).collect();
        Self {
            config,
            step: 0,
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. Gradients are validated before anything is
    /// mutated, so a rejected step leaves both state and parameters intact.
    pub fn step<P: ParamSet, G: ParamSet>(&mut self, params: &mut P, grads: &G, lr: f64) -> Result<()> {
        let grad_blocks = grads.blocks();
        if grad_blocks.len() != self.first.len() {
            return Err(Error::Argument(format!(
                "gradient has {} blocks, optimizer tracks {}",
                grad_blocks.len(),
                self.first.len()
            )));
        }
        for (block, m) in grad_blocks.iter().zip(&self.first) {
            if block.values.len() != m.len() {
                return Err(Error::Argument(format!(
                    "gradient block {} has {} values, expected {}",
                    block.name,
                    block.values.len(),
                    m.len()
                )));
            }
            if block.values.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient in block {}",
                    block.name
                )));
            }
        }
        let mut param_blocks = params.blocks_mut();
        if param_blocks.len() != self.first.len()
            || param_blocks
                .iter()
                .zip(&self.first)
                .any(|(p, m)| p.values.len() != m.len())
        {
            return Err(Error::Argument(
                "parameter shapes differ from optimizer state".into(),
            ));
        }

        self.step += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let correction1 = 1.0 - beta1.powi(t);
        let correction2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in param_blocks
            .iter_mut()
            .zip(&grad_blocks)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for i in 0..m.len() {
                let gi = g.values[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / correction1;
                let v_hat = v[i] / correction2;
                p.values[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{DenseLayer, Matrix};

    fn scalar(value: f64) -> DenseLayer {
        DenseLayer {
            weight: Matrix::from_vec(1, 1, vec![value]).unwrap(),
            bias: vec![],
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar(2.0);
        let g = scalar(0.0);
        let mut state = AdamState::new(&p, AdamConfig::default());
        state.step(&mut p, &g, 0.1).unwrap();
        assert_eq!(p.weight.get(0, 0), 2.0);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar(0.0);
        let g = scalar(1.0);
        let mut state = AdamState::new(&p, AdamConfig::default());
        state.step(&mut p, &g, 0.1).unwrap();
        // m̂ = 1, v̂ = 1 → Δ = 0.1 / (1 + 1e-8)
        assert!((p.weight.get(0, 0) + 0.1).abs() < 1e-8);
    }

    #[test]
    fn non_finite_gradient_names_block() {
        let mut p = scalar(0.0);
        let g = scalar(f64::NAN);
        let mut state = AdamState::new(&p, AdamConfig::default());
        let err = state.step(&mut p, &g, 0.1).unwrap_err();
        assert!(err.to_string().contains("dense.weight"));
        assert_eq!(state.step_count(), 0);
    }

    #[test]
    fn identical_runs_identical_trajectories() {
        let run = || {
            let mut p = scalar(1.0);
            let mut state = AdamState::new(&p, AdamConfig::default());
            let mut trace = Vec::new();
            for k in 0..20 {
                let g = scalar((k as f64).sin() + p.weight.get(0, 0));
                state.step(&mut p, &g, 0.01).unwrap();
                trace.push(p.weight.get(0, 0).to_bits());
            }
            trace
        };
        assert_eq!(run(), run());
    }
}
