use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// Momentum for SGD, first-moment decay for Adam.
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::adam(1e-3)
    }
}

impl OptimizerConfig {
    pub fn adam(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            learning_rate,
            beta1: 0.0,
            beta2: 0.0,
            epsilon: 0.0,
        }
    }
}

/// Optimizer accumulators for one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    config: OptimizerConfig,
    step_count: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, num_params: usize) -> Self {
        let second = match config.kind {
            OptimizerKind::Adam => vec![0.0; num_params],
            OptimizerKind::Sgd => Vec::new(),
        };
        Self {
            config,
            step_count: 0,
            first: vec![0.0; num_params],
            second,
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::shape(
                "optimizer step",
                format!("{} params and grads", self.first.len()),
                format!("{} params, {} grads", params.len(), grads.len()),
            ));
        }
        self.step_count += 1;
        let c = self.config;
        match c.kind {
            OptimizerKind::Sgd => {
                if c.beta1 == 0.0 {
                    for (p, g) in params.iter_mut().zip(grads) {
                        *p -= c.learning_rate * g;
                    }
                } else {
                    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.first) {
                        *v = c.beta1 * *v + g;
                        *p -= c.learning_rate * *v;
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.step_count as i32;
                let bc1 = 1.0 - c.beta1.powi(t);
                let bc2 = 1.0 - c.beta2.powi(t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
                }
            }
        }
        Ok(())
    }
}
