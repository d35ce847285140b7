//! Adaptive-moment optimizer with bias correction.

use super::params::Gradients;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    config: AdamConfig,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    step: u64,
}

impl OptimizerState {
    /// Fresh state with zero moments shaped like `params`.
    pub fn new(config: AdamConfig, params: &[&[f64]]) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            config,
            first_moment: zeros.clone(),
            second_moment: zeros,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &Gradients) -> Result<()> {
        grads.check_matches(params)?;
        if params.len() != self.first_moment.len()
            || params
                .iter()
                .zip(&self.first_moment)
                .any(|(p, m)| p.len() != m.len())
        {
            return Err(Error::shape("parameters do not match optimizer state"));
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);

        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads.tensors())
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
