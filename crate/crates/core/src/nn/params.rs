//! Flat parameter views shared by the optimizer, gradient clipping and the
//! finite-difference checks.

use crate::error::{Error, Result};

/// A model whose parameters can be visited as an ordered list of flat
/// tensors. The order is stable and matches the order of [`Gradients`]
/// produced by the model's backward pass.
pub trait Parameterized {
    fn parameters(&self) -> Vec<&[f64]>;
    fn parameters_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }
}

/// Gradient tensors, one per parameter tensor, in parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn new(tensors: Vec<Vec<f64>>) -> Self {
        Self { tensors }
    }

    pub fn zeros_like<P: Parameterized + ?Sized>(model: &P) -> Self {
        Self {
            tensors: model
                .parameters()
                .iter()
                .map(|p| vec![0.0; p.len()])
                .collect(),
        }
    }

    pub fn tensors(&self) -> &[Vec<f64>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.tensors
    }

    pub fn into_tensors(self) -> Vec<Vec<f64>> {
        self.tensors
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all tensors so the global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let scale = max_norm / norm;
            for g in self.tensors.iter_mut().flat_map(|t| t.iter_mut()) {
                *g *= scale;
            }
        }
        norm
    }

    pub(crate) fn check_matches(&self, params: &[&mut [f64]]) -> Result<()> {
        if params.len() != self.tensors.len() {
            return Err(Error::shape(format!(
                "{} gradient tensors for {} parameter tensors",
                self.tensors.len(),
                params.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(&self.tensors).enumerate() {
            if p.len() != g.len() {
                return Err(Error::shape(format!(
                    "tensor {i}: {} gradients for {} parameters",
                    g.len(),
                    p.len()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipping_caps_norm() {
        let mut g = Gradients::new(vec![vec![3.0, 0.0], vec![4.0]]);
        let before = g.clip_global_norm(1.0);
        assert_eq!(before, 5.0);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
        assert!((g.tensors()[0][0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn clipping_leaves_small_gradients() {
        let mut g = Gradients::new(vec![vec![0.1, 0.2]]);
        let orig = g.clone();
        g.clip_global_norm(5.0);
        assert_eq!(g, orig);
    }
}
