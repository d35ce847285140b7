//! A stack of dense layers with dropout on the hidden outputs.

use ndarray::{Array2, ArrayView2};

use super::dense::{Activation, DenseLayer};
use super::params::{Gradients, Parameterized};
use super::rng::SeededRng;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseStack {
    layers: Vec<DenseLayer>,
}

/// Cached layer outputs for a batched forward pass. `outputs[k]` is the
/// unmasked output of layer `k`; `inputs[k]` is what layer `k` consumed.
pub(crate) struct StackTrace {
    inputs: Vec<Array2<f64>>,
    outputs: Vec<Array2<f64>>,
}

impl StackTrace {
    pub fn prediction(&self) -> &Array2<f64> {
        self.outputs.last().expect("non-empty stack")
    }
}

impl DenseStack {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::shape("a dense stack needs at least one layer"));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_size() != pair[1].in_size() {
                return Err(Error::shape(format!(
                    "layer {k} outputs {} values but layer {} expects {}",
                    pair[0].out_size(),
                    k + 1,
                    pair[1].in_size()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Tanh hidden layers followed by an identity output layer.
    pub fn init(input: usize, hidden: &[usize], output: usize, rng: &mut SeededRng) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut width = input;
        for &h in hidden {
            layers.push(DenseLayer::init(width, h, Activation::Tanh, rng));
            width = h;
        }
        layers.push(DenseLayer::init(width, output, Activation::Identity, rng));
        Self { layers }
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].in_size()
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().expect("non-empty").out_size()
    }

    /// Widths of the maskable (hidden) layer outputs.
    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(DenseLayer::out_size)
            .collect()
    }

    fn check_masks(&self, n: usize, masks: &[Option<Array2<f64>>]) {
        assert!(
            masks.is_empty() || masks.len() == self.layers.len() - 1,
            "one mask slot per hidden layer"
        );
        for (m, w) in masks.iter().zip(self.hidden_widths()) {
            if let Some(m) = m {
                assert_eq!(m.dim(), (n, w), "mask shape");
            }
        }
    }

    /// Batched forward pass. `masks` is empty (no dropout) or holds one
    /// optional `(batch, width)` mask per hidden layer.
    pub(crate) fn forward_batch(
        &self,
        x: ArrayView2<f64>,
        masks: &[Option<Array2<f64>>],
    ) -> Array2<f64> {
        self.check_masks(x.nrows(), masks);
        let last = self.layers.len() - 1;
        let mut cur = self.layers[0].forward_batch(x);
        for k in 1..=last {
            if let Some(Some(m)) = masks.get(k - 1) {
                cur *= m;
            }
            cur = self.layers[k].forward_batch(cur.view());
        }
        cur
    }

    pub(crate) fn forward_trace(
        &self,
        x: ArrayView2<f64>,
        masks: &[Option<Array2<f64>>],
    ) -> StackTrace {
        self.check_masks(x.nrows(), masks);
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let y = layer.forward_batch(cur.view());
            inputs.push(cur);
            cur = y.clone();
            if let Some(Some(m)) = masks.get(k) {
                cur *= m;
            }
            outputs.push(y);
        }
        StackTrace { inputs, outputs }
    }

    /// Backward pass from the gradient with respect to the final output.
    /// Returns the input gradient and the parameter gradients in parameter
    /// order.
    pub(crate) fn backward(
        &self,
        trace: &StackTrace,
        masks: &[Option<Array2<f64>>],
        grad_output: Array2<f64>,
    ) -> (Array2<f64>, Vec<Vec<f64>>) {
        let mut tensors = vec![Vec::new(); 2 * self.layers.len()];
        let mut grad = grad_output;
        for k in (0..self.layers.len()).rev() {
            if k + 1 < self.layers.len() {
                if let Some(Some(m)) = masks.get(k) {
                    grad *= m;
                }
            }
            let (gx, g) = self.layers[k].backward_batch(
                trace.inputs[k].view(),
                trace.outputs[k].view(),
                grad.view(),
            );
            let [w, b] = g.into_tensors();
            tensors[2 * k] = w;
            tensors[2 * k + 1] = b;
            grad = gx;
        }
        (grad, tensors)
    }

    /// Mean squared error over every sample and output coordinate, and its
    /// exact gradient with respect to all parameters.
    pub fn loss_and_gradients(
        &self,
        x: ArrayView2<f64>,
        targets: ArrayView2<f64>,
        masks: &[Option<Array2<f64>>],
    ) -> Result<(f64, Gradients)> {
        if x.nrows() == 0 {
            return Err(Error::data("empty batch"));
        }
        if x.ncols() != self.input_size() || targets.dim() != (x.nrows(), self.output_size()) {
            return Err(Error::shape(format!(
                "batch is {:?} with targets {:?}; network maps {} -> {}",
                x.dim(),
                targets.dim(),
                self.input_size(),
                self.output_size()
            )));
        }
        let trace = self.forward_trace(x, masks);
        let (loss, grad) = mse_and_grad(trace.prediction(), targets)?;
        let (_, tensors) = self.backward(&trace, masks, grad);
        Ok((loss, Gradients::new(tensors)))
    }
}

/// Mean squared error and its gradient with respect to `pred`. Fails with
/// the offending sample index when a per-sample loss is not finite.
pub(crate) fn mse_and_grad(
    pred: &Array2<f64>,
    targets: ArrayView2<f64>,
) -> Result<(f64, Array2<f64>)> {
    let count = pred.len() as f64;
    let mut loss = 0.0;
    for (i, (p, t)) in pred.rows().into_iter().zip(targets.rows()).enumerate() {
        let sample: f64 = p.iter().zip(t.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        if !sample.is_finite() {
            return Err(Error::numeric(format!("loss is not finite for sample {i}")));
        }
        loss += sample;
    }
    let mut grad = pred - &targets;
    grad *= 2.0 / count;
    Ok((loss / count, grad))
}

impl Parameterized for DenseStack {
    fn parameters(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.parameters()).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.parameters_mut())
            .collect()
    }
}
