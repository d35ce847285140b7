//! Fully connected layers.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, Uniform};

use super::dropout::DropoutMask;
use super::math::{tanh, tanh_slice};
use super::params::Parameterized;
use super::rng::SeededRng;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        if self == Activation::Tanh {
            match z.as_slice_mut() {
                Some(v) => tanh_slice(v),
                None => z.mapv_inplace(tanh),
            }
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// `y = activation(W x + b)` with `W` stored row-major as `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weights: Array2<f64>,
    bias: Array1<f64>,
    activation: Activation,
}

pub(crate) struct DenseGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

pub(crate) fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub(crate) fn uniform_matrix(
    rows: usize,
    cols: usize,
    limit: f64,
    rng: &mut SeededRng,
) -> Array2<f64> {
    if limit == 0.0 {
        return Array2::zeros((rows, cols));
    }
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite init limit");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

impl DenseLayer {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>, activation: Activation) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::shape(format!(
                "dense weights have {} rows but bias has {} entries",
                weights.nrows(),
                bias.len()
            )));
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::numeric("dense layer parameters must be finite"));
        }
        Ok(Self {
            weights: weights.as_standard_layout().into_owned(),
            bias,
            activation,
        })
    }

    pub fn zeros(in_size: usize, out_size: usize, activation: Activation) -> Self {
        Self {
            weights: Array2::zeros((out_size, in_size)),
            bias: Array1::zeros(out_size),
            activation,
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init(
        in_size: usize,
        out_size: usize,
        activation: Activation,
        rng: &mut SeededRng,
    ) -> Self {
        let limit = glorot_limit(in_size, out_size);
        Self {
            weights: uniform_matrix(out_size, in_size, limit, rng),
            bias: Array1::zeros(out_size),
            activation,
        }
    }

    pub fn in_size(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_size(&self) -> usize {
        self.weights.nrows()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    /// Single-sample forward pass with an optional output mask.
    pub fn forward(&self, input: &[f64], mask: Option<&DropoutMask>) -> Result<Vec<f64>> {
        if input.len() != self.in_size() {
            return Err(Error::shape(format!(
                "dense input has length {}, layer expects {}",
                input.len(),
                self.in_size()
            )));
        }
        if let Some(m) = mask {
            if m.width() != self.out_size() {
                return Err(Error::shape(format!(
                    "mask width {} does not match layer output {}",
                    m.width(),
                    self.out_size()
                )));
            }
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("dense input contains a non-finite value"));
        }
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row view");
        let y = self.forward_batch(x);
        let mut out = y.into_raw_vec_and_offset().0;
        if let Some(m) = mask {
            m.apply(&mut out);
        }
        Ok(out)
    }

    /// Row-wise forward pass over a `(batch, in)` matrix; no masking.
    pub(crate) fn forward_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weights.t());
        z += &self.bias;
        self.activation.apply(&mut z);
        z
    }

    /// Backward pass given the layer input, its (unmasked) output and the
    /// gradient with respect to that output. Returns the input gradient.
    pub(crate) fn backward_batch(
        &self,
        x: ArrayView2<f64>,
        y: ArrayView2<f64>,
        grad_y: ArrayView2<f64>,
    ) -> (Array2<f64>, DenseGrad) {
        let mut dz = grad_y.to_owned();
        if self.activation != Activation::Identity {
            dz.zip_mut_with(&y, |g, &out| {
                *g *= self.activation.derivative_from_output(out)
            });
        }
        let weights = dz.t().dot(&x);
        let bias = dz.sum_axis(Axis(0));
        let grad_x = dz.dot(&self.weights);
        (grad_x, DenseGrad { weights, bias })
    }
}

impl Parameterized for DenseLayer {
    fn parameters(&self) -> Vec<&[f64]> {
        vec![
            self.weights.as_slice().expect("standard layout"),
            self.bias.as_slice().expect("contiguous"),
        ]
    }

    fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.weights.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("contiguous"),
        ]
    }
}

impl DenseGrad {
    pub(crate) fn into_tensors(self) -> [Vec<f64>; 2] {
        [
            self.weights.as_standard_layout().iter().copied().collect(),
            self.bias.to_vec(),
        ]
    }
}
