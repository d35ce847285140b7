//! LSTM layers with variational dropout and backpropagation through time.
//!
//! Gate weights are stacked row-wise in the order input, forget, candidate,
//! output: rows `[0, H)` belong to the input gate, `[H, 2H)` to the forget
//! gate and so on. Dropout masks act on `x_t` and `h_{t-1}` before the gate
//! products and are the same for every timestep of a sequence.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::dense::{glorot_limit, uniform_matrix};
use super::dropout::DropoutMask;
use super::math::{sigmoid_slice, tanh_slice};
use super::params::Parameterized;
use super::rng::SeededRng;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    /// `(4H, input_size)`
    input_weights: Array2<f64>,
    /// `(4H, H)`
    recurrent_weights: Array2<f64>,
    /// `4H`
    bias: Array1<f64>,
}

/// Per-sample masks for one layer in a batched pass, shaped `(batch, width)`.
#[derive(Debug, Clone, Default)]
pub(crate) struct LayerMaskBatch {
    pub input: Option<Array2<f64>>,
    pub recurrent: Option<Array2<f64>>,
}

/// Cached activations of a batched sequence pass.
#[derive(Debug, Clone)]
pub(crate) struct SequenceTrace {
    /// `h_0 ..= h_T`
    pub h: Vec<Array2<f64>>,
    /// `c_0 ..= c_T`; only the endpoints are kept when gradients are not needed.
    pub c: Vec<Array2<f64>>,
    x_masked: Vec<Array2<f64>>,
    h_masked: Vec<Array2<f64>>,
    /// Activated gates per step, `(batch, 4H)`.
    gates: Vec<Array2<f64>>,
    tanh_c: Vec<Array2<f64>>,
}

impl SequenceTrace {
    pub fn final_h(&self) -> &Array2<f64> {
        self.h.last().expect("non-empty trace")
    }

    pub fn final_c(&self) -> &Array2<f64> {
        self.c.last().expect("non-empty trace")
    }
}

pub(crate) struct LstmGrad {
    pub input_weights: Array2<f64>,
    pub recurrent_weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LstmGrad {
    pub(crate) fn into_tensors(self) -> [Vec<f64>; 3] {
        [
            self.input_weights.iter().copied().collect(),
            self.recurrent_weights.iter().copied().collect(),
            self.bias.to_vec(),
        ]
    }
}

pub(crate) struct SequenceGrad {
    /// Gradient with respect to each (unmasked) input `x_t`.
    pub inputs: Vec<Array2<f64>>,
    pub h0: Array2<f64>,
    pub c0: Array2<f64>,
    pub params: LstmGrad,
}

impl LstmLayer {
    pub fn new(
        input_weights: Array2<f64>,
        recurrent_weights: Array2<f64>,
        bias: Array1<f64>,
    ) -> Result<Self> {
        let h = recurrent_weights.ncols();
        if h == 0 {
            return Err(Error::shape("LSTM hidden size must be positive"));
        }
        if recurrent_weights.nrows() != 4 * h
            || input_weights.nrows() != 4 * h
            || bias.len() != 4 * h
        {
            return Err(Error::shape(format!(
                "LSTM with hidden size {h} needs 4H = {} gate rows (got input {}, recurrent {}, bias {})",
                4 * h,
                input_weights.nrows(),
                recurrent_weights.nrows(),
                bias.len()
            )));
        }
        if input_weights
            .iter()
            .chain(recurrent_weights.iter())
            .chain(bias.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::numeric("LSTM parameters must be finite"));
        }
        Ok(Self {
            input_weights: input_weights.as_standard_layout().into_owned(),
            recurrent_weights: recurrent_weights.as_standard_layout().into_owned(),
            bias,
        })
    }

    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        Self {
            input_weights: Array2::zeros((4 * hidden_size, input_size)),
            recurrent_weights: Array2::zeros((4 * hidden_size, hidden_size)),
            bias: Array1::zeros(4 * hidden_size),
        }
    }

    /// Glorot-uniform input weights, uniform `±1/sqrt(H)` recurrent weights,
    /// forget-gate bias 1.
    pub fn init(input_size: usize, hidden_size: usize, rng: &mut SeededRng) -> Self {
        let h = hidden_size;
        let input_weights = uniform_matrix(4 * h, input_size, glorot_limit(input_size, h), rng);
        let recurrent_weights = uniform_matrix(4 * h, h, 1.0 / (h as f64).sqrt(), rng);
        let mut bias = Array1::zeros(4 * h);
        bias.slice_mut(s![h..2 * h]).fill(1.0);
        Self {
            input_weights,
            recurrent_weights,
            bias,
        }
    }

    pub fn input_size(&self) -> usize {
        self.input_weights.ncols()
    }

    pub fn hidden_size(&self) -> usize {
        self.recurrent_weights.ncols()
    }

    pub fn input_weights(&self) -> &Array2<f64> {
        &self.input_weights
    }

    pub fn recurrent_weights(&self) -> &Array2<f64> {
        &self.recurrent_weights
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    /// One recurrence step for a single sample.
    pub fn step(
        &self,
        x: &[f64],
        h_prev: &[f64],
        c_prev: &[f64],
        input_mask: Option<&DropoutMask>,
        recurrent_mask: Option<&DropoutMask>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let hs = self.hidden_size();
        if x.len() != self.input_size() || h_prev.len() != hs || c_prev.len() != hs {
            return Err(Error::shape(format!(
                "LSTM step expects x[{}], h[{hs}], c[{hs}]; got x[{}], h[{}], c[{}]",
                self.input_size(),
                x.len(),
                h_prev.len(),
                c_prev.len()
            )));
        }
        if input_mask.is_some_and(|m| m.width() != self.input_size())
            || recurrent_mask.is_some_and(|m| m.width() != hs)
        {
            return Err(Error::shape("LSTM mask width does not match layer"));
        }
        let row = |v: &[f64]| Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row");
        let masks = LayerMaskBatch {
            input: input_mask.map(|m| row(m.values())),
            recurrent: recurrent_mask.map(|m| row(m.values())),
        };
        let trace =
            self.forward_sequence(&[row(x)], Some((row(h_prev), row(c_prev))), &masks, false);
        Ok((
            trace.final_h().row(0).to_vec(),
            trace.final_c().row(0).to_vec(),
        ))
    }

    /// Runs the layer over a batched sequence. `inputs[t]` is `(batch, I)`.
    /// With `keep_trace` false only the hidden states and the final cell
    /// state are retained.
    pub(crate) fn forward_sequence(
        &self,
        inputs: &[Array2<f64>],
        init: Option<(Array2<f64>, Array2<f64>)>,
        masks: &LayerMaskBatch,
        keep_trace: bool,
    ) -> SequenceTrace {
        let hs = self.hidden_size();
        let n = inputs.first().map(|x| x.nrows()).unwrap_or(0);
        let (h0, c0) = init.unwrap_or_else(|| (Array2::zeros((n, hs)), Array2::zeros((n, hs))));
        let steps = inputs.len();
        let mut trace = SequenceTrace {
            h: Vec::with_capacity(steps + 1),
            c: Vec::with_capacity(if keep_trace { steps + 1 } else { 2 }),
            x_masked: Vec::new(),
            h_masked: Vec::new(),
            gates: Vec::new(),
            tanh_c: Vec::new(),
        };
        trace.h.push(h0);
        let mut c_prev = c0;

        for x in inputs {
            let x_masked = match &masks.input {
                Some(m) => x * m,
                None => x.clone(),
            };
            let h_prev = trace.h.last().expect("h_prev");
            let h_masked = match &masks.recurrent {
                Some(m) => h_prev * m,
                None => h_prev.clone(),
            };

            let mut z = Array2::from_shape_fn((n, 4 * hs), |(_, j)| self.bias[j]);
            general_mat_mul(1.0, &x_masked, &self.input_weights.t(), 1.0, &mut z);
            general_mat_mul(1.0, &h_masked, &self.recurrent_weights.t(), 1.0, &mut z);

            let mut c = Array2::zeros((n, hs));
            let mut h = Array2::zeros((n, hs));
            let mut tanh_c = Array2::zeros((n, hs));
            for r in 0..n {
                let zr = z.row_mut(r).into_slice().expect("contiguous gates");
                sigmoid_slice(&mut zr[..2 * hs]);
                tanh_slice(&mut zr[2 * hs..3 * hs]);
                sigmoid_slice(&mut zr[3 * hs..]);
                let cp = c_prev.row(r);
                let cr = c.row_mut(r).into_slice().expect("contiguous cell");
                for j in 0..hs {
                    cr[j] = zr[hs + j] * cp[j] + zr[j] * zr[2 * hs + j];
                }
                let tc = tanh_c.row_mut(r).into_slice().expect("contiguous cell");
                tc.copy_from_slice(cr);
                tanh_slice(tc);
                let hr = h.row_mut(r).into_slice().expect("contiguous hidden");
                for j in 0..hs {
                    hr[j] = zr[3 * hs + j] * tc[j];
                }
            }

            trace.h.push(h);
            if keep_trace {
                trace.c.push(std::mem::replace(&mut c_prev, c));
                trace.x_masked.push(x_masked);
                trace.h_masked.push(h_masked);
                trace.gates.push(z);
                trace.tanh_c.push(tanh_c);
            } else {
                if trace.c.is_empty() {
                    trace.c.push(c_prev.clone());
                }
                c_prev = c;
            }
        }
        trace.c.push(c_prev);
        trace
    }

    /// Backpropagation through time over a trace recorded with
    /// `keep_trace = true`. `grad_h[t]` is the loss gradient with respect to
    /// `h_{t+1}` coming from above (or `None`), and `grad_final` adds
    /// gradients flowing into the final `(h_T, c_T)`.
    pub(crate) fn backward_sequence(
        &self,
        trace: &SequenceTrace,
        masks: &LayerMaskBatch,
        grad_h: &[Option<Array2<f64>>],
        grad_final: Option<(ArrayView2<f64>, ArrayView2<f64>)>,
    ) -> SequenceGrad {
        let hs = self.hidden_size();
        let steps = trace.gates.len();
        assert_eq!(grad_h.len(), steps, "one upstream gradient slot per step");
        let n = trace.h[0].nrows();

        let mut g_wx = Array2::<f64>::zeros(self.input_weights.raw_dim());
        let mut g_wh = Array2::<f64>::zeros(self.recurrent_weights.raw_dim());
        let mut g_b = Array1::<f64>::zeros(4 * hs);
        let mut dh_next = Array2::<f64>::zeros((n, hs));
        let mut dc_next = Array2::<f64>::zeros((n, hs));
        if let Some((gh, gc)) = grad_final {
            dh_next += &gh;
            dc_next += &gc;
        }
        let mut grad_inputs = vec![Array2::zeros((0, 0)); steps];
        let mut dz = Array2::<f64>::zeros((n, 4 * hs));

        for t in (0..steps).rev() {
            let mut dh = dh_next;
            if let Some(g) = &grad_h[t] {
                dh += g;
            }
            let gates = &trace.gates[t];
            let tanh_c = &trace.tanh_c[t];
            let c_prev = &trace.c[t];
            let mut dc = dc_next;
            for r in 0..n {
                let gr = gates.row(r);
                let dzr = dz.row_mut(r).into_slice().expect("contiguous");
                for j in 0..hs {
                    let (i_g, f_g, g_g, o_g) = (gr[j], gr[hs + j], gr[2 * hs + j], gr[3 * hs + j]);
                    let tc = tanh_c[[r, j]];
                    let dhj = dh[[r, j]];
                    let dcj = dc[[r, j]] + dhj * o_g * (1.0 - tc * tc);
                    dzr[j] = dcj * g_g * i_g * (1.0 - i_g);
                    dzr[hs + j] = dcj * c_prev[[r, j]] * f_g * (1.0 - f_g);
                    dzr[2 * hs + j] = dcj * i_g * (1.0 - g_g * g_g);
                    dzr[3 * hs + j] = dhj * tc * o_g * (1.0 - o_g);
                    dc[[r, j]] = dcj * f_g;
                }
            }
            dc_next = dc;

            general_mat_mul(1.0, &dz.t(), &trace.x_masked[t], 1.0, &mut g_wx);
            general_mat_mul(1.0, &dz.t(), &trace.h_masked[t], 1.0, &mut g_wh);
            g_b += &dz.sum_axis(Axis(0));

            let mut dx = dz.dot(&self.input_weights);
            if let Some(m) = &masks.input {
                dx *= m;
            }
            grad_inputs[t] = dx;
            let mut dhp = dz.dot(&self.recurrent_weights);
            if let Some(m) = &masks.recurrent {
                dhp *= m;
            }
            dh_next = dhp;
        }

        SequenceGrad {
            inputs: grad_inputs,
            h0: dh_next,
            c0: dc_next,
            params: LstmGrad {
                input_weights: g_wx,
                recurrent_weights: g_wh,
                bias: g_b,
            },
        }
    }
}

impl Parameterized for LstmLayer {
    fn parameters(&self) -> Vec<&[f64]> {
        vec![
            self.input_weights.as_slice().expect("standard layout"),
            self.recurrent_weights.as_slice().expect("standard layout"),
            self.bias.as_slice().expect("contiguous"),
        ]
    }

    fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.input_weights.as_slice_mut().expect("standard layout"),
            self.recurrent_weights
                .as_slice_mut()
                .expect("standard layout"),
            self.bias.as_slice_mut().expect("contiguous"),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_layer_stays_at_zero() {
        let layer = LstmLayer::zeros(3, 4);
        let (h, c) = layer
            .step(&[0.0; 3], &[0.0; 4], &[0.0; 4], None, None)
            .unwrap();
        assert_eq!(h, vec![0.0; 4]);
        assert_eq!(c, vec![0.0; 4]);
    }

    #[test]
    fn scalar_step_matches_hand_evaluation() {
        // gate order: input, forget, candidate, output
        let wx = array![[0.5], [-0.3], [0.8], [0.2]];
        let wh = array![[0.1], [0.4], [-0.6], [0.7]];
        let b = array![0.05, 1.0, -0.1, 0.3];
        let layer = LstmLayer::new(wx, wh, b).unwrap();
        let (h, c) = layer.step(&[1.0], &[0.0], &[0.0], None, None).unwrap();

        // Frozen from an independent scalar evaluation of the gate equations:
        // i = s(0.55), f = s(0.7), g = tanh(0.7), o = s(0.5), c = i g, h = o tanh(c)
        let c_ref = 0.383_251_117_530_076_46;
        let h_ref = 0.227_526_030_206_491_54;
        assert!((c[0] - c_ref).abs() < 1e-12, "c {} vs {}", c[0], c_ref);
        assert!((h[0] - h_ref).abs() < 1e-12, "h {} vs {}", h[0], h_ref);
    }

    #[test]
    fn all_zero_masks_equal_zeroed_inputs() {
        let mut rng = SeededRng::new(4, 0);
        let layer = LstmLayer::init(3, 5, &mut rng);
        let x = [0.3, -1.1, 0.7];
        let h = [0.2, -0.4, 0.1, 0.9, -0.5];
        let c = [0.5, 0.1, -0.2, 0.3, 0.0];
        let mx = DropoutMask::from_keep_bits(&[false; 3], 0.5).unwrap();
        let mh = DropoutMask::from_keep_bits(&[false; 5], 0.5).unwrap();
        let masked = layer.step(&x, &h, &c, Some(&mx), Some(&mh)).unwrap();
        let zeroed = layer.step(&[0.0; 3], &[0.0; 5], &c, None, None).unwrap();
        assert_eq!(masked, zeroed);
    }

    #[test]
    fn step_rejects_bad_shapes() {
        let layer = LstmLayer::zeros(2, 3);
        assert!(matches!(
            layer.step(&[0.0], &[0.0; 3], &[0.0; 3], None, None),
            Err(Error::Shape(_))
        ));
        let bad = DropoutMask::ones(2);
        assert!(matches!(
            layer.step(&[0.0; 2], &[0.0; 3], &[0.0; 3], None, Some(&bad)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn forget_bias_initialised_to_one() {
        let layer = LstmLayer::init(1, 4, &mut SeededRng::new(0, 0));
        assert!(layer.bias().slice(s![4..8]).iter().all(|&b| b == 1.0));
        assert!(layer.bias().slice(s![0..4]).iter().all(|&b| b == 0.0));
    }

    #[test]
    fn batched_rows_match_single_steps() {
        let mut rng = SeededRng::new(8, 0);
        let layer = LstmLayer::init(2, 6, &mut rng);
        let xs: Vec<Vec<f64>> = (0..5)
            .map(|t| vec![0.1 * t as f64, -0.2 + 0.05 * t as f64])
            .collect();

        let mut h = vec![0.0; 6];
        let mut c = vec![0.0; 6];
        for x in &xs {
            let (h2, c2) = layer.step(x, &h, &c, None, None).unwrap();
            h = h2;
            c = c2;
        }

        let batch: Vec<Array2<f64>> = xs
            .iter()
            .map(|x| {
                let mut m = Array2::zeros((3, 2));
                for r in 0..3 {
                    m.row_mut(r).assign(&ndarray::aview1(x));
                }
                m
            })
            .collect();
        let trace = layer.forward_sequence(&batch, None, &LayerMaskBatch::default(), false);
        for r in 0..3 {
            assert_eq!(trace.final_h().row(r).to_vec(), h);
            assert_eq!(trace.final_c().row(r).to_vec(), c);
        }
    }

    #[test]
    fn one_mask_is_reused_at_every_step() {
        let mut rng = SeededRng::new(21, 0);
        let layer = LstmLayer::init(3, 5, &mut rng);
        let mx = DropoutMask::sample(3, 0.4, &mut rng).unwrap();
        let mh = DropoutMask::sample(5, 0.4, &mut rng).unwrap();
        let xs: Vec<Vec<f64>> = (0..6)
            .map(|t| vec![(t as f64).sin(), 0.3, -0.1 * t as f64])
            .collect();

        let (mut h, mut c) = (vec![0.0; 5], vec![0.0; 5]);
        for x in &xs {
            (h, c) = layer.step(x, &h, &c, Some(&mx), Some(&mh)).unwrap();
        }

        let row =
            |m: &DropoutMask| Array2::from_shape_vec((1, m.width()), m.values().to_vec()).unwrap();
        let masks = LayerMaskBatch {
            input: Some(row(&mx)),
            recurrent: Some(row(&mh)),
        };
        let seq: Vec<Array2<f64>> = xs
            .iter()
            .map(|x| Array2::from_shape_vec((1, 3), x.clone()).unwrap())
            .collect();
        let trace = layer.forward_sequence(&seq, None, &masks, false);
        assert_eq!(trace.final_h().row(0).to_vec(), h);
        assert_eq!(trace.final_c().row(0).to_vec(), c);
    }
}
