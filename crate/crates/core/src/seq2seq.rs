//! LSTM encoder-decoder pre-training and the embedding extractor.
//!
//! The encoder reads the `T` detrended inputs of a window. The decoder
//! starts from the encoder's final `(h, c)` states, layer by layer, and at
//! step `i` receives the guidance value `x[T - F + i]` (the input series
//! shifted by `F`). A linear projection of its top hidden state
//! reconstructs `x[T + i]`. After pre-training only the encoder is used: the
//! final cell state of its last layer is the embedding.

use ndarray::{s, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::nn::dense::{Activation, DenseLayer};
use crate::nn::dropout::{check_probability, stack_masks, DropoutMask};
use crate::nn::lstm::{LayerMaskBatch, LstmLayer, SequenceTrace};
use crate::nn::mlp::mse_and_grad;
use crate::nn::params::{Gradients, Parameterized};
use crate::nn::rng::{streams, SeededRng};
use crate::nn::train::{run_training, TrainConfig, TrainingReport};
use crate::pipeline::WindowSample;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Seq2SeqConfig {
    /// Hidden width of each stacked LSTM layer, bottom first.
    pub hidden_sizes: Vec<usize>,
    /// Input window length `T`.
    pub window: usize,
    /// Reconstruction horizon `F`.
    pub horizon: usize,
}

impl Default for Seq2SeqConfig {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![128, 32],
            window: 28,
            horizon: 7,
        }
    }
}

impl Seq2SeqConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(Error::parameter(
                "encoder needs at least one layer of positive width",
            ));
        }
        if !(self.window > self.horizon && self.horizon >= 1) {
            return Err(Error::parameter(format!(
                "need window > horizon >= 1, got window {} and horizon {}",
                self.window, self.horizon
            )));
        }
        Ok(())
    }
}

/// Which encoder cell states form the embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmbeddingSource {
    /// Final cell state of the last layer.
    #[default]
    Last,
    /// Final cell states of all layers, bottom first.
    Both,
}

impl std::str::FromStr for EmbeddingSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last" => Ok(EmbeddingSource::Last),
            "both" => Ok(EmbeddingSource::Both),
            other => Err(Error::parameter(format!(
                "unknown embedding source `{other}` (last | both)"
            ))),
        }
    }
}

impl EmbeddingSource {
    pub fn as_str(self) -> &'static str {
        match self {
            EmbeddingSource::Last => "last",
            EmbeddingSource::Both => "both",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub values: Vec<f64>,
    pub source: EmbeddingSource,
}

/// Variational masks for one stacked LSTM, one pair per layer. The bottom
/// layer never masks its input: it is the raw series value, not a hidden
/// unit.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderMasks {
    pub layers: Vec<LayerMasks>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerMasks {
    pub input: Option<DropoutMask>,
    pub recurrent: Option<DropoutMask>,
}

impl EncoderMasks {
    pub fn sample(hidden_sizes: &[usize], p: f64, rng: &mut SeededRng) -> Result<Self> {
        check_probability(p)?;
        let mut layers = Vec::with_capacity(hidden_sizes.len());
        for (k, &h) in hidden_sizes.iter().enumerate() {
            let input = if k > 0 {
                Some(DropoutMask::sample(hidden_sizes[k - 1], p, rng)?)
            } else {
                None
            };
            let recurrent = Some(DropoutMask::sample(h, p, rng)?);
            layers.push(LayerMasks { input, recurrent });
        }
        Ok(Self { layers })
    }

    /// Number of maskable units.
    pub fn bit_count(hidden_sizes: &[usize]) -> usize {
        hidden_sizes.iter().sum::<usize>()
            + hidden_sizes[..hidden_sizes.len() - 1].iter().sum::<usize>()
    }

    /// Builds masks from keep bits laid out in the same order `sample`
    /// draws them.
    pub fn from_keep_bits(hidden_sizes: &[usize], bits: &[bool], p: f64) -> Result<Self> {
        if bits.len() != Self::bit_count(hidden_sizes) {
            return Err(Error::shape("wrong number of encoder mask bits"));
        }
        let mut at = 0;
        let mut take = |w: usize| {
            let m = DropoutMask::from_keep_bits(&bits[at..at + w], p);
            at += w;
            m
        };
        let mut layers = Vec::new();
        for (k, &h) in hidden_sizes.iter().enumerate() {
            let input = if k > 0 {
                Some(take(hidden_sizes[k - 1])?)
            } else {
                None
            };
            let recurrent = Some(take(h)?);
            layers.push(LayerMasks { input, recurrent });
        }
        Ok(Self { layers })
    }

    pub(crate) fn stack(all: &[&EncoderMasks], hidden_sizes: &[usize]) -> Vec<LayerMaskBatch> {
        (0..hidden_sizes.len())
            .map(|k| {
                let pick = |f: fn(&LayerMasks) -> Option<&DropoutMask>, width: usize| {
                    let ms: Option<Vec<&DropoutMask>> =
                        all.iter().map(|m| f(&m.layers[k])).collect();
                    ms.map(|ms| stack_masks(ms, width))
                };
                LayerMaskBatch {
                    input: if k > 0 {
                        pick(|l| l.input.as_ref(), hidden_sizes[k - 1])
                    } else {
                        None
                    },
                    recurrent: pick(|l| l.recurrent.as_ref(), hidden_sizes[k]),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Seq2SeqModel {
    encoder: Vec<LstmLayer>,
    decoder: Vec<LstmLayer>,
    projection: DenseLayer,
    window: usize,
    horizon: usize,
}

/// Per-sample masks of a pre-training batch.
pub(crate) struct PretrainMasks {
    encoder: Vec<LayerMaskBatch>,
    decoder: Vec<LayerMaskBatch>,
}

fn columns(x: ArrayView2<f64>, range: std::ops::Range<usize>) -> Vec<Array2<f64>> {
    range
        .map(|t| x.slice(s![.., t..t + 1]).to_owned())
        .collect()
}

impl Seq2SeqModel {
    pub fn new(config: &Seq2SeqConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let stack = |rng: &mut SeededRng| {
            let mut input = 1;
            config
                .hidden_sizes
                .iter()
                .map(|&h| {
                    let l = LstmLayer::init(input, h, rng);
                    input = h;
                    l
                })
                .collect::<Vec<_>>()
        };
        let encoder = stack(rng);
        let decoder = stack(rng);
        let top = *config.hidden_sizes.last().expect("validated");
        Ok(Self {
            encoder,
            decoder,
            projection: DenseLayer::init(top, 1, Activation::Identity, rng),
            window: config.window,
            horizon: config.horizon,
        })
    }

    /// Assembles a model from explicit layers.
    pub fn from_parts(
        encoder: Vec<LstmLayer>,
        decoder: Vec<LstmLayer>,
        projection: DenseLayer,
        window: usize,
        horizon: usize,
    ) -> Result<Self> {
        let hidden: Vec<usize> = encoder.iter().map(LstmLayer::hidden_size).collect();
        Seq2SeqConfig {
            hidden_sizes: hidden.clone(),
            window,
            horizon,
        }
        .validate()?;
        let chained = |layers: &[LstmLayer]| {
            layers.len() == hidden.len()
                && layers.iter().enumerate().all(|(k, l)| {
                    l.hidden_size() == hidden[k]
                        && l.input_size() == if k == 0 { 1 } else { hidden[k - 1] }
                })
        };
        if !chained(&encoder) || !chained(&decoder) {
            return Err(Error::shape(
                "encoder and decoder layer widths must match pairwise",
            ));
        }
        if projection.in_size() != *hidden.last().expect("non-empty") || projection.out_size() != 1
        {
            return Err(Error::shape(
                "projection must map the top hidden state to one value",
            ));
        }
        Ok(Self {
            encoder,
            decoder,
            projection,
            window,
            horizon,
        })
    }

    pub fn config(&self) -> Seq2SeqConfig {
        Seq2SeqConfig {
            hidden_sizes: self.hidden_sizes(),
            window: self.window,
            horizon: self.horizon,
        }
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.encoder.iter().map(LstmLayer::hidden_size).collect()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn encoder(&self) -> &[LstmLayer] {
        &self.encoder
    }

    pub fn decoder(&self) -> &[LstmLayer] {
        &self.decoder
    }

    pub fn projection(&self) -> &DenseLayer {
        &self.projection
    }

    pub fn embedding_width(&self, source: EmbeddingSource) -> usize {
        match source {
            EmbeddingSource::Last => *self.hidden_sizes().last().expect("non-empty"),
            EmbeddingSource::Both => self.hidden_sizes().iter().sum(),
        }
    }

    fn check_window(&self, window: &[f64]) -> Result<()> {
        if window.len() != self.window {
            return Err(Error::shape(format!(
                "encoder expects a window of {} values, got {}",
                self.window,
                window.len()
            )));
        }
        if window.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("window contains a non-finite value"));
        }
        Ok(())
    }

    /// Deterministic embedding of one window.
    pub fn encode(&self, window: &[f64]) -> Result<Embedding> {
        self.encode_with(window, EmbeddingSource::Last, None)
    }

    pub fn encode_with(
        &self,
        window: &[f64],
        source: EmbeddingSource,
        masks: Option<&EncoderMasks>,
    ) -> Result<Embedding> {
        self.check_window(window)?;
        let x = ArrayView2::from_shape((1, window.len()), window).expect("row");
        let stacked = match masks {
            Some(m) => {
                if m.layers.len() != self.encoder.len() {
                    return Err(Error::shape("one mask pair per encoder layer required"));
                }
                EncoderMasks::stack(&[m], &self.hidden_sizes())
            }
            None => Vec::new(),
        };
        let e = self.encode_batch(x, &stacked, source);
        Ok(Embedding {
            values: e.row(0).to_vec(),
            source,
        })
    }

    /// Stochastic embedding with fresh variational masks from `rng`.
    pub fn encode_with_dropout(
        &self,
        window: &[f64],
        p: f64,
        rng: &mut SeededRng,
    ) -> Result<Embedding> {
        let masks = EncoderMasks::sample(&self.hidden_sizes(), p, rng)?;
        self.encode_with(window, EmbeddingSource::Last, Some(&masks))
    }

    /// Batched deterministic-or-masked encoder; `masks` is empty or holds
    /// one batch per layer. Returns `(batch, embedding width)`.
    pub(crate) fn encode_batch(
        &self,
        windows: ArrayView2<f64>,
        masks: &[LayerMaskBatch],
        source: EmbeddingSource,
    ) -> Array2<f64> {
        let none = LayerMaskBatch::default();
        let mut inputs = columns(windows, 0..windows.ncols());
        let mut finals = Vec::with_capacity(self.encoder.len());
        for (k, layer) in self.encoder.iter().enumerate() {
            let m = masks.get(k).unwrap_or(&none);
            let mut trace = layer.forward_sequence(&inputs, None, m, false);
            finals.push(trace.c.pop().expect("final cell"));
            trace.h.remove(0);
            inputs = trace.h;
        }
        match source {
            EmbeddingSource::Last => finals.pop().expect("non-empty"),
            EmbeddingSource::Both => {
                let views: Vec<_> = finals.iter().map(|f| f.view()).collect();
                ndarray::concatenate(Axis(1), &views).expect("same batch size")
            }
        }
    }

    pub(crate) fn sample_pretrain_masks(
        &self,
        n: usize,
        p: f64,
        rng: &mut SeededRng,
    ) -> Result<PretrainMasks> {
        let hidden = self.hidden_sizes();
        let mut enc = Vec::with_capacity(n);
        let mut dec = Vec::with_capacity(n);
        for _ in 0..n {
            enc.push(EncoderMasks::sample(&hidden, p, rng)?);
            dec.push(EncoderMasks::sample(&hidden, p, rng)?);
        }
        let enc: Vec<&EncoderMasks> = enc.iter().collect();
        let dec: Vec<&EncoderMasks> = dec.iter().collect();
        Ok(PretrainMasks {
            encoder: EncoderMasks::stack(&enc, &hidden),
            decoder: EncoderMasks::stack(&dec, &hidden),
        })
    }

    /// Reconstruction MSE over `targets` (`(n, F)`) and exact gradients for
    /// every encoder, decoder and projection parameter.
    pub fn reconstruction_loss_and_gradients(
        &self,
        inputs: ArrayView2<f64>,
        targets: ArrayView2<f64>,
        encoder_masks: &[EncoderMasks],
        decoder_masks: &[EncoderMasks],
    ) -> Result<(f64, Gradients)> {
        let hidden = self.hidden_sizes();
        let stack = |ms: &[EncoderMasks]| {
            if ms.is_empty() {
                Vec::new()
            } else {
                EncoderMasks::stack(&ms.iter().collect::<Vec<_>>(), &hidden)
            }
        };
        let masks = PretrainMasks {
            encoder: stack(encoder_masks),
            decoder: stack(decoder_masks),
        };
        self.pretrain_loss_and_gradients(inputs, targets, &masks)
    }

    pub(crate) fn pretrain_loss_and_gradients(
        &self,
        inputs: ArrayView2<f64>,
        targets: ArrayView2<f64>,
        masks: &PretrainMasks,
    ) -> Result<(f64, Gradients)> {
        let (n, t_len, f_len) = (inputs.nrows(), self.window, self.horizon);
        if n == 0 {
            return Err(Error::data("empty batch"));
        }
        if inputs.ncols() != t_len || targets.dim() != (n, f_len) {
            return Err(Error::shape(format!(
                "pre-training batch is {:?} -> {:?}, model expects (n, {t_len}) -> (n, {f_len})",
                inputs.dim(),
                targets.dim()
            )));
        }
        let none = LayerMaskBatch::default();
        let layers = self.encoder.len();
        let emask = |k: usize| masks.encoder.get(k).unwrap_or(&none);
        let dmask = |k: usize| masks.decoder.get(k).unwrap_or(&none);

        // Encoder forward.
        let mut enc_traces: Vec<SequenceTrace> = Vec::with_capacity(layers);
        let mut seq = columns(inputs, 0..t_len);
        for (k, layer) in self.encoder.iter().enumerate() {
            let trace = layer.forward_sequence(&seq, None, emask(k), true);
            seq = trace.h[1..].to_vec();
            enc_traces.push(trace);
        }

        // Decoder forward, initialised from the encoder's final states.
        let mut dec_traces: Vec<SequenceTrace> = Vec::with_capacity(layers);
        let mut seq = columns(inputs, t_len - f_len..t_len);
        for (k, layer) in self.decoder.iter().enumerate() {
            let init = (
                enc_traces[k].final_h().clone(),
                enc_traces[k].final_c().clone(),
            );
            let trace = layer.forward_sequence(&seq, Some(init), dmask(k), true);
            seq = trace.h[1..].to_vec();
            dec_traces.push(trace);
        }

        // Projection over all decoder steps at once; rows are step-major.
        let top_h: Vec<_> = seq.iter().map(|h| h.view()).collect();
        let stacked = ndarray::concatenate(Axis(0), &top_h).expect("same width");
        let pred_flat = self.projection.forward_batch(stacked.view());
        let mut pred = Array2::zeros((n, f_len));
        for j in 0..f_len {
            pred.column_mut(j)
                .assign(&pred_flat.slice(s![j * n..(j + 1) * n, 0]));
        }
        let (loss, grad_pred) = mse_and_grad(&pred, targets)?;

        let mut grad_flat = Array2::zeros((n * f_len, 1));
        for j in 0..f_len {
            grad_flat
                .slice_mut(s![j * n..(j + 1) * n, 0])
                .assign(&grad_pred.column(j));
        }
        let (grad_top, proj_grad) =
            self.projection
                .backward_batch(stacked.view(), pred_flat.view(), grad_flat.view());

        let mut grad_h: Vec<Option<Array2<f64>>> = (0..f_len)
            .map(|j| Some(grad_top.slice(s![j * n..(j + 1) * n, ..]).to_owned()))
            .collect();
        let mut dec_grads = Vec::with_capacity(layers);
        let mut enc_final = vec![None; layers];
        for k in (0..layers).rev() {
            let g = self.decoder[k].backward_sequence(&dec_traces[k], dmask(k), &grad_h, None);
            grad_h = g.inputs.into_iter().map(Some).collect();
            enc_final[k] = Some((g.h0, g.c0));
            dec_grads.push(g.params);
        }
        dec_grads.reverse();

        let mut enc_grads = Vec::with_capacity(layers);
        let mut grad_h: Vec<Option<Array2<f64>>> = vec![None; t_len];
        for k in (0..layers).rev() {
            let (gh, gc) = enc_final[k]
                .take()
                .expect("decoder fed every encoder layer");
            let g = self.encoder[k].backward_sequence(
                &enc_traces[k],
                emask(k),
                &grad_h,
                Some((gh.view(), gc.view())),
            );
            grad_h = g.inputs.into_iter().map(Some).collect();
            enc_grads.push(g.params);
        }
        enc_grads.reverse();

        let mut tensors = Vec::with_capacity(6 * layers + 2);
        for g in enc_grads.into_iter().chain(dec_grads) {
            tensors.extend(g.into_tensors());
        }
        tensors.extend(proj_grad.into_tensors());
        Ok((loss, Gradients::new(tensors)))
    }

    /// Deterministic decoder reconstruction of the `F` values following
    /// each window (teacher-forced with the shifted inputs).
    pub fn reconstruct(&self, window: &[f64]) -> Result<Vec<f64>> {
        self.check_window(window)?;
        let x = ArrayView2::from_shape((1, window.len()), window).expect("row");
        let none = LayerMaskBatch::default();
        let mut seq = columns(x, 0..self.window);
        let mut states = Vec::new();
        for layer in &self.encoder {
            let trace = layer.forward_sequence(&seq, None, &none, false);
            states.push((trace.final_h().clone(), trace.final_c().clone()));
            seq = trace.h[1..].to_vec();
        }
        let mut seq = columns(x, self.window - self.horizon..self.window);
        for (layer, init) in self.decoder.iter().zip(states) {
            let trace = layer.forward_sequence(&seq, Some(init), &none, false);
            seq = trace.h[1..].to_vec();
        }
        Ok(seq
            .iter()
            .map(|h| self.projection.forward_batch(h.view())[[0, 0]])
            .collect())
    }
}

impl Parameterized for Seq2SeqModel {
    fn parameters(&self) -> Vec<&[f64]> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .flat_map(|l| l.parameters())
            .chain(self.projection.parameters())
            .collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        self.encoder
            .iter_mut()
            .chain(self.decoder.iter_mut())
            .flat_map(|l| l.parameters_mut())
            .chain(self.projection.parameters_mut())
            .collect()
    }
}

/// Stacks the inputs and the first `horizon` targets of each sample.
pub(crate) fn stack_samples(
    samples: &[WindowSample],
    window: usize,
    horizon: usize,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let n = samples.len();
    let mut x = Array2::zeros((n, window));
    let mut y = Array2::zeros((n, horizon));
    for (i, s) in samples.iter().enumerate() {
        if s.inputs.len() != window || s.targets.len() < horizon {
            return Err(Error::data(format!(
                "sample {i} ({} ending {}) has {} inputs and {} targets; need {window} and {horizon}",
                s.series_id,
                s.end_date,
                s.inputs.len(),
                s.targets.len()
            )));
        }
        x.row_mut(i).assign(&ndarray::aview1(&s.inputs));
        y.row_mut(i).assign(&ndarray::aview1(&s.targets[..horizon]));
    }
    Ok((x, y))
}

/// Fits an encoder-decoder by minimising reconstruction MSE of the `F`
/// values following each window.
pub fn pretrain(
    dataset: &[WindowSample],
    config: &Seq2SeqConfig,
    train: &TrainConfig,
) -> Result<(Seq2SeqModel, TrainingReport)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::data("pre-training dataset is empty"));
    }
    let (x, y) = stack_samples(dataset, config.window, config.horizon)?;
    let mut model = Seq2SeqModel::new(
        config,
        &mut SeededRng::new(train.seed, streams::WEIGHT_INIT),
    )?;
    let report = run_training(&mut model, dataset.len(), train, |m, idx, rng| {
        let xb = x.select(Axis(0), idx);
        let yb = y.select(Axis(0), idx);
        let masks = m.sample_pretrain_masks(idx.len(), train.dropout, rng)?;
        m.pretrain_loss_and_gradients(xb.view(), yb.view(), &masks)
    })?;
    Ok((model, report))
}
