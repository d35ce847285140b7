//! The prediction network: an MLP from `embedding ++ external features` to
//! the next-day value on the transformed scale, plus SMAPE and the
//! last-day baseline.

use ndarray::{concatenate, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::nn::dropout::{check_probability, stack_masks, DropoutMask};
use crate::nn::mlp::DenseStack;
use crate::nn::params::{Gradients, Parameterized};
use crate::nn::rng::{streams, SeededRng};
use crate::nn::train::{run_training, TrainConfig, TrainingReport};
use crate::pipeline::{WindowSample, EXTERNAL_WIDTH};
use crate::seq2seq::{stack_samples, EmbeddingSource, Seq2SeqModel};

/// Which calendar features feed the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureSet {
    /// Day-of-week one-hot and the holiday flag.
    #[default]
    Calendar,
    /// Day-of-week one-hot only.
    NoHoliday,
    /// Embedding only.
    None,
}

impl FeatureSet {
    pub fn width(self) -> usize {
        match self {
            FeatureSet::Calendar => EXTERNAL_WIDTH,
            FeatureSet::NoHoliday => EXTERNAL_WIDTH - 1,
            FeatureSet::None => 0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSet::Calendar => "calendar",
            FeatureSet::NoHoliday => "no-holiday",
            FeatureSet::None => "none",
        }
    }

    /// Selects this set's columns from a full calendar feature vector.
    pub fn select(self, external: &[f64]) -> Result<&[f64]> {
        if external.len() != EXTERNAL_WIDTH {
            return Err(Error::shape(format!(
                "expected {EXTERNAL_WIDTH} external features, got {}",
                external.len()
            )));
        }
        Ok(&external[..self.width()])
    }
}

impl std::str::FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "calendar" => Ok(FeatureSet::Calendar),
            "no-holiday" => Ok(FeatureSet::NoHoliday),
            "none" => Ok(FeatureSet::None),
            other => Err(Error::parameter(format!(
                "unknown feature set `{other}` (calendar | no-holiday | none)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionNetworkConfig {
    pub hidden_sizes: Vec<usize>,
    pub features: FeatureSet,
    pub embedding: EmbeddingSource,
}

impl Default for PredictionNetworkConfig {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![128, 64, 16],
            features: FeatureSet::Calendar,
            embedding: EmbeddingSource::Last,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionNetwork {
    mlp: DenseStack,
    features: FeatureSet,
    embedding: EmbeddingSource,
}

impl PredictionNetwork {
    pub fn new(mlp: DenseStack, features: FeatureSet, embedding: EmbeddingSource) -> Result<Self> {
        if mlp.output_size() != 1 {
            return Err(Error::shape("prediction network must have one output"));
        }
        if mlp.input_size() < features.width() {
            return Err(Error::shape(
                "network input narrower than its external features",
            ));
        }
        Ok(Self {
            mlp,
            features,
            embedding,
        })
    }

    pub fn init(
        embedding_width: usize,
        config: &PredictionNetworkConfig,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if config.hidden_sizes.contains(&0) {
            return Err(Error::parameter("hidden widths must be positive"));
        }
        let mlp = DenseStack::init(
            embedding_width + config.features.width(),
            &config.hidden_sizes,
            1,
            rng,
        );
        Self::new(mlp, config.features, config.embedding)
    }

    pub fn mlp(&self) -> &DenseStack {
        &self.mlp
    }

    pub fn features(&self) -> FeatureSet {
        self.features
    }

    pub fn embedding_source(&self) -> EmbeddingSource {
        self.embedding
    }

    pub fn input_width(&self) -> usize {
        self.mlp.input_size()
    }

    pub fn embedding_width(&self) -> usize {
        self.mlp.input_size() - self.features.width()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.mlp.hidden_widths()
    }

    pub(crate) fn check_encoder(&self, encoder: &Seq2SeqModel) -> Result<()> {
        let width = encoder.embedding_width(self.embedding);
        if width != self.embedding_width() {
            return Err(Error::shape(format!(
                "encoder produces {width}-wide embeddings, prediction network expects {}",
                self.embedding_width()
            )));
        }
        Ok(())
    }

    /// Builds the `(n, input width)` feature matrix from embeddings and
    /// full calendar feature rows.
    pub(crate) fn feature_matrix(
        &self,
        embeddings: Array2<f64>,
        external: &[&[f64]],
    ) -> Result<Array2<f64>> {
        let w = self.features.width();
        if w == 0 {
            return Ok(embeddings);
        }
        let mut ext = Array2::zeros((external.len(), w));
        for (i, e) in external.iter().enumerate() {
            ext.row_mut(i)
                .assign(&ndarray::aview1(self.features.select(e)?));
        }
        Ok(concatenate(Axis(1), &[embeddings.view(), ext.view()]).expect("same rows"))
    }

    /// Batched forward; `masks` is empty or has one `(n, width)` entry per
    /// hidden layer. Returns one prediction per row.
    pub(crate) fn forward_batch(
        &self,
        x: ArrayView2<f64>,
        masks: &[Option<Array2<f64>>],
    ) -> Vec<f64> {
        self.mlp.forward_batch(x, masks).into_raw_vec_and_offset().0
    }

    /// Samples one regular-dropout mask per hidden layer.
    pub fn sample_masks(&self, p: f64, rng: &mut SeededRng) -> Result<Vec<DropoutMask>> {
        self.hidden_widths()
            .into_iter()
            .map(|w| DropoutMask::sample(w, p, rng))
            .collect()
    }

    pub(crate) fn stack_masks(&self, all: &[Vec<DropoutMask>]) -> Vec<Option<Array2<f64>>> {
        self.hidden_widths()
            .into_iter()
            .enumerate()
            .map(|(k, w)| Some(stack_masks(all.iter().map(|m| &m[k]), w)))
            .collect()
    }
}

impl Parameterized for PredictionNetwork {
    fn parameters(&self) -> Vec<&[f64]> {
        self.mlp.parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        self.mlp.parameters_mut()
    }
}

/// Deterministic embeddings of every sample's input window.
pub(crate) fn embed_samples(
    encoder: &Seq2SeqModel,
    samples: &[WindowSample],
    source: EmbeddingSource,
) -> Result<Array2<f64>> {
    let (x, _) = stack_samples(samples, encoder.window(), 0)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("window contains a non-finite value"));
    }
    Ok(encoder.encode_batch(x.view(), &[], source))
}

fn first_targets(samples: &[WindowSample]) -> Result<Array2<f64>> {
    let mut y = Array2::zeros((samples.len(), 1));
    for (i, s) in samples.iter().enumerate() {
        y[[i, 0]] = *s
            .targets
            .first()
            .ok_or_else(|| Error::data(format!("sample {i} ({}) has no target", s.series_id)))?;
    }
    Ok(y)
}

/// Trains the MLP on frozen-encoder embeddings with dropout on every
/// hidden layer.
pub fn train_prediction_network(
    encoder: &Seq2SeqModel,
    dataset: &[WindowSample],
    config: &PredictionNetworkConfig,
    train: &TrainConfig,
) -> Result<(PredictionNetwork, TrainingReport)> {
    if dataset.is_empty() {
        return Err(Error::data("prediction-network training set is empty"));
    }
    let emb = embed_samples(encoder, dataset, config.embedding)?;
    let mut rng = SeededRng::new(train.seed, streams::WEIGHT_INIT + 16);
    let mut net = PredictionNetwork::init(emb.ncols(), config, &mut rng)?;
    let ext: Vec<&[f64]> = dataset.iter().map(|s| s.external.as_slice()).collect();
    let x = net.feature_matrix(emb, &ext)?;
    let y = first_targets(dataset)?;
    check_probability(train.dropout)?;
    let report = run_training(&mut net, dataset.len(), train, |n, idx, rng| {
        let xb = x.select(Axis(0), idx);
        let yb = y.select(Axis(0), idx);
        let masks = idx
            .iter()
            .map(|_| n.sample_masks(train.dropout, rng))
            .collect::<Result<Vec<_>>>()?;
        n.mlp
            .loss_and_gradients(xb.view(), yb.view(), &n.stack_masks(&masks))
    })?;
    Ok((net, report))
}

/// Loss and gradients of the network on explicit features and masks.
pub fn prediction_loss_and_gradients(
    net: &PredictionNetwork,
    features: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    masks: &[Option<Array2<f64>>],
) -> Result<(f64, Gradients)> {
    net.mlp.loss_and_gradients(features, targets, masks)
}

/// Dropout-free forecast on the transformed scale.
pub fn predict_point(
    encoder: &Seq2SeqModel,
    net: &PredictionNetwork,
    window: &[f64],
    external: &[f64],
) -> Result<f64> {
    net.check_encoder(encoder)?;
    let e = encoder.encode_with(window, net.embedding, None)?;
    let emb = Array2::from_shape_vec((1, e.values.len()), e.values).expect("row");
    let x = net.feature_matrix(emb, &[external])?;
    let y = net.forward_batch(x.view(), &[])[0];
    if !y.is_finite() {
        return Err(Error::numeric("prediction is not finite"));
    }
    Ok(y)
}

/// Dropout-free forecasts for many samples at once.
pub fn predict_samples(
    encoder: &Seq2SeqModel,
    net: &PredictionNetwork,
    samples: &[WindowSample],
) -> Result<Vec<f64>> {
    net.check_encoder(encoder)?;
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    let emb = embed_samples(encoder, samples, net.embedding)?;
    let ext: Vec<&[f64]> = samples.iter().map(|s| s.external.as_slice()).collect();
    let x = net.feature_matrix(emb, &ext)?;
    Ok(net.forward_batch(x.view(), &[]))
}

/// Symmetric mean absolute percentage error in percent (0 to 200); a term
/// whose denominator is zero contributes 0.
pub fn smape(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    if actual.len() != predicted.len() {
        return Err(Error::shape(format!(
            "smape needs equal lengths, got {} and {}",
            actual.len(),
            predicted.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::shape("smape needs at least one point"));
    }
    let total: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(&y, &f)| {
            let d = y.abs() + f.abs();
            if d == 0.0 {
                0.0
            } else {
                2.0 * (y - f).abs() / d
            }
        })
        .sum();
    Ok(100.0 * total / actual.len() as f64)
}

/// Forecasts for days `2..=n`: each equals the previous observation.
pub fn last_day_baseline(series: &[f64]) -> Result<Vec<f64>> {
    if series.len() < 2 {
        return Err(Error::data(
            "last-day baseline needs at least two observations",
        ));
    }
    Ok(series[..series.len() - 1].to_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub series_id: String,
    pub model: String,
    pub smape: f64,
}

/// `series_id,model,smape` report.
pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from("series_id,model,smape\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.series_id, r.model, r.smape));
    }
    out
}
