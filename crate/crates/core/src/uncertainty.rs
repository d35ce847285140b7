//! Monte Carlo dropout, inherent-noise estimation and prediction intervals.
//!
//! Pass `b` of an MC run draws its masks from stream `(base_seed, b)`:
//! first one regular mask per prediction-network hidden layer, then the
//! encoder's variational masks. The result is therefore independent of the
//! order (or batching) in which passes are evaluated, and the
//! prediction-network-only variant sees the same network masks as the full
//! variant.

use chrono::NaiveDate;
use ndarray::Axis;

use crate::error::{Error, Result};
use crate::forecast::{predict_samples, PredictionNetwork};
use crate::nn::dropout::{check_probability, DropoutMask};
use crate::nn::rng::SeededRng;
use crate::pipeline::{inverse_transform, TransformMode, WindowSample};
use crate::seq2seq::{EncoderMasks, Seq2SeqModel};

/// Passes evaluated per batched forward.
const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutConfig {
    pub p: f64,
    pub iterations: usize,
    pub base_seed: u64,
}

impl Default for DropoutConfig {
    fn default() -> Self {
        Self {
            p: 0.05,
            iterations: 200,
            base_seed: 0,
        }
    }
}

impl DropoutConfig {
    pub fn validate(&self) -> Result<()> {
        check_probability(self.p)?;
        if self.iterations == 0 {
            return Err(Error::parameter("MC dropout needs at least one iteration"));
        }
        Ok(())
    }
}

/// Where MC dropout is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DropoutScope {
    /// Encoder and prediction network.
    #[default]
    Full,
    /// Prediction network only; the embedding is deterministic.
    PredictionOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    /// Standard deviation of the pass outputs, divisor `B`.
    pub eta1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseEstimate {
    pub eta2: f64,
    pub validation_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    /// Maps both endpoints back to the original scale.
    pub fn inverse_transform(&self, offset: f64, mode: TransformMode) -> Result<Interval> {
        Ok(Interval {
            lower: inverse_transform(self.lower, offset, mode)?,
            upper: inverse_transform(self.upper, offset, mode)?,
        })
    }
}

/// Forecast with its uncertainty on the transformed scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionResult {
    pub y_hat: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub eta: f64,
    pub interval: Interval,
    pub alpha: f64,
}

impl PredictionResult {
    /// Combines the two uncertainty sources and forms the `1 - alpha`
    /// interval `y_hat ± z·eta`.
    pub fn new(y_hat: f64, eta1: f64, eta2: f64, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if !(eta1 >= 0.0 && eta2 >= 0.0) || !y_hat.is_finite() {
            return Err(Error::numeric(format!(
                "invalid prediction components y_hat={y_hat}, eta1={eta1}, eta2={eta2}"
            )));
        }
        let eta = (eta1 * eta1 + eta2 * eta2).sqrt();
        let half = upper_quantile(alpha)? * eta;
        Ok(Self {
            y_hat,
            eta1,
            eta2,
            eta,
            interval: Interval {
                lower: y_hat - half,
                upper: y_hat + half,
            },
            alpha,
        })
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::parameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(())
}

/// `z_{alpha/2}`, the upper `alpha/2` quantile of the standard normal.
pub fn upper_quantile(alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(-normal_quantile(alpha / 2.0)?)
}

/// Inverse standard-normal CDF.
pub fn normal_quantile(q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::parameter(format!(
            "quantile level must lie in (0, 1), got {q}"
        )));
    }
    if q > 0.5 {
        return Ok(-lower_quantile(1.0 - q));
    }
    Ok(lower_quantile(q))
}

/// Rational approximation for `q <= 0.5` refined by one Halley step.
fn lower_quantile(q: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383_577_518_672_69e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-3,
        3.224671290700398e-1,
        2.445134137142996,
        3.754408661907416,
    ];
    if q == 0.5 {
        return 0.0;
    }
    let x = if q < 0.02425 {
        let r = (-2.0 * q.ln()).sqrt();
        (((((C[0] * r + C[1]) * r + C[2]) * r + C[3]) * r + C[4]) * r + C[5])
            / ((((D[0] * r + D[1]) * r + D[2]) * r + D[3]) * r + 1.0)
    } else {
        let u = q - 0.5;
        let r = u * u;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * u
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    let e = 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2) - q;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (x * x / 2.0).exp();
    x - u / (1.0 + x * u / 2.0)
}

/// Masks of one MC pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PassMasks {
    pub network: Vec<DropoutMask>,
    pub encoder: Option<EncoderMasks>,
}

impl PassMasks {
    /// Draws the masks of pass `b`.
    pub fn sample(
        encoder: &Seq2SeqModel,
        net: &PredictionNetwork,
        cfg: &DropoutConfig,
        scope: DropoutScope,
        b: usize,
    ) -> Result<Self> {
        let mut rng = SeededRng::new(cfg.base_seed, b as u64);
        let network = net.sample_masks(cfg.p, &mut rng)?;
        let encoder = match scope {
            DropoutScope::Full => Some(EncoderMasks::sample(
                &encoder.hidden_sizes(),
                cfg.p,
                &mut rng,
            )?),
            DropoutScope::PredictionOnly => None,
        };
        Ok(Self { network, encoder })
    }
}

fn check_inputs(
    encoder: &Seq2SeqModel,
    net: &PredictionNetwork,
    window: &[f64],
    external: &[f64],
) -> Result<()> {
    net.check_encoder(encoder)?;
    if window.len() != encoder.window() {
        return Err(Error::shape(format!(
            "encoder expects a window of {} values, got {}",
            encoder.window(),
            window.len()
        )));
    }
    if window.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("window contains a non-finite value"));
    }
    net.features().select(external)?;
    Ok(())
}

/// Output of the full model for each set of explicit masks, evaluated as
/// one batch.
pub fn forward_with_masks(
    encoder: &Seq2SeqModel,
    net: &PredictionNetwork,
    window: &[f64],
    external: &[f64],
    passes: &[PassMasks],
) -> Result<Vec<f64>> {
    check_inputs(encoder, net, window, external)?;
    let n = passes.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let hidden = encoder.hidden_sizes();
    let windows = ndarray::aview1(window)
        .insert_axis(Axis(0))
        .broadcast((n, window.len()))
        .expect("broadcast row")
        .to_owned();
    let source = net.embedding_source();
    let emb = match passes
        .iter()
        .map(|p| p.encoder.as_ref())
        .collect::<Option<Vec<_>>>()
    {
        Some(masks) => {
            if masks.iter().any(|m| m.layers.len() != hidden.len()) {
                return Err(Error::shape("one mask pair per encoder layer required"));
            }
            encoder.encode_batch(
                windows.view(),
                &EncoderMasks::stack(&masks, &hidden),
                source,
            )
        }
        None if passes.iter().all(|p| p.encoder.is_none()) => {
            // Deterministic embedding, computed once and repeated.
            let one = encoder.encode_batch(windows.slice(ndarray::s![0..1, ..]), &[], source);
            one.broadcast((n, one.ncols()))
                .expect("broadcast row")
                .to_owned()
        }
        None => return Err(Error::parameter("mixed encoder scopes within one batch")),
    };
    let widths = net.hidden_widths();
    for p in passes {
        if p.network.len() != widths.len()
            || p.network.iter().zip(&widths).any(|(m, &w)| m.width() != w)
        {
            return Err(Error::shape(
                "one mask per prediction-network hidden layer required",
            ));
        }
    }
    let ext = vec![external; n];
    let x = net.feature_matrix(emb, &ext)?;
    let owned: Vec<Vec<DropoutMask>> = passes.iter().map(|p| p.network.clone()).collect();
    let out = net.forward_batch(x.view(), &net.stack_masks(&owned));
    if let Some(i) = out.iter().position(|v| !v.is_finite()) {
        return Err(Error::numeric(format!(
            "MC pass {i} produced a non-finite output"
        )));
    }
    Ok(out)
}

/// The `B` stochastic outputs of an MC-dropout run.
pub fn mc_samples(
    window: &[f64],
    external: &[f64],
    encoder: &Seq2SeqModel,
    net: &PredictionNetwork,
    cfg: &DropoutConfig,
    scope: DropoutScope,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_inputs(encoder, net, window, external)?;
    let mut out = Vec::with_capacity(cfg.iterations);
    let mut start = 0;
    while start < cfg.iterations {
        let end = (start + CHUNK).min(cfg.iterations);
        let passes = (start..end)
            .map(|b| PassMasks::sample(encoder, net, cfg, scope, b))
            .collect::<Result<Vec<_>>>()?;
        out.extend(forward_with_masks(encoder, net, window, external, &passes)?);
        start = end;
    }
    Ok(out)
}

/// Mean and divisor-`n` standard deviation. The mean is accumulated
/// relative to the first value so identical samples give exactly that
/// value and a zero deviation.
pub fn mean_and_std(values: &[f64]) -> Result<McEstimate> {
    let Some(&first) = values.first() else {
        return Err(Error::parameter("cannot summarise zero samples"));
    };
    let n = values.len() as f64;
    let mean = first + values.iter().map(|v| v - first).sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(McEstimate {
        mean,
        eta1: var.sqrt(),
    })
}

/// MC-dropout mean and model-uncertainty estimate with dropout in both
/// the encoder and the prediction network.
pub fn mc_dropout(
    window: &[f64],
    external: &[f64],
    encoder: &Seq2SeqModel,
    net: &PredictionNetwork,
    cfg: &DropoutConfig,
) -> Result<McEstimate> {
    mc_dropout_scoped(window, external, encoder, net, cfg, DropoutScope::Full)
}

pub fn mc_dropout_scoped(
    window: &[f64],
    external: &[f64],
    encoder: &Seq2SeqModel,
    net: &PredictionNetwork,
    cfg: &DropoutConfig,
    scope: DropoutScope,
) -> Result<McEstimate> {
    mean_and_std(&mc_samples(window, external, encoder, net, cfg, scope)?)
}

/// Root mean squared residual.
pub fn residual_noise(targets: &[f64], predictions: &[f64]) -> Result<NoiseEstimate> {
    if targets.len() != predictions.len() {
        return Err(Error::shape("targets and predictions differ in length"));
    }
    if targets.is_empty() {
        return Err(Error::parameter(
            "inherent-noise estimate needs a non-empty validation set",
        ));
    }
    let ss: f64 = targets
        .iter()
        .zip(predictions)
        .map(|(y, f)| (y - f) * (y - f))
        .sum();
    let eta2 = (ss / targets.len() as f64).sqrt();
    if !eta2.is_finite() {
        return Err(Error::numeric("validation residuals are not finite"));
    }
    Ok(NoiseEstimate {
        eta2,
        validation_size: targets.len(),
    })
}

/// Inherent noise from dropout-free residuals on held-out samples.
pub fn estimate_inherent_noise(
    encoder: &Seq2SeqModel,
    net: &PredictionNetwork,
    validation: &[WindowSample],
) -> Result<NoiseEstimate> {
    if validation.is_empty() {
        return Err(Error::parameter(
            "inherent-noise estimate needs a non-empty validation set",
        ));
    }
    let preds = predict_samples(encoder, net, validation)?;
    let targets = validation
        .iter()
        .map(|s| {
            s.targets
                .first()
                .copied()
                .ok_or_else(|| Error::data("validation sample has no target"))
        })
        .collect::<Result<Vec<_>>>()?;
    residual_noise(&targets, &preds)
}

/// MC dropout plus inherent noise: the forecast, its total uncertainty and
/// the `1 - alpha` interval, all on the transformed scale.
pub fn infer(
    window: &[f64],
    external: &[f64],
    encoder: &Seq2SeqModel,
    net: &PredictionNetwork,
    cfg: &DropoutConfig,
    noise: &NoiseEstimate,
    alpha: f64,
) -> Result<PredictionResult> {
    check_alpha(alpha)?;
    let mc = mc_dropout(window, external, encoder, net, cfg)?;
    PredictionResult::new(mc.mean, mc.eta1, noise.eta2, alpha)
}

/// Fraction of actuals inside their intervals, bounds inclusive.
pub fn calibrate_coverage(intervals: &[Interval], actuals: &[f64]) -> Result<f64> {
    if intervals.len() != actuals.len() {
        return Err(Error::shape(format!(
            "{} intervals but {} actuals",
            intervals.len(),
            actuals.len()
        )));
    }
    if actuals.is_empty() {
        return Err(Error::shape("coverage of an empty set is undefined"));
    }
    let hits = intervals
        .iter()
        .zip(actuals)
        .filter(|(i, &a)| i.contains(a))
        .count();
    Ok(hits as f64 / actuals.len() as f64)
}

/// One row of the prediction output, original scale except the `eta`
/// columns.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub series_id: String,
    pub date: NaiveDate,
    pub y_hat: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub eta: f64,
    pub lower: f64,
    pub upper: f64,
}

impl PredictionRow {
    pub fn from_result(
        series_id: &str,
        date: NaiveDate,
        result: &PredictionResult,
        offset: f64,
        mode: TransformMode,
    ) -> Result<Self> {
        let interval = result.interval.inverse_transform(offset, mode)?;
        Ok(Self {
            series_id: series_id.to_string(),
            date,
            y_hat: inverse_transform(result.y_hat, offset, mode)?,
            eta1: result.eta1,
            eta2: result.eta2,
            eta: result.eta,
            lower: interval.lower,
            upper: interval.upper,
        })
    }
}

pub fn predictions_csv(rows: &[PredictionRow]) -> String {
    let mut out = String::from("series_id,date,y_hat,eta1,eta2,eta,lower,upper\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.series_id, r.date, r.y_hat, r.eta1, r.eta2, r.eta, r.lower, r.upper
        ));
    }
    out
}

/// Original-scale intervals of the three uncertainty variants for one
/// sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariantIntervals {
    /// Dropout in the prediction network only, no noise term.
    pub pred_net: Interval,
    /// Dropout in encoder and prediction network, no noise term.
    pub enc_pred: Interval,
    /// Encoder and prediction-network dropout plus inherent noise.
    pub enc_pred_noise: Interval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageRow {
    pub series_id: String,
    pub pred_net: f64,
    pub enc_pred: f64,
    pub enc_pred_noise: f64,
}

/// Trained models plus everything needed to turn windows into intervals.
#[derive(Debug, Clone, Copy)]
pub struct Forecaster<'a> {
    pub encoder: &'a Seq2SeqModel,
    pub net: &'a PredictionNetwork,
    pub dropout: DropoutConfig,
    pub noise: NoiseEstimate,
    pub alpha: f64,
    pub mode: TransformMode,
}

impl Forecaster<'_> {
    pub fn infer(&self, sample: &WindowSample) -> Result<PredictionResult> {
        infer(
            &sample.inputs,
            &sample.external,
            self.encoder,
            self.net,
            &self.dropout,
            &self.noise,
            self.alpha,
        )
    }

    /// One output row per sample, dated by its target day.
    pub fn predict_rows(&self, samples: &[WindowSample]) -> Result<Vec<PredictionRow>> {
        samples
            .iter()
            .map(|s| {
                let r = self.infer(s)?;
                PredictionRow::from_result(
                    &s.series_id,
                    s.first_target_date(),
                    &r,
                    s.offset,
                    self.mode,
                )
            })
            .collect()
    }

    pub fn variant_intervals(&self, sample: &WindowSample) -> Result<VariantIntervals> {
        let (w, e) = (&sample.inputs, &sample.external);
        let pred_only = mc_dropout_scoped(
            w,
            e,
            self.encoder,
            self.net,
            &self.dropout,
            DropoutScope::PredictionOnly,
        )?;
        let full = mc_dropout(w, e, self.encoder, self.net, &self.dropout)?;
        let back = |mean: f64, eta1: f64, eta2: f64| {
            PredictionResult::new(mean, eta1, eta2, self.alpha)?
                .interval
                .inverse_transform(sample.offset, self.mode)
        };
        Ok(VariantIntervals {
            pred_net: back(pred_only.mean, pred_only.eta1, 0.0)?,
            enc_pred: back(full.mean, full.eta1, 0.0)?,
            enc_pred_noise: back(full.mean, full.eta1, self.noise.eta2)?,
        })
    }

    /// Coverage of the three variants over one series' samples against
    /// the original-scale first targets.
    pub fn coverage_row(&self, series_id: &str, samples: &[WindowSample]) -> Result<CoverageRow> {
        let mut a = Vec::with_capacity(samples.len());
        let mut b = Vec::with_capacity(samples.len());
        let mut c = Vec::with_capacity(samples.len());
        let mut actual = Vec::with_capacity(samples.len());
        for s in samples {
            let v = self.variant_intervals(s)?;
            a.push(v.pred_net);
            b.push(v.enc_pred);
            c.push(v.enc_pred_noise);
            actual.push(original_target(s, self.mode)?);
        }
        Ok(CoverageRow {
            series_id: series_id.to_string(),
            pred_net: calibrate_coverage(&a, &actual)?,
            enc_pred: calibrate_coverage(&b, &actual)?,
            enc_pred_noise: calibrate_coverage(&c, &actual)?,
        })
    }
}

/// The first target of a sample on the original scale.
pub fn original_target(sample: &WindowSample, mode: TransformMode) -> Result<f64> {
    let t = *sample
        .targets
        .first()
        .ok_or_else(|| Error::data(format!("sample of {} has no target", sample.series_id)))?;
    inverse_transform(t, sample.offset, mode)
}

/// Per-series coverage in percent plus an `Average` row.
pub fn coverage_csv(rows: &[CoverageRow]) -> String {
    let mut out = String::from("series_id,PredNet,Enc+Pred,Enc+Pred+Noise\n");
    let pct = |x: f64| format!("{:.2}", 100.0 * x);
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.series_id,
            pct(r.pred_net),
            pct(r.enc_pred),
            pct(r.enc_pred_noise)
        ));
    }
    if !rows.is_empty() {
        let n = rows.len() as f64;
        let avg = |f: fn(&CoverageRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        out.push_str(&format!(
            "Average,{},{},{}\n",
            pct(avg(|r| r.pred_net)),
            pct(avg(|r| r.enc_pred)),
            pct(avg(|r| r.enc_pred_noise))
        ));
    }
    out
}
