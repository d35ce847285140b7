//! End-to-end glue: windows and splits for a set of series, then the
//! pre-train, train and noise-estimation phases.

use crate::bundle::{ModelBundle, TrainingMeta};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::forecast::{predict_samples, train_prediction_network};
use crate::pipeline::{
    chronological_split, make_windows, synthetic_panel, HolidayCalendar, PanelSpec, Partitions,
    RegimeShift, SplitSpec, SyntheticSeries, TimeSeries, WindowPurpose, WindowSample,
};
use crate::seq2seq::pretrain;
use crate::uncertainty::estimate_inherent_noise;

/// Windows of one series, split chronologically for both purposes.
#[derive(Debug, Clone)]
pub struct SeriesWindows {
    pub series_id: String,
    pub pretraining: Partitions<WindowSample>,
    pub prediction: Partitions<WindowSample>,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub series: Vec<SeriesWindows>,
}

impl Dataset {
    fn collect(&self, pick: impl Fn(&SeriesWindows) -> &Vec<WindowSample>) -> Vec<WindowSample> {
        self.series
            .iter()
            .flat_map(|s| pick(s).iter().cloned())
            .collect()
    }

    pub fn pretraining_train(&self) -> Vec<WindowSample> {
        self.collect(|s| &s.pretraining.train)
    }

    pub fn prediction_train(&self) -> Vec<WindowSample> {
        self.collect(|s| &s.prediction.train)
    }

    pub fn prediction_validation(&self) -> Vec<WindowSample> {
        self.collect(|s| &s.prediction.validation)
    }

    pub fn prediction_test(&self) -> Vec<WindowSample> {
        self.collect(|s| &s.prediction.test)
    }
}

/// Builds windows for every series and splits them by the configured
/// dates, or by the default ratios of each series' own date range.
pub fn prepare(
    series: &[TimeSeries],
    cfg: &RunConfig,
    calendar: &HolidayCalendar,
) -> Result<Dataset> {
    let spec = cfg.window_spec();
    let mut out = Dataset::default();
    for s in series {
        let last = s
            .last_date()
            .ok_or_else(|| Error::data(format!("series {} is empty", s.series_id())))?;
        let split = cfg.split_spec(s.start(), last);
        let build = |purpose| -> Result<Partitions<WindowSample>> {
            let windows = make_windows(s, spec, purpose, calendar, cfg.transform)?;
            chronological_split(s, windows, &split)
        };
        out.series.push(SeriesWindows {
            series_id: s.series_id().to_string(),
            pretraining: build(WindowPurpose::Pretraining)?,
            prediction: build(WindowPurpose::Prediction)?,
        });
    }
    Ok(out)
}

/// Pre-trains the encoder-decoder on the training span.
pub fn run_pretraining(data: &Dataset, cfg: &RunConfig) -> Result<ModelBundle> {
    cfg.validate()?;
    let samples = data.pretraining_train();
    if samples.is_empty() {
        return Err(Error::data(
            "no pre-training windows fall inside the training span",
        ));
    }
    let (seq2seq, report) = pretrain(&samples, &cfg.seq2seq(), &cfg.pretrain_config())?;
    log::info!(
        "pre-trained on {} windows, final loss {:.6e}",
        samples.len(),
        report.final_loss().unwrap_or(f64::NAN)
    );
    Ok(ModelBundle {
        config: cfg.clone(),
        meta: TrainingMeta {
            pretrain_losses: report.epoch_losses,
            train_losses: Vec::new(),
        },
        seq2seq,
        prediction: None,
        noise: None,
    })
}

/// Trains the prediction network on the frozen encoder and estimates the
/// inherent noise on the validation span.
pub fn run_training(data: &Dataset, bundle: ModelBundle, cfg: &RunConfig) -> Result<ModelBundle> {
    cfg.validate()?;
    let enc_cfg = bundle.seq2seq.config();
    if enc_cfg.window != cfg.window || enc_cfg.hidden_sizes != cfg.encoder_layers {
        return Err(Error::parameter(format!(
            "configuration (window {}, encoder {:?}) does not match the bundle's encoder (window {}, {:?})",
            cfg.window, cfg.encoder_layers, enc_cfg.window, enc_cfg.hidden_sizes
        )));
    }
    let train = data.prediction_train();
    if train.is_empty() {
        return Err(Error::data(
            "no prediction windows fall inside the training span",
        ));
    }
    let (net, report) = train_prediction_network(
        &bundle.seq2seq,
        &train,
        &cfg.predictor(),
        &cfg.predictor_train_config(),
    )?;
    let validation = data.prediction_validation();
    let noise = estimate_inherent_noise(&bundle.seq2seq, &net, &validation)?;
    log::info!(
        "trained on {} windows, final loss {:.6e}; eta2 = {:.5} over {} validation windows",
        train.len(),
        report.final_loss().unwrap_or(f64::NAN),
        noise.eta2,
        noise.validation_size
    );
    let mut meta = bundle.meta;
    meta.train_losses = report.epoch_losses;
    Ok(ModelBundle {
        config: cfg.clone(),
        meta,
        seq2seq: bundle.seq2seq,
        prediction: Some(net),
        noise: Some(noise),
    })
}

/// Both phases back to back.
pub fn fit(data: &Dataset, cfg: &RunConfig) -> Result<ModelBundle> {
    let bundle = run_pretraining(data, cfg)?;
    run_training(data, bundle, cfg)
}

/// Point forecasts for `samples` with a fitted bundle.
pub fn point_forecasts(bundle: &ModelBundle, samples: &[WindowSample]) -> Result<Vec<f64>> {
    let net = bundle
        .prediction
        .as_ref()
        .ok_or_else(|| Error::parameter("bundle has no prediction network; run `train` first"))?;
    predict_samples(&bundle.seq2seq, net, samples)
}

/// Days between the start of the test span and the regime shift.
pub const SHIFT_DELAY: usize = 30;
/// Days between the start of the test span and the earliest spike.
pub const SPIKE_DELAY: usize = 40;

/// The synthetic panel described by the `synth_*` keys. The regime shift
/// and the spikes fall inside the default test span.
pub fn synthesize(cfg: &RunConfig) -> Result<Vec<SyntheticSeries>> {
    cfg.validate()?;
    if cfg.synth_series == 0 {
        return Err(Error::parameter("synth_series must be at least 1"));
    }
    let mut spec = PanelSpec::new(cfg.synth_series, cfg.synth_years, cfg.synth_sigma);
    let length = spec.length();
    if length < 2 * (cfg.window + cfg.decoder_horizon) {
        return Err(Error::parameter(format!(
            "synth_years = {} gives {length} days, too short for window {}",
            cfg.synth_years, cfg.window
        )));
    }
    let last = spec.start + chrono::Days::new(length as u64 - 1);
    let split = SplitSpec::from_ratios(spec.start, last);
    let test_start = (split.validation_end - spec.start).num_days() as usize + 1;

    spec.holiday_effect = cfg.synth_holiday_effect;
    if cfg.synth_regime_shift != 0.0 {
        spec.regime_shift = Some(RegimeShift {
            start_index: (test_start + SHIFT_DELAY).min(length - 1),
            log_shift: cfg.synth_regime_shift,
        });
    }
    spec.spikes_per_series = cfg.synth_spikes;
    spec.spike_sigmas = cfg.synth_spike_sigmas;
    spec.spike_range = Some(((test_start + SPIKE_DELAY).min(length - 1), length - 1));
    spec.spike_spacing = cfg.window + cfg.decoder_horizon;
    synthetic_panel(&spec, cfg.seed)
}

/// Holidays from the configured file, or the built-in US calendar padded
/// by a year on each side of the data.
pub fn holiday_calendar(cfg: &RunConfig, series: &[TimeSeries]) -> Result<HolidayCalendar> {
    if let Some(path) = &cfg.holidays {
        return HolidayCalendar::load(path);
    }
    use chrono::Datelike;
    let first = series
        .iter()
        .map(|s| s.start().year())
        .min()
        .unwrap_or(2000);
    let last = series
        .iter()
        .filter_map(|s| s.last_date())
        .map(|d| d.year())
        .max()
        .unwrap_or(first);
    Ok(HolidayCalendar::us_default(first - 1, last + 1))
}
