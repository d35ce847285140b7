//! Run configuration: a flat `key = value` file with `#` comments.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::forecast::{FeatureSet, PredictionNetworkConfig};
use crate::nn::optim::AdamConfig;
use crate::nn::train::TrainConfig;
use crate::pipeline::{SplitSpec, TransformMode, WindowSpec};
use crate::seq2seq::{EmbeddingSource, Seq2SeqConfig};
use crate::uncertainty::DropoutConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub holidays: Option<PathBuf>,
    pub model_dir: PathBuf,
    pub window: usize,
    pub horizon: usize,
    pub decoder_horizon: usize,
    pub encoder_layers: Vec<usize>,
    pub predictor_layers: Vec<usize>,
    pub features: FeatureSet,
    pub embedding: EmbeddingSource,
    pub dropout: f64,
    pub mc_iterations: usize,
    pub seed: u64,
    pub pretrain_epochs: usize,
    pub train_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub train_end: Option<NaiveDate>,
    pub validation_end: Option<NaiveDate>,
    pub alpha: f64,
    pub transform: TransformMode,
    pub synth_series: usize,
    pub synth_years: f64,
    pub synth_sigma: f64,
    pub synth_holiday_effect: f64,
    pub synth_spikes: usize,
    pub synth_spike_sigmas: f64,
    /// Log-scale level shift starting 30 days into the test span.
    pub synth_regime_shift: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            holidays: None,
            model_dir: PathBuf::from("model"),
            window: 28,
            horizon: 1,
            decoder_horizon: 7,
            encoder_layers: vec![128, 32],
            predictor_layers: vec![128, 64, 16],
            features: FeatureSet::Calendar,
            embedding: EmbeddingSource::Last,
            dropout: 0.05,
            mc_iterations: 200,
            seed: 42,
            pretrain_epochs: 30,
            train_epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            clip_norm: 5.0,
            train_end: None,
            validation_end: None,
            alpha: 0.05,
            transform: TransformMode::Log,
            synth_series: 8,
            synth_years: 4.0,
            synth_sigma: 0.1,
            synth_holiday_effect: 0.5,
            synth_spikes: 0,
            synth_spike_sigmas: 6.0,
            synth_regime_shift: 0.0,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::parameter(format!("invalid value `{value}` for `{key}`")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|v| parse_value(key, v.trim()))
        .collect()
}

fn parse_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn parse_date(key: &str, value: &str) -> Result<Option<NaiveDate>> {
    if value.is_empty() {
        return Ok(None);
    }
    NaiveDate::parse_from_str(value, "%Y-%m-%d")
        .map(Some)
        .map_err(|_| {
            Error::parameter(format!(
                "invalid date `{value}` for `{key}` (expected YYYY-MM-DD)"
            ))
        })
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Applies every `key = value` line of `text` over the defaults.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| err(e.to_string()))?;
        }
        Ok(cfg)
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data" => self.data = parse_path(value),
            "holidays" => self.holidays = parse_path(value),
            "model_dir" => self.model_dir = PathBuf::from(value),
            "window" => self.window = parse_value(key, value)?,
            "horizon" => self.horizon = parse_value(key, value)?,
            "decoder_horizon" => self.decoder_horizon = parse_value(key, value)?,
            "encoder_layers" => self.encoder_layers = parse_list(key, value)?,
            "predictor_layers" => self.predictor_layers = parse_list(key, value)?,
            "features" => self.features = value.parse()?,
            "embedding" => self.embedding = value.parse()?,
            "dropout" => self.dropout = parse_value(key, value)?,
            "mc_iterations" => self.mc_iterations = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "pretrain_epochs" => self.pretrain_epochs = parse_value(key, value)?,
            "train_epochs" => self.train_epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "clip_norm" => self.clip_norm = parse_value(key, value)?,
            "train_end" => self.train_end = parse_date(key, value)?,
            "validation_end" => self.validation_end = parse_date(key, value)?,
            "alpha" => self.alpha = parse_value(key, value)?,
            "transform" => self.transform = value.parse()?,
            "synth_series" => self.synth_series = parse_value(key, value)?,
            "synth_years" => self.synth_years = parse_value(key, value)?,
            "synth_sigma" => self.synth_sigma = parse_value(key, value)?,
            "synth_holiday_effect" => self.synth_holiday_effect = parse_value(key, value)?,
            "synth_spikes" => self.synth_spikes = parse_value(key, value)?,
            "synth_spike_sigmas" => self.synth_spike_sigmas = parse_value(key, value)?,
            "synth_regime_shift" => self.synth_regime_shift = parse_value(key, value)?,
            other => {
                return Err(Error::parameter(format!(
                    "unknown configuration key `{other}`"
                )))
            }
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment.split_once('=').ok_or_else(|| {
            Error::parameter(format!("override `{assignment}` is not `key=value`"))
        })?;
        self.set(k.trim(), v.trim())
    }

    /// Range checks on every numeric field.
    pub fn validate(&self) -> Result<()> {
        self.seq2seq().validate()?;
        self.dropout_config().validate()?;
        self.pretrain_config().validate()?;
        if self.horizon != 1 {
            return Err(Error::parameter(
                "only one-step-ahead forecasting (horizon = 1) is supported",
            ));
        }
        if self.predictor_layers.is_empty() || self.predictor_layers.contains(&0) {
            return Err(Error::parameter(
                "predictor_layers must list positive widths",
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::parameter(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.train_end.is_some() != self.validation_end.is_some() {
            return Err(Error::parameter(
                "set both train_end and validation_end, or neither",
            ));
        }
        let finite_nonneg = [
            ("synth_years", self.synth_years),
            ("synth_sigma", self.synth_sigma),
            ("synth_spike_sigmas", self.synth_spike_sigmas),
        ];
        for (k, v) in finite_nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::parameter(format!(
                    "{k} must be finite and non-negative, got {v}"
                )));
            }
        }
        if !self.synth_holiday_effect.is_finite() || !self.synth_regime_shift.is_finite() {
            return Err(Error::parameter("synthetic effects must be finite"));
        }
        Ok(())
    }

    /// Checks that referenced input files exist.
    pub fn validate_paths(&self) -> Result<()> {
        for p in [&self.data, &self.holidays].into_iter().flatten() {
            if !p.is_file() {
                return Err(Error::Io {
                    path: p.clone(),
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
                });
            }
        }
        Ok(())
    }

    pub fn seq2seq(&self) -> Seq2SeqConfig {
        Seq2SeqConfig {
            hidden_sizes: self.encoder_layers.clone(),
            window: self.window,
            horizon: self.decoder_horizon,
        }
    }

    pub fn predictor(&self) -> PredictionNetworkConfig {
        PredictionNetworkConfig {
            hidden_sizes: self.predictor_layers.clone(),
            features: self.features,
            embedding: self.embedding,
        }
    }

    pub fn window_spec(&self) -> WindowSpec {
        WindowSpec {
            length: self.window,
            horizon: self.horizon,
            decoder_horizon: self.decoder_horizon,
        }
    }

    pub fn dropout_config(&self) -> DropoutConfig {
        DropoutConfig {
            p: self.dropout,
            iterations: self.mc_iterations,
            base_seed: self.seed,
        }
    }

    fn train_config(&self, epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: self.batch_size,
            optimizer: AdamConfig {
                learning_rate: self.learning_rate,
                ..AdamConfig::default()
            },
            clip_norm: self.clip_norm,
            dropout: self.dropout,
            seed: self.seed,
        }
    }

    pub fn pretrain_config(&self) -> TrainConfig {
        self.train_config(self.pretrain_epochs)
    }

    pub fn predictor_train_config(&self) -> TrainConfig {
        self.train_config(self.train_epochs)
    }

    /// Explicit split if configured, otherwise the default ratios.
    pub fn split_spec(&self, first: NaiveDate, last: NaiveDate) -> SplitSpec {
        match (self.train_end, self.validation_end) {
            (Some(train_end), Some(validation_end)) => SplitSpec {
                train_end,
                validation_end,
            },
            _ => SplitSpec::from_ratios(first, last),
        }
    }

    /// Canonical text form; `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        let date = |d: &Option<NaiveDate>| d.map(|d| d.to_string()).unwrap_or_default();
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("data", path(&self.data));
        kv("holidays", path(&self.holidays));
        kv("model_dir", self.model_dir.display().to_string());
        kv("window", self.window.to_string());
        kv("horizon", self.horizon.to_string());
        kv("decoder_horizon", self.decoder_horizon.to_string());
        kv("encoder_layers", join(&self.encoder_layers));
        kv("predictor_layers", join(&self.predictor_layers));
        kv("features", self.features.as_str().to_string());
        kv("embedding", self.embedding.as_str().to_string());
        kv("dropout", self.dropout.to_string());
        kv("mc_iterations", self.mc_iterations.to_string());
        kv("seed", self.seed.to_string());
        kv("pretrain_epochs", self.pretrain_epochs.to_string());
        kv("train_epochs", self.train_epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("learning_rate", self.learning_rate.to_string());
        kv("clip_norm", self.clip_norm.to_string());
        kv("train_end", date(&self.train_end));
        kv("validation_end", date(&self.validation_end));
        kv("alpha", self.alpha.to_string());
        kv("transform", self.transform.as_str().to_string());
        kv("synth_series", self.synth_series.to_string());
        kv("synth_years", self.synth_years.to_string());
        kv("synth_sigma", self.synth_sigma.to_string());
        kv(
            "synth_holiday_effect",
            self.synth_holiday_effect.to_string(),
        );
        kv("synth_spikes", self.synth_spikes.to_string());
        kv("synth_spike_sigmas", self.synth_spike_sigmas.to_string());
        kv("synth_regime_shift", self.synth_regime_shift.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let cfg = RunConfig {
            data: Some(PathBuf::from("a/b.csv")),
            train_end: NaiveDate::from_ymd_opt(2016, 1, 1),
            validation_end: NaiveDate::from_ymd_opt(2016, 5, 1),
            dropout: 0.1 + 0.2,
            ..RunConfig::default()
        };
        let back = RunConfig::parse(&cfg.to_text(), Path::new("x")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn comments_and_overrides() {
        let text = "# comment\nwindow = 14 # inline\n\nencoder_layers = 8, 4\n";
        let mut cfg = RunConfig::parse(text, Path::new("c")).unwrap();
        assert_eq!(cfg.window, 14);
        assert_eq!(cfg.encoder_layers, vec![8, 4]);
        cfg.apply_override("dropout=0").unwrap();
        assert_eq!(cfg.dropout, 0.0);
        assert!(cfg.apply_override("dropout").is_err());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = RunConfig::parse("window = 28\nbogus = 1\n", Path::new("c.conf")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = RunConfig::parse("alpha = x\n", Path::new("c.conf")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn range_validation() {
        assert!(RunConfig::default().validate().is_ok());
        for (k, v) in [
            ("dropout", "1"),
            ("dropout", "-0.1"),
            ("mc_iterations", "0"),
            ("alpha", "0"),
            ("alpha", "1"),
            ("window", "7"),
            ("horizon", "2"),
            ("train_end", "2016-01-01"),
        ] {
            let mut cfg = RunConfig::default();
            cfg.set(k, v).unwrap();
            assert!(
                matches!(cfg.validate(), Err(Error::Parameter(_))),
                "{k}={v}"
            );
        }
    }

    #[test]
    fn missing_files_reported() {
        let cfg = RunConfig {
            data: Some(PathBuf::from("/nonexistent/data.csv")),
            ..RunConfig::default()
        };
        let err = cfg.validate_paths().unwrap_err();
        assert!(err.to_string().contains("/nonexistent/data.csv"), "{err}");
    }
}
