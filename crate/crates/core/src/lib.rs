//! Probabilistic time-series forecasting with an LSTM encoder-decoder, a
//! prediction network and Monte Carlo dropout uncertainty.
//!
//! The pieces, bottom-up:
//!
//! - [`nn`]: dense/LSTM layers, dropout masks, BPTT and the optimizer.
//! - [`seq2seq`]: encoder-decoder pre-training and the embedding extractor.
//! - [`forecast`]: the prediction network, SMAPE and the last-day baseline.
//! - [`uncertainty`]: MC dropout, inherent-noise estimation and intervals.
//! - [`pipeline`]: ingestion, log/detrend transforms, windows, calendar
//!   features, chronological splits and synthetic data.
//! - [`detect`]: interval-based anomaly alerts and their evaluation.
//! - [`bundle`] and [`config`]: persisted models and run configuration.

pub mod bundle;
pub mod config;
pub mod detect;
pub mod embedding;
pub mod error;
pub mod forecast;
pub mod io;
pub mod nn;
pub mod pipeline;
pub mod seq2seq;
pub mod uncertainty;
pub mod workflow;

pub use error::{Error, Result};
pub use forecast::{FeatureSet, PredictionNetwork, PredictionNetworkConfig};
pub use pipeline::{TimeSeries, TransformMode, WindowSample};
pub use seq2seq::{Embedding, EmbeddingSource, Seq2SeqConfig, Seq2SeqModel};
pub use uncertainty::{
    DropoutConfig, DropoutScope, Forecaster, Interval, NoiseEstimate, PredictionResult,
};
