//! Shared fixtures for the benchmarks: default-size models with random
//! weights and a smooth input window.

use bayescast::forecast::FeatureSet;
use bayescast::nn::rng::SeededRng;
use bayescast::pipeline::EXTERNAL_WIDTH;
use bayescast::{
    EmbeddingSource, NoiseEstimate, PredictionNetwork, PredictionNetworkConfig, Seq2SeqConfig,
    Seq2SeqModel,
};

pub struct Fixture {
    pub encoder: Seq2SeqModel,
    pub net: PredictionNetwork,
    pub noise: NoiseEstimate,
    pub window: Vec<f64>,
    pub external: Vec<f64>,
}

impl Fixture {
    pub fn new(encoder_layers: &[usize], predictor_layers: &[usize], window: usize) -> Self {
        let mut rng = SeededRng::new(1, 0);
        let cfg = Seq2SeqConfig {
            hidden_sizes: encoder_layers.to_vec(),
            window,
            horizon: 7,
        };
        let encoder = Seq2SeqModel::new(&cfg, &mut rng).expect("valid encoder config");
        let pcfg = PredictionNetworkConfig {
            hidden_sizes: predictor_layers.to_vec(),
            features: FeatureSet::Calendar,
            embedding: EmbeddingSource::Last,
        };
        let net = PredictionNetwork::init(
            encoder.embedding_width(EmbeddingSource::Last),
            &pcfg,
            &mut rng,
        )
        .expect("valid predictor config");
        let series: Vec<f64> = (0..window).map(|t| 0.2 * (t as f64 * 0.9).sin()).collect();
        let window = series.iter().map(|v| v - series[0]).collect();
        let mut external = vec![0.0; EXTERNAL_WIDTH];
        external[2] = 1.0;
        Self {
            encoder,
            net,
            noise: NoiseEstimate {
                eta2: 0.1,
                validation_size: 100,
            },
            window,
            external,
        }
    }

    /// Encoder 128/32, predictor 128/64/16, 28-day window.
    pub fn default_size() -> Self {
        Self::new(&[128, 32], &[128, 64, 16], 28)
    }
}
