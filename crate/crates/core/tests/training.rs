use bayescast::embedding::export_embeddings;
use bayescast::forecast::{predict_samples, smape, train_prediction_network, FeatureSet};
use bayescast::nn::{AdamConfig, TrainConfig};
use bayescast::pipeline::{
    generate_synthetic, make_windows, HolidayCalendar, SyntheticSpec, TimeSeries, TransformMode,
    WindowPurpose, WindowSample, WindowSpec,
};
use bayescast::seq2seq::pretrain;
use bayescast::{EmbeddingSource, PredictionNetworkConfig, Seq2SeqConfig};
use chrono::NaiveDate;

fn start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2018, 1, 1).unwrap()
}

fn windows(values: Vec<f64>, window: usize, purpose: WindowPurpose) -> Vec<WindowSample> {
    windows_with(values, window, purpose, TransformMode::Log)
}

fn windows_with(
    values: Vec<f64>,
    window: usize,
    purpose: WindowPurpose,
    mode: TransformMode,
) -> Vec<WindowSample> {
    let s = TimeSeries::new("s", start(), values).unwrap();
    let spec = WindowSpec {
        length: window,
        horizon: 1,
        decoder_horizon: 7,
    };
    make_windows(&s, spec, purpose, &HolidayCalendar::new(), mode).unwrap()
}

fn sinusoid(len: usize) -> Vec<f64> {
    (0..len)
        .map(|t| (2.0 + 0.5 * (2.0 * std::f64::consts::PI * t as f64 / 7.0).sin()).exp())
        .collect()
}

fn train_config(epochs: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        optimizer: AdamConfig {
            learning_rate: lr,
            ..AdamConfig::default()
        },
        dropout: 0.0,
        seed: 3,
        ..TrainConfig::default()
    }
}

fn s2s(hidden: Vec<usize>, window: usize) -> Seq2SeqConfig {
    Seq2SeqConfig {
        hidden_sizes: hidden,
        window,
        horizon: 7,
    }
}

fn variance(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = v.clone().count() as f64;
    let m = v.clone().sum::<f64>() / n;
    v.map(|x| (x - m).powi(2)).sum::<f64>() / n
}

#[test]
fn zero_series_stays_at_zero_loss() {
    let data = windows_with(
        vec![0.0; 80],
        14,
        WindowPurpose::Pretraining,
        TransformMode::Log1p,
    );
    assert!(data
        .iter()
        .all(|w| w.inputs.iter().chain(&w.targets).all(|&v| v == 0.0)));
    let (model, report) = pretrain(&data, &s2s(vec![8], 14), &train_config(50, 1e-2)).unwrap();
    assert_eq!(report.epoch_losses.len(), 50);
    assert!(
        report.final_loss().unwrap() < 1e-12,
        "{:?}",
        report.epoch_losses
    );
    assert!(model
        .reconstruct(&data[0].inputs)
        .unwrap()
        .iter()
        .all(|v| v.abs() < 1e-6));
}

#[test]
fn sinusoid_is_reconstructed_and_loss_trends_down() {
    let data = windows(sinusoid(300), 14, WindowPurpose::Pretraining);
    let var = variance(data.iter().flat_map(|w| w.targets.iter().copied()));
    let (model, report) = pretrain(&data, &s2s(vec![16], 14), &train_config(60, 1e-3)).unwrap();
    let mse = data
        .iter()
        .flat_map(|w| {
            let r = model.reconstruct(&w.inputs).unwrap();
            r.into_iter()
                .zip(w.targets.clone())
                .map(|(a, b)| (a - b).powi(2))
        })
        .sum::<f64>()
        / (data.len() * 7) as f64;
    assert!(mse < 0.1 * var, "mse {mse:e} vs variance {var:e}");

    let moving: Vec<f64> = report
        .epoch_losses
        .windows(10)
        .map(|w| w.iter().sum::<f64>() / 10.0)
        .collect();
    for (i, pair) in moving.windows(2).enumerate() {
        assert!(
            pair[1] <= pair[0],
            "10-epoch average rose at epoch {}: {:e} -> {:e}",
            i + 11,
            pair[0],
            pair[1]
        );
    }
}

#[test]
fn single_sample_is_memorised() {
    let data: Vec<_> = windows(sinusoid(40), 14, WindowPurpose::Pretraining)
        .into_iter()
        .take(1)
        .collect();
    let (model, _) = pretrain(&data, &s2s(vec![16], 14), &train_config(400, 1e-2)).unwrap();
    let out = model.reconstruct(&data[0].inputs).unwrap();
    for (a, b) in out.iter().zip(&data[0].targets) {
        assert!((a - b).abs() < 1e-2, "{a} vs {b}");
    }
}

#[test]
fn pretraining_is_deterministic() {
    let data = windows(sinusoid(120), 14, WindowPurpose::Pretraining);
    let mut cfg = train_config(5, 1e-3);
    cfg.dropout = 0.2;
    let (a, ra) = pretrain(&data, &s2s(vec![6, 4], 14), &cfg).unwrap();
    let (b, rb) = pretrain(&data, &s2s(vec![6, 4], 14), &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
}

fn weekly_series(len: usize, sigma: f64, seed: u64) -> TimeSeries {
    let spec = SyntheticSpec::basic("w", start(), len, sigma);
    generate_synthetic(&spec, seed).unwrap().series
}

#[test]
fn embeddings_separate_days_of_week() {
    let s = weekly_series(500, 0.02, 4);
    let spec = WindowSpec {
        length: 28,
        horizon: 1,
        decoder_horizon: 7,
    };
    let cal = HolidayCalendar::new();
    let pre = make_windows(
        &s,
        spec,
        WindowPurpose::Pretraining,
        &cal,
        TransformMode::Log,
    )
    .unwrap();
    let (model, _) = pretrain(&pre, &s2s(vec![16, 8], 28), &train_config(30, 3e-3)).unwrap();

    let ws = make_windows(
        &s,
        spec,
        WindowPurpose::Prediction,
        &cal,
        TransformMode::Log,
    )
    .unwrap();
    let rows = export_embeddings(&model, &ws, EmbeddingSource::Last).unwrap();
    assert_eq!(rows.len(), ws.len());
    assert_eq!(rows[5].values, model.encode(&ws[5].inputs).unwrap().values);

    let (train, test) = rows.split_at(rows.len() / 2);
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let correct = test
        .iter()
        .filter(|r| {
            let nn = train
                .iter()
                .min_by(|a, b| dist(&a.values, &r.values).total_cmp(&dist(&b.values, &r.values)))
                .unwrap();
            nn.dow == r.dow
        })
        .count();
    let accuracy = correct as f64 / test.len() as f64;
    assert!(
        accuracy >= 2.0 / 7.0,
        "1-NN day-of-week accuracy {accuracy:.3}"
    );
}

fn predictor(hidden: Vec<usize>) -> PredictionNetworkConfig {
    PredictionNetworkConfig {
        hidden_sizes: hidden,
        features: FeatureSet::Calendar,
        embedding: EmbeddingSource::Last,
    }
}

#[test]
fn zero_targets_train_to_zero_predictions() {
    let data = windows(vec![3.0; 100], 14, WindowPurpose::Prediction);
    let (encoder, _) = pretrain(
        &windows(vec![3.0; 100], 14, WindowPurpose::Pretraining),
        &s2s(vec![4], 14),
        &train_config(2, 1e-3),
    )
    .unwrap();
    let (net, _) = train_prediction_network(
        &encoder,
        &data,
        &predictor(vec![8, 4]),
        &train_config(150, 1e-2),
    )
    .unwrap();
    let pred = predict_samples(&encoder, &net, &data).unwrap();
    assert!(pred.iter().all(|p| p.abs() < 1e-2), "{pred:?}");
}

#[test]
fn noiseless_series_fits_and_order_does_not_matter() {
    let s = weekly_series(400, 0.0, 1);
    let spec = WindowSpec {
        length: 28,
        horizon: 1,
        decoder_horizon: 7,
    };
    let cal = HolidayCalendar::new();
    let pre = make_windows(
        &s,
        spec,
        WindowPurpose::Pretraining,
        &cal,
        TransformMode::Log,
    )
    .unwrap();
    let (encoder, _) = pretrain(&pre, &s2s(vec![16, 8], 28), &train_config(20, 3e-3)).unwrap();
    let data = make_windows(
        &s,
        spec,
        WindowPurpose::Prediction,
        &cal,
        TransformMode::Log,
    )
    .unwrap();
    let (train, test) = data.split_at(300);
    let cfg = train_config(40, 3e-3);

    let (net, _) =
        train_prediction_network(&encoder, train, &predictor(vec![16, 8]), &cfg).unwrap();
    let pred = predict_samples(&encoder, &net, train).unwrap();
    assert!(pred.iter().all(|p| p.is_finite()));
    let var = variance(train.iter().map(|w| w.targets[0]));
    let mse = pred
        .iter()
        .zip(train)
        .map(|(p, w)| (p - w.targets[0]).powi(2))
        .sum::<f64>()
        / train.len() as f64;
    assert!(mse < 0.1 * var, "training mse {mse:e} vs variance {var:e}");

    let actual: Vec<f64> = test
        .iter()
        .map(|w| (w.targets[0] + w.offset).exp())
        .collect();
    let test_smape = |net| {
        let p = predict_samples(&encoder, net, test).unwrap();
        let back: Vec<f64> = p
            .iter()
            .zip(test)
            .map(|(p, w)| (p + w.offset).exp())
            .collect();
        smape(&actual, &back).unwrap()
    };
    let mut reversed = train.to_vec();
    reversed.reverse();
    let (net_rev, _) =
        train_prediction_network(&encoder, &reversed, &predictor(vec![16, 8]), &cfg).unwrap();
    let (a, b) = (test_smape(&net), test_smape(&net_rev));
    assert!(
        (a - b).abs() <= 0.1 * a.max(b),
        "SMAPE {a:.4} vs {b:.4} after permuting"
    );
}
