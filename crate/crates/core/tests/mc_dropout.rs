mod common;

use bayescast::forecast::predict_point;
use bayescast::uncertainty::{
    forward_with_masks, mc_dropout, mc_dropout_scoped, mc_samples, DropoutConfig, DropoutScope,
    PassMasks,
};
use common::{enumerate, models, window, EXT};

#[test]
fn zero_dropout_reproduces_point_forecast_exactly() {
    let (enc, net) = models(vec![128, 32], vec![128, 64, 16], 1);
    let w = window();
    let point = predict_point(&enc, &net, &w, &EXT).unwrap();
    for b in [1, 200, 300] {
        let cfg = DropoutConfig {
            p: 0.0,
            iterations: b,
            base_seed: 5,
        };
        let est = mc_dropout(&w, &EXT, &enc, &net, &cfg).unwrap();
        assert_eq!(est.eta1, 0.0, "B={b}");
        assert_eq!(est.mean, point, "B={b}");
    }
}

#[test]
fn single_pass_has_zero_spread() {
    let (enc, net) = models(vec![8, 4], vec![8, 4], 2);
    let cfg = DropoutConfig {
        p: 0.3,
        iterations: 1,
        base_seed: 11,
    };
    assert_eq!(
        mc_dropout(&window(), &EXT, &enc, &net, &cfg).unwrap().eta1,
        0.0
    );
}

#[test]
fn passes_are_order_and_batch_independent() {
    let (enc, net) = models(vec![8, 4], vec![8, 4], 3);
    let cfg = DropoutConfig {
        p: 0.2,
        iterations: 600,
        base_seed: 99,
    };
    let w = window();
    let batched = mc_samples(&w, &EXT, &enc, &net, &cfg, DropoutScope::Full).unwrap();
    for b in [0, 255, 256, 599] {
        let masks = PassMasks::sample(&enc, &net, &cfg, DropoutScope::Full, b).unwrap();
        let one = forward_with_masks(&enc, &net, &w, &EXT, &[masks]).unwrap();
        assert_eq!(one[0], batched[b], "pass {b}");
    }
    let again = mc_samples(&w, &EXT, &enc, &net, &cfg, DropoutScope::Full).unwrap();
    assert_eq!(again, batched);
}

#[test]
fn prediction_only_scope_shares_network_masks() {
    let (enc, net) = models(vec![6], vec![5], 4);
    let cfg = DropoutConfig {
        p: 0.25,
        iterations: 4,
        base_seed: 8,
    };
    for b in 0..4 {
        let full = PassMasks::sample(&enc, &net, &cfg, DropoutScope::Full, b).unwrap();
        let part = PassMasks::sample(&enc, &net, &cfg, DropoutScope::PredictionOnly, b).unwrap();
        assert_eq!(full.network, part.network);
        assert!(part.encoder.is_none() && full.encoder.is_some());
    }
    let est = mc_dropout_scoped(
        &window(),
        &EXT,
        &enc,
        &net,
        &cfg,
        DropoutScope::PredictionOnly,
    )
    .unwrap();
    assert!(est.eta1 > 0.0);
}

#[test]
fn sampled_moments_match_exhaustive_enumeration() {
    let (enc, net) = models(vec![2, 2], vec![2, 2], 6);
    let p = 0.5;
    let w = window();
    let (mean, var, m4) = enumerate(&enc, &net, p, &w);
    assert!(var > 0.0);
    let b = 100_000;
    let cfg = DropoutConfig {
        p,
        iterations: b,
        base_seed: 123,
    };
    let est = mc_dropout(&w, &EXT, &enc, &net, &cfg).unwrap();
    let se_mean = (var / b as f64).sqrt();
    let se_var = ((m4 - var * var) / b as f64).sqrt();
    assert!(
        (est.mean - mean).abs() <= 3.0 * se_mean,
        "mean {} vs {mean} (se {se_mean})",
        est.mean
    );
    let v = est.eta1 * est.eta1;
    assert!(
        (v - var).abs() <= 3.0 * se_var,
        "var {v} vs {var} (se {se_var})"
    );
}
