#![allow(dead_code)]

use bayescast::forecast::{
    prediction_loss_and_gradients, PredictionNetwork, PredictionNetworkConfig,
};
use bayescast::nn::{DropoutMask, Gradients, Parameterized, SeededRng};
use bayescast::seq2seq::{EncoderMasks, Seq2SeqConfig, Seq2SeqModel};
use bayescast::uncertainty::{forward_with_masks, PassMasks};
use bayescast::Result;
use ndarray::Array2;

/// Largest relative error between analytic gradients and central
/// differences of `loss` over every parameter coordinate.
pub fn max_gradient_error<M, F>(
    model: &mut M,
    analytic: &Gradients,
    step: f64,
    mut loss: F,
) -> Result<f64>
where
    M: Parameterized,
    F: FnMut(&M) -> Result<f64>,
{
    let shapes: Vec<usize> = model.parameters().iter().map(|p| p.len()).collect();
    assert_eq!(shapes.len(), analytic.tensors().len(), "tensor count");
    let mut worst = 0.0_f64;
    for (t, &len) in shapes.iter().enumerate() {
        assert_eq!(len, analytic.tensors()[t].len(), "tensor {t} length");
        for k in 0..len {
            let orig = model.parameters()[t][k];
            model.parameters_mut()[t][k] = orig + step;
            let up = loss(model)?;
            model.parameters_mut()[t][k] = orig - step;
            let down = loss(model)?;
            model.parameters_mut()[t][k] = orig;
            let numeric = (up - down) / (2.0 * step);
            let exact = analytic.tensors()[t][k];
            let scale = exact.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((exact - numeric).abs() / scale);
        }
    }
    Ok(worst)
}

fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut SeededRng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || scale * (2.0 * rng.uniform() - 1.0))
}

fn pick(rng: &mut SeededRng, lo: usize, hi: usize) -> usize {
    lo + (rng.uniform() * (hi - lo + 1) as f64) as usize
}

/// A random encoder-decoder with at most 500 parameters; even cases use
/// dropout masks. Returns a description and the worst relative error.
pub fn seq2seq_gradient_case(rng: &mut SeededRng, case: usize) -> (String, f64) {
    let layers = pick(rng, 1, 2);
    let hidden: Vec<usize> = (0..layers).map(|_| pick(rng, 1, 4)).collect();
    let horizon = pick(rng, 1, 3);
    let window = horizon + pick(rng, 1, 4);
    let cfg = Seq2SeqConfig {
        hidden_sizes: hidden.clone(),
        window,
        horizon,
    };
    let mut model = Seq2SeqModel::new(&cfg, rng).unwrap();
    assert!(model.num_parameters() <= 500);
    let n = 3;
    let x = random_matrix(n, window, 1.0, rng);
    let y = random_matrix(n, horizon, 1.0, rng);
    let p = if case % 2 == 0 { 0.3 } else { 0.0 };
    let enc: Vec<_> = (0..n)
        .map(|_| EncoderMasks::sample(&hidden, p, rng).unwrap())
        .collect();
    let dec: Vec<_> = (0..n)
        .map(|_| EncoderMasks::sample(&hidden, p, rng).unwrap())
        .collect();
    let (_, grads) = model
        .reconstruction_loss_and_gradients(x.view(), y.view(), &enc, &dec)
        .unwrap();
    let err = max_gradient_error(&mut model, &grads, 1e-5, |m| {
        m.reconstruction_loss_and_gradients(x.view(), y.view(), &enc, &dec)
            .map(|(l, _)| l)
    })
    .unwrap();
    (
        format!("seq2seq {hidden:?} T={window} F={horizon} p={p}"),
        err,
    )
}

/// A random prediction network with at most 500 parameters; even cases
/// use dropout masks.
pub fn prediction_gradient_case(rng: &mut SeededRng, case: usize) -> (String, f64) {
    let emb = pick(rng, 1, 6);
    let hidden: Vec<usize> = (0..pick(rng, 1, 3)).map(|_| pick(rng, 1, 8)).collect();
    let cfg = PredictionNetworkConfig {
        hidden_sizes: hidden.clone(),
        ..Default::default()
    };
    let mut net = PredictionNetwork::init(emb, &cfg, rng).unwrap();
    assert!(net.num_parameters() <= 500);
    let n = 4;
    let x = random_matrix(n, net.input_width(), 1.5, rng);
    let y = random_matrix(n, 1, 1.0, rng);
    let masks: Vec<Option<Array2<f64>>> = hidden
        .iter()
        .map(|&w| {
            (case % 2 == 0).then(|| {
                Array2::from_shape_simple_fn((n, w), || {
                    if rng.uniform() < 0.3 {
                        0.0
                    } else {
                        1.0 / 0.7
                    }
                })
            })
        })
        .collect();
    let (_, grads) = prediction_loss_and_gradients(&net, x.view(), y.view(), &masks).unwrap();
    let err = max_gradient_error(&mut net, &grads, 1e-5, |m| {
        prediction_loss_and_gradients(m, x.view(), y.view(), &masks).map(|(l, _)| l)
    })
    .unwrap();
    (format!("prediction net emb={emb} {hidden:?}"), err)
}

pub fn models(hidden: Vec<usize>, mlp: Vec<usize>, seed: u64) -> (Seq2SeqModel, PredictionNetwork) {
    let mut rng = SeededRng::new(seed, 0);
    let cfg = Seq2SeqConfig {
        hidden_sizes: hidden,
        window: 28,
        horizon: 7,
    };
    let enc = Seq2SeqModel::new(&cfg, &mut rng).unwrap();
    let pcfg = PredictionNetworkConfig {
        hidden_sizes: mlp,
        ..Default::default()
    };
    let net =
        PredictionNetwork::init(enc.embedding_width(pcfg.embedding), &pcfg, &mut rng).unwrap();
    (enc, net)
}

pub fn window() -> Vec<f64> {
    (0..28)
        .map(|t| 0.3 * ((t as f64) * 0.9).sin() + 0.01 * t as f64)
        .collect()
}

pub const EXT: [f64; 8] = [0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0];

/// Exact mean and variance over every keep/drop pattern of a toy model.
pub fn enumerate(
    enc: &Seq2SeqModel,
    net: &PredictionNetwork,
    p: f64,
    w: &[f64],
) -> (f64, f64, f64) {
    let hidden = enc.hidden_sizes();
    let enc_bits = EncoderMasks::bit_count(&hidden);
    let widths = net.hidden_widths();
    let net_bits: usize = widths.iter().sum();
    let total = enc_bits + net_bits;
    assert!(total <= 12, "{total} mask bits");
    let mut passes = Vec::new();
    let mut weights = Vec::new();
    for code in 0u32..(1 << total) {
        let bits: Vec<bool> = (0..total).map(|i| code >> i & 1 == 1).collect();
        let kept = bits.iter().filter(|&&b| b).count() as i32;
        weights.push((1.0 - p).powi(kept) * p.powi(total as i32 - kept));
        let mut at = 0;
        let network = widths
            .iter()
            .map(|&wd| {
                let m = DropoutMask::from_keep_bits(&bits[at..at + wd], p).unwrap();
                at += wd;
                m
            })
            .collect();
        let encoder = Some(EncoderMasks::from_keep_bits(&hidden, &bits[at..], p).unwrap());
        passes.push(PassMasks { network, encoder });
    }
    let out = forward_with_masks(enc, net, w, &EXT, &passes).unwrap();
    let mean: f64 = out.iter().zip(&weights).map(|(y, q)| q * y).sum();
    let var: f64 = out
        .iter()
        .zip(&weights)
        .map(|(y, q)| q * (y - mean).powi(2))
        .sum();
    let m4: f64 = out
        .iter()
        .zip(&weights)
        .map(|(y, q)| q * (y - mean).powi(4))
        .sum();
    (mean, var, m4)
}
