use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use bayescast::bundle::{load_bundle, save_bundle, ModelBundle};
use bayescast::config::RunConfig;
use bayescast::detect::{
    alerts_csv, evaluate, evaluation_csv, label_decisions, labels_csv, load_labels, run_detection,
};
use bayescast::embedding::{embeddings_csv, export_embeddings, pca_2d};
use bayescast::forecast::{metrics_csv, smape, MetricRow};
use bayescast::io::write_atomic;
use bayescast::pipeline::{ingest_csv, inverse_transform};
use bayescast::uncertainty::{coverage_csv, original_target, predictions_csv, Forecaster};
use bayescast::workflow::{self, Dataset, SeriesWindows};
use bayescast::{Error, WindowSample};

use crate::{GlobalArgs, Span};

pub const BUNDLE_FILE: &str = "bundle.bcast";

/// A problem with the configuration or command line rather than the data.
#[derive(Debug)]
pub struct ConfigError(String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_error(e: impl fmt::Display) -> anyhow::Error {
    ConfigError(e.to_string()).into()
}

/// Defaults, then the config file, then `--data`, `--seed` and `--set`.
pub fn load_config(g: &GlobalArgs) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(path) => RunConfig::load(path).map_err(config_error)?,
        None => RunConfig::default(),
    };
    if let Some(data) = &g.data {
        cfg.data = Some(data.clone());
    }
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    for o in &g.overrides {
        cfg.apply_override(o).map_err(config_error)?;
    }
    cfg.validate().map_err(config_error)?;
    Ok(cfg)
}

fn prepare_out_dir(cfg: &RunConfig, g: &GlobalArgs) -> Result<()> {
    fs::create_dir_all(&g.out_dir).with_context(|| format!("creating {}", g.out_dir.display()))?;
    write_out(g, "config.txt", cfg.to_text())
}

fn write_out(g: &GlobalArgs, name: &str, text: String) -> Result<()> {
    write_atomic(g.out_dir.join(name), text.as_bytes())?;
    Ok(())
}

fn bundle_path(cfg: &RunConfig) -> PathBuf {
    cfg.model_dir.join(BUNDLE_FILE)
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let path = cfg.data.as_ref().ok_or_else(|| {
        config_error("no input data; pass --data FILE or set `data` in the config")
    })?;
    cfg.validate_paths()?;
    let series = ingest_csv(path)?;
    if series.is_empty() {
        return Err(Error::Data(format!("{} contains no series", path.display())).into());
    }
    let calendar = workflow::holiday_calendar(cfg, &series)?;
    Ok(workflow::prepare(&series, cfg, &calendar)?)
}

fn read_bundle(cfg: &RunConfig) -> Result<ModelBundle> {
    let path = bundle_path(cfg);
    if !path.is_file() {
        return Err(anyhow!(
            "no model bundle at {}; run `pretrain` first",
            path.display()
        ));
    }
    load_bundle(&path).with_context(|| format!("loading {}", path.display()))
}

/// The configuration must describe the same windows as the bundle.
fn check_compatible(cfg: &RunConfig, bundle: &ModelBundle) -> Result<()> {
    let b = &bundle.config;
    let enc = bundle.seq2seq.config();
    if cfg.window != enc.window
        || cfg.encoder_layers != enc.hidden_sizes
        || cfg.transform != b.transform
    {
        return Err(Error::Parameter(format!(
            "configuration (window {}, encoder {:?}, transform {}) does not match the bundle \
             (window {}, encoder {:?}, transform {})",
            cfg.window,
            cfg.encoder_layers,
            cfg.transform.as_str(),
            enc.window,
            enc.hidden_sizes,
            b.transform.as_str()
        ))
        .into());
    }
    Ok(())
}

fn losses_csv(losses: &[f64]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (i, l) in losses.iter().enumerate() {
        out.push_str(&format!("{},{l}\n", i + 1));
    }
    out
}

fn span_samples(s: &SeriesWindows, span: Span) -> Vec<WindowSample> {
    let p = &s.prediction;
    match span {
        Span::Train => p.train.clone(),
        Span::Validation => p.validation.clone(),
        Span::Test => p.test.clone(),
        Span::All => [&p.train, &p.validation, &p.test]
            .into_iter()
            .flatten()
            .cloned()
            .collect(),
    }
}

pub fn pretrain(cfg: &RunConfig, g: &GlobalArgs) -> Result<()> {
    let data = load_dataset(cfg)?;
    prepare_out_dir(cfg, g)?;
    let bundle = workflow::run_pretraining(&data, cfg)?;
    let path = bundle_path(cfg);
    fs::create_dir_all(&cfg.model_dir)
        .with_context(|| format!("creating {}", cfg.model_dir.display()))?;
    save_bundle(&path, &bundle)?;
    write_out(
        g,
        "pretrain_losses.csv",
        losses_csv(&bundle.meta.pretrain_losses),
    )?;
    let last = bundle
        .meta
        .pretrain_losses
        .last()
        .copied()
        .unwrap_or(f64::NAN);
    println!("pretrain: final loss {last:.6e}; saved {}", path.display());
    Ok(())
}

pub fn train(cfg: &RunConfig, g: &GlobalArgs) -> Result<()> {
    let data = load_dataset(cfg)?;
    let bundle = read_bundle(cfg)?;
    check_compatible(cfg, &bundle)?;
    prepare_out_dir(cfg, g)?;
    let bundle = workflow::run_training(&data, bundle, cfg)?;
    let path = bundle_path(cfg);
    save_bundle(&path, &bundle)?;
    write_out(g, "train_losses.csv", losses_csv(&bundle.meta.train_losses))?;
    let noise = bundle.noise.expect("training estimates the noise");
    println!(
        "train: eta2 {:.6} over {} validation windows; saved {}",
        noise.eta2,
        noise.validation_size,
        path.display()
    );
    Ok(())
}

/// Loads data and a fully trained bundle, then runs `f` with a forecaster.
fn with_forecaster<T>(
    cfg: &RunConfig,
    g: &GlobalArgs,
    f: impl FnOnce(&Dataset, &Forecaster<'_>) -> Result<T>,
) -> Result<T> {
    let data = load_dataset(cfg)?;
    let bundle = read_bundle(cfg)?;
    check_compatible(cfg, &bundle)?;
    let (net, noise) = match (&bundle.prediction, bundle.noise) {
        (Some(net), Some(noise)) => (net, noise),
        _ => {
            return Err(anyhow!(
                "bundle has no prediction network; run `train` first"
            ))
        }
    };
    prepare_out_dir(cfg, g)?;
    let forecaster = Forecaster {
        encoder: &bundle.seq2seq,
        net,
        dropout: cfg.dropout_config(),
        noise,
        alpha: cfg.alpha,
        mode: cfg.transform,
    };
    f(&data, &forecaster)
}

pub fn infer(cfg: &RunConfig, g: &GlobalArgs, span: Span) -> Result<()> {
    with_forecaster(cfg, g, |data, fc| {
        let mut rows = Vec::new();
        let mut metrics = Vec::new();
        for s in &data.series {
            let samples = span_samples(s, span);
            if samples.is_empty() {
                continue;
            }
            let series_rows = fc.predict_rows(&samples)?;
            let actual = samples
                .iter()
                .map(|w| original_target(w, fc.mode))
                .collect::<Result<Vec<_>, _>>()?;
            let last_day = samples
                .iter()
                .map(|w| {
                    inverse_transform(
                        *w.inputs.last().expect("non-empty window"),
                        w.offset,
                        fc.mode,
                    )
                })
                .collect::<Result<Vec<_>, _>>()?;
            let y_hat: Vec<f64> = series_rows.iter().map(|r| r.y_hat).collect();
            for (model, pred) in [("model", &y_hat), ("last_day", &last_day)] {
                metrics.push(MetricRow {
                    series_id: s.series_id.clone(),
                    model: model.to_string(),
                    smape: smape(&actual, pred)?,
                });
            }
            rows.extend(series_rows);
        }
        if rows.is_empty() {
            return Err(Error::Data("no windows fall inside the requested span".into()).into());
        }
        write_out(g, "predictions.csv", predictions_csv(&rows))?;
        write_out(g, "metrics.csv", metrics_csv(&metrics))?;
        println!(
            "infer: {} predictions written to {}",
            rows.len(),
            g.out_dir.display()
        );
        Ok(())
    })
}

pub fn calibrate(cfg: &RunConfig, g: &GlobalArgs) -> Result<()> {
    with_forecaster(cfg, g, |data, fc| {
        let mut rows = Vec::new();
        for s in &data.series {
            if !s.prediction.test.is_empty() {
                rows.push(fc.coverage_row(&s.series_id, &s.prediction.test)?);
            }
        }
        if rows.is_empty() {
            return Err(Error::Data("no test windows to calibrate on".into()).into());
        }
        let csv = coverage_csv(&rows);
        if let Some(avg) = csv.lines().last() {
            println!("calibrate: {avg}");
        }
        write_out(g, "coverage.csv", csv)
    })
}

pub fn detect(cfg: &RunConfig, g: &GlobalArgs, labels: Option<&Path>) -> Result<()> {
    let labels = labels.map(load_labels).transpose()?;
    with_forecaster(cfg, g, |data, fc| {
        let samples = data.prediction_test();
        let decisions = run_detection(&samples, fc)?;
        let alerts = decisions.iter().filter(|d| d.is_alert).count();
        write_out(g, "alerts.csv", alerts_csv(&decisions))?;
        println!("detect: {alerts} alerts over {} points", decisions.len());
        if let Some(labels) = labels {
            let eval = evaluate(&label_decisions(decisions, &labels)?);
            let pct = |x: Option<f64>| {
                x.map_or("undefined".to_string(), |v| format!("{:.2}%", 100.0 * v))
            };
            println!(
                "detect: precision {}, recall {}",
                pct(eval.precision),
                pct(eval.recall)
            );
            write_out(g, "evaluation.csv", evaluation_csv(&eval))?;
        }
        Ok(())
    })
}

pub fn embed(cfg: &RunConfig, g: &GlobalArgs, span: Span) -> Result<()> {
    let data = load_dataset(cfg)?;
    let bundle = read_bundle(cfg)?;
    check_compatible(cfg, &bundle)?;
    prepare_out_dir(cfg, g)?;
    let source = bundle
        .prediction
        .as_ref()
        .map_or(cfg.embedding, |n| n.embedding_source());
    let samples: Vec<WindowSample> = data
        .series
        .iter()
        .flat_map(|s| span_samples(s, span))
        .collect();
    let rows = export_embeddings(&bundle.seq2seq, &samples, source)?;
    let values: Vec<Vec<f64>> = rows.iter().map(|r| r.values.clone()).collect();
    let projection = pca_2d(&values)?;
    write_out(
        g,
        "embeddings.csv",
        embeddings_csv(&rows, Some(&projection))?,
    )?;
    println!(
        "embed: {} windows, {} dimensions, explained variances {:.4e} / {:.4e}",
        rows.len(),
        values.first().map_or(0, Vec::len),
        projection.variances[0],
        projection.variances[1]
    );
    Ok(())
}

pub fn synth(cfg: &RunConfig, g: &GlobalArgs) -> Result<()> {
    let panel = workflow::synthesize(cfg)?;
    prepare_out_dir(cfg, g)?;
    let mut data = String::from("series_id,date,value\n");
    let mut labels = Vec::new();
    for s in &panel {
        let id = s.series.series_id();
        for (i, (date, v)) in s.series.points().enumerate() {
            data.push_str(&format!("{id},{date},{v}\n"));
            labels.push((id.to_string(), date, s.anomalies[i]));
        }
    }
    let series: Vec<_> = panel.iter().map(|s| s.series.clone()).collect();
    let calendar = workflow::holiday_calendar(cfg, &series)?;
    write_out(g, "data.csv", data)?;
    write_out(g, "labels.csv", labels_csv(labels))?;
    write_out(g, "holidays.txt", calendar.to_text())?;
    println!(
        "synth: {} series of {} days written to {}",
        panel.len(),
        panel.first().map_or(0, |s| s.series.len()),
        g.out_dir.display()
    );
    Ok(())
}
