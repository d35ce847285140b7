//! `bayescast`: pre-train, train, infer, calibrate, detect, embed, synth.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use bayescast::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "bayescast",
    version,
    about = "LSTM encoder-decoder forecasting with MC-dropout intervals"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Configuration file (`key = value` lines, `#` comments).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for weight init, dropout masks, shuffling and synthetic data.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for CSV outputs and the echoed configuration.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out_dir: PathBuf,
    /// Input CSV (`series_id,date,value`); same as `--set data=FILE`.
    #[arg(long, global = true, value_name = "FILE")]
    pub data: Option<PathBuf>,
    /// Override one configuration key; may be repeated.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Log progress to stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Span {
    Train,
    Validation,
    Test,
    All,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the encoder-decoder and save a new bundle.
    Pretrain,
    /// Fit the prediction network on the frozen encoder and estimate the noise level.
    Train,
    /// Write point forecasts with prediction intervals.
    Infer {
        #[arg(long, value_enum, default_value = "test")]
        span: Span,
    },
    /// Report interval coverage of the three uncertainty variants.
    Calibrate,
    /// Flag test points outside their intervals.
    Detect {
        /// Ground truth (`series_id,date,anomaly`) for precision and recall.
        #[arg(long, value_name = "FILE")]
        labels: Option<PathBuf>,
    },
    /// Export encoder embeddings with a two-component PCA projection.
    Embed {
        #[arg(long, value_enum, default_value = "test")]
        span: Span,
    },
    /// Generate a synthetic panel with labels and holidays.
    Synth,
}

/// Usage problems map to 1, input problems to 2, numeric or training
/// failures to 3.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<commands::ConfigError>().is_some() {
        return 1;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::Parameter(_)) => 1,
        Some(Error::Numeric(_) | Error::Training(_) | Error::Shape(_)) => 3,
        _ => 2,
    }
}

/// The error chain joined by `: `, skipping causes already quoted by their
/// parent message.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !out.ends_with(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.global.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();

    let result = commands::load_config(&cli.global).and_then(|cfg| {
        let g = &cli.global;
        match cli.command {
            Command::Pretrain => commands::pretrain(&cfg, g),
            Command::Train => commands::train(&cfg, g),
            Command::Infer { span } => commands::infer(&cfg, g, span),
            Command::Calibrate => commands::calibrate(&cfg, g),
            Command::Detect { labels } => commands::detect(&cfg, g, labels.as_deref()),
            Command::Embed { span } => commands::embed(&cfg, g, span),
            Command::Synth => commands::synth(&cfg, g),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
