//! `traphic`: synthetic data, ingestion, training, prediction and evaluation.
//!
//! Exit codes: 0 ok, 1 usage or configuration error, 2 data error, 3 numeric
//! failure.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use settings::{parse_assignment, Settings};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numeric(String),
    #[error(transparent)]
    Core(#[from] traphic::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(traphic::Error::Config(_)) => 1,
            CliError::Numeric(_) => 3,
            CliError::Core(e) if e.is_numeric() => 3,
            CliError::Core(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "traphic",
    version,
    about = "Road-agent trajectory forecasting with horizon and neighbor interaction maps"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags that mirror config keys; each wins over the `--config` file.
#[derive(Debug, Args)]
struct Common {
    /// Flat JSON object of dotted config keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set model.residual=true`.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_assignment, global = true)]
    set: Vec<(String, Value)>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_parser = ["b", "he", "ho", "combined"])]
    variant: Option<String>,
    #[arg(long, global = true)]
    history_secs: Option<f64>,
    #[arg(long, global = true)]
    predict_secs: Option<f64>,
    #[arg(long, global = true)]
    downsample: Option<u64>,
    /// Neighborhood semi-axis (m); also the horizon's along-heading extent.
    #[arg(long, global = true)]
    neighbor_radius: Option<f64>,
    /// Horizon half-width across the heading (m).
    #[arg(long, global = true)]
    horizon_minor: Option<f64>,
    #[arg(long, global = true)]
    epochs: Option<u64>,
    #[arg(long, global = true)]
    batch: Option<u64>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    #[arg(long, global = true)]
    workers: Option<u64>,
    #[arg(long, global = true, value_parser = ["rmse", "mean"])]
    ade_convention: Option<String>,
    /// Track file format: `traf` or `ngsim`.
    #[arg(long, global = true)]
    format: Option<String>,
    /// Nine row-major numbers (comma or space separated) or a file holding them.
    #[arg(long, global = true)]
    homography: Option<String>,
}

impl Common {
    fn overrides(&self) -> Vec<(String, Value)> {
        let mut out = Vec::new();
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        put("seed", self.seed.map(|v| json!(v)));
        put("variant", self.variant.as_ref().map(|v| json!(v)));
        put("history-secs", self.history_secs.map(|v| json!(v)));
        put("predict-secs", self.predict_secs.map(|v| json!(v)));
        put("downsample", self.downsample.map(|v| json!(v)));
        put("neighbor-radius", self.neighbor_radius.map(|v| json!(v)));
        put("horizon-minor", self.horizon_minor.map(|v| json!(v)));
        put("epochs", self.epochs.map(|v| json!(v)));
        put("batch", self.batch.map(|v| json!(v)));
        put("lr", self.lr.map(|v| json!(v)));
        put("workers", self.workers.map(|v| json!(v)));
        put(
            "ade-convention",
            self.ade_convention.as_ref().map(|v| json!(v)),
        );
        put("format", self.format.as_ref().map(|v| json!(v)));
        put("homography", self.homography.as_ref().map(|v| json!(v)));
        // explicit --set assignments come last and win
        out.extend(self.set.iter().cloned());
        out
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic traffic dataset (world-space CSV).
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a track file and optionally convert it to world-space CSV.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump the scene window and ego state spaces as JSON.
    Inspect {
        #[arg(long)]
        data: PathBuf,
        /// Window index after sorting by reference frame.
        #[arg(long, default_value_t = 0)]
        window: usize,
        /// Ego agent id; every ego candidate when omitted.
        #[arg(long)]
        ego: Option<i64>,
    },
    /// Train a model; writes a checkpoint and a JSON-lines report.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to `<out>.report.jsonl`.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write the checkpoint as JSON instead of the binary container.
        #[arg(long)]
        json: bool,
    },
    /// Predict the future of one ego in one window.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        window: usize,
        #[arg(long)]
        ego: Option<i64>,
        /// Draw one trajectory with this seed instead of taking the means.
        #[arg(long)]
        sample: Option<u64>,
    },
    /// Evaluate a checkpoint (and the kinematic baselines) on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Write per-second ADE/FDE curves as CSV.
        #[arg(long)]
        plot_data: Option<PathBuf>,
        /// Write the reports as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train and evaluate all four variants on one split.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        /// Separate test file; otherwise the last `test-fraction` by time.
        #[arg(long)]
        test_data: Option<PathBuf>,
        #[arg(long)]
        plot_data: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Directory for the four checkpoints.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Finite-difference check of every tape operation and the networks.
    Gradcheck,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let settings = Settings::resolve(cli.common.config.as_deref(), cli.common.overrides())?;
    eprintln!("# seed {}; effective config:", settings.seed()?);
    eprintln!("{}", settings.to_json());
    commands::dispatch(cli.command, &settings)
}
