mod commands;
mod config;
mod evaluate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use survkit::SurvError;

/// Fit, predict, evaluate and simulate survival models.
#[derive(Parser, Debug)]
#[command(name = "survkit", version)]
struct Cli {
    /// Output directory (falls back to $SURVKIT_OUT_DIR, then ./survkit-out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model and write model.json, loss_trace.csv and manifest.json.
    Fit(FitArgs),
    /// Write predicted curves for each row of an input CSV.
    Predict(PredictArgs),
    /// Score a saved model on labelled data and write metrics.json.
    Evaluate(EvaluateArgs),
    /// Draw a synthetic dataset with a known oracle.
    Simulate(SimulateArgs),
    /// Write the survival-stacked classification table for a dataset.
    Stack(StackArgs),
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// JSON run config, or a manifest.json from an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// exponential, weibull, neural-weibull, deepsurv, cox-time, deephit,
    /// nnet-survival, dksa, kernet, soden or cr-deephit.
    #[arg(long)]
    pub model: Option<String>,
    /// Number of competing event types in the data.
    #[arg(long)]
    pub events: Option<u32>,
    #[arg(long)]
    pub time_col: Option<String>,
    #[arg(long)]
    pub event_col: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Hidden layer widths, e.g. `32,32`.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// unique-deaths, uniform, log-uniform or quantile.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub grid_size: Option<usize>,
    /// Linear score for the Cox-type models.
    #[arg(long)]
    pub linear: bool,
    /// Generic, ph, aft-g, eh, weibull or exponential (SODEN only).
    #[arg(long)]
    pub encoder: Option<String>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub model_file: PathBuf,
    /// CSV of feature rows; `time` and `event` columns are ignored if present.
    #[arg(long)]
    pub inputs: PathBuf,
    /// Comma-separated prediction times; defaults to the model's own grid.
    #[arg(long, value_delimiter = ',')]
    pub times: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model_file: PathBuf,
    /// Labelled evaluation data.
    #[arg(long)]
    pub data: PathBuf,
    /// Training labels, needed for censoring weights and imputation.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Held-out calibration data for the conformal band.
    #[arg(long)]
    pub calib: Option<PathBuf>,
    #[arg(long)]
    pub events: Option<u32>,
    #[arg(long)]
    pub cindex: bool,
    /// Antolini's time-dependent concordance.
    #[arg(long)]
    pub ctd: bool,
    #[arg(long, value_delimiter = ',')]
    pub uno_ctd: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub auc: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub brier: Option<Vec<f64>>,
    #[arg(long)]
    pub ibs: bool,
    #[arg(long)]
    pub dcal: bool,
    /// MAE with censored targets imputed by hinge, margin or po.
    #[arg(long)]
    pub mae: Option<String>,
    /// Miscoverage level α of the conformal band.
    #[arg(long)]
    pub conformal: Option<f64>,
    #[arg(long)]
    pub all: bool,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// JSON scenario; when given the flags below are ignored.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// exponential-ph, weibull-ph, two-cluster or competing-exponential.
    #[arg(long, default_value = "exponential-ph")]
    pub family: String,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub beta: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub psi: f64,
    #[arg(long, default_value_t = 1.0)]
    pub shape: f64,
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    pub rates: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    /// none, exponential or uniform.
    #[arg(long, default_value = "none")]
    pub censoring: String,
    #[arg(long, default_value_t = 0.5)]
    pub censor_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    pub censor_a: f64,
    #[arg(long, default_value_t = 2.0)]
    pub censor_b: f64,
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct StackArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Explicit grid times; overrides `--grid`.
    #[arg(long, value_delimiter = ',')]
    pub times: Option<Vec<f64>>,
    #[arg(long, default_value = "unique-deaths")]
    pub grid: String,
    #[arg(long)]
    pub grid_size: Option<usize>,
}

fn exit_code(e: &SurvError) -> u8 {
    if e.is_numerical() {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = config::out_dir(cli.out).and_then(|out| match cli.command {
        Command::Fit(a) => commands::fit(&a, &out),
        Command::Predict(a) => commands::predict(&a, &out),
        Command::Evaluate(a) => evaluate::run(&a, &out),
        Command::Simulate(a) => commands::simulate(&a, &out),
        Command::Stack(a) => commands::stack(&a, &out),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
