//! `lppl-pm`: initial-breakdown detection from the command line.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lppl_pm::backtest::BacktestConfig;
use lppl_pm::detector::Thresholds;
use lppl_pm::fitter::{FitConstraints, TieBreak};
use lppl_pm::model::Transform;
use lppl_pm::series::GapPolicy;

mod commands;
mod error;

use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "lppl-pm", version, about = "Initial-breakdown detection with log-periodic power law fits")]
pub(crate) struct Cli {
    /// Master seed for every random start.
    #[arg(long, global = true, env = "LPPL_PM_SEED", default_value_t = 0)]
    pub(crate) seed: u64,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub(crate) jobs: usize,
    #[command(subcommand)]
    pub(crate) command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Walk forward through a series and report initial-breakdown alerts.
    Backtest(BacktestArgs),
    /// Fit a single "now" and print the best parameters.
    Fit(FitArgs),
    /// Generate a synthetic series with an injected breakdown.
    Synth(SynthArgs),
    /// Run the left/right changepoint baseline.
    Baseline(BaselineArgs),
    /// Score alerts against maintenance and expert logs.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, Args)]
pub(crate) struct InputArgs {
    /// `date,value` CSV with ISO dates.
    #[arg(long, short)]
    pub(crate) input: PathBuf,
    /// Handling of missing days: reject, forward_fill or linear_interp.
    #[arg(long, default_value = "reject")]
    pub(crate) gap_policy: GapPolicy,
}

#[derive(Debug, Clone, Args)]
pub(crate) struct FitOptions {
    /// Observation transform: log or identity.
    #[arg(long, default_value = "log")]
    pub(crate) transform: Transform,
    /// Shortest window in days.
    #[arg(long, default_value_t = 31)]
    pub(crate) l_min: usize,
    /// Longest window in days.
    #[arg(long, default_value_t = 100)]
    pub(crate) l_max: usize,
    /// Lower bound of the open m interval.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub(crate) m_min: f64,
    /// Upper bound of the open m interval.
    #[arg(long, default_value_t = 1.0)]
    pub(crate) m_max: f64,
    /// Lower bound of the open omega interval.
    #[arg(long, default_value_t = 2.0)]
    pub(crate) omega_min: f64,
    /// Upper bound of the open omega interval.
    #[arg(long, default_value_t = 8.0)]
    pub(crate) omega_max: f64,
    /// Allow a non-positive level A.
    #[arg(long)]
    pub(crate) allow_negative_a: bool,
    /// Random starts per window length.
    #[arg(long, default_value_t = 20)]
    pub(crate) n_starts: usize,
    /// Iteration cap of each local search.
    #[arg(long, default_value_t = 200)]
    pub(crate) max_iters: usize,
    /// mse difference under which window lengths count as tied.
    #[arg(long, default_value = "1e-12")]
    pub(crate) tie_tolerance: f64,
    /// Resolve ties toward the shorter window instead of the longer one.
    #[arg(long)]
    pub(crate) prefer_shorter: bool,
}

impl FitOptions {
    pub(crate) fn constraints(&self, seed: u64) -> FitConstraints {
        FitConstraints {
            m_range: (self.m_min, self.m_max),
            omega_range: (self.omega_min, self.omega_max),
            l_range: (self.l_min, self.l_max),
            a_positive: !self.allow_negative_a,
            n_starts: self.n_starts,
            max_iters: self.max_iters,
            seed,
            tie_tolerance: self.tie_tolerance,
            tie_break: if self.prefer_shorter { TieBreak::PreferShorter } else { TieBreak::PreferLonger },
        }
    }
}

#[derive(Debug, Clone, Args)]
pub(crate) struct AlertOptions {
    /// mse below which an alert is critical.
    #[arg(long, default_value = "6e-5")]
    pub(crate) critical: f64,
    /// mse below which an alert is worth monitoring.
    #[arg(long, default_value = "1e-4")]
    pub(crate) monitoring: f64,
    /// Days of horizon for the predicted failure window.
    #[arg(long, default_value_t = 90)]
    pub(crate) horizon: i64,
}

#[derive(Debug, Args)]
pub(crate) struct BacktestArgs {
    #[command(flatten)]
    pub(crate) input: InputArgs,
    #[command(flatten)]
    pub(crate) fit: FitOptions,
    #[command(flatten)]
    pub(crate) alerts: AlertOptions,
    /// Alerts at most this many days apart are merged.
    #[arg(long, default_value_t = 3)]
    pub(crate) gap: i64,
    /// Points needed before the first evaluated day.
    #[arg(long, default_value_t = 101)]
    pub(crate) min_history: usize,
    /// Directory for alerts.json, fits.csv and plot.csv.
    #[arg(long, short, default_value = ".")]
    pub(crate) out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub(crate) struct FitArgs {
    #[command(flatten)]
    pub(crate) input: InputArgs,
    #[command(flatten)]
    pub(crate) fit: FitOptions,
    #[command(flatten)]
    pub(crate) alerts: AlertOptions,
    /// Day treated as "now" (defaults to the last day).
    #[arg(long)]
    pub(crate) end_date: Option<String>,
    /// Print JSON instead of key=value pairs.
    #[arg(long)]
    pub(crate) json: bool,
}

#[derive(Debug, Args)]
pub(crate) struct SynthArgs {
    /// Output CSV.
    #[arg(long, short)]
    pub(crate) out: PathBuf,
    /// Ground-truth JSON (defaults to the output path with `.truth.json`).
    #[arg(long)]
    pub(crate) truth: Option<PathBuf>,
    /// Days in the LPPL segment.
    #[arg(long, default_value_t = 70)]
    pub(crate) length: usize,
    #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
    pub(crate) a: f64,
    #[arg(long, default_value_t = 0.012, allow_negative_numbers = true)]
    pub(crate) b: f64,
    #[arg(long, default_value_t = 0.5)]
    pub(crate) m: f64,
    #[arg(long, default_value_t = 0.004, allow_negative_numbers = true)]
    pub(crate) c1: f64,
    #[arg(long, default_value_t = 0.003, allow_negative_numbers = true)]
    pub(crate) c2: f64,
    #[arg(long, default_value_t = 6.0)]
    pub(crate) omega: f64,
    /// Noise standard deviation in the transformed domain.
    #[arg(long, default_value_t = 1e-3)]
    pub(crate) noise: f64,
    /// Days of flat noise before the segment.
    #[arg(long, default_value_t = 150)]
    pub(crate) prefix: usize,
    /// Noise of the prefix (defaults to --noise).
    #[arg(long)]
    pub(crate) prefix_noise: Option<f64>,
    /// First date of the series.
    #[arg(long, default_value = "2020-01-01")]
    pub(crate) start: String,
    /// Domain in which the curve and noise live: log or identity.
    #[arg(long, default_value = "log")]
    pub(crate) transform: Transform,
}

#[derive(Debug, Args)]
pub(crate) struct BaselineArgs {
    #[command(flatten)]
    pub(crate) input: InputArgs,
    /// Output CSV `date,direction,statistic`.
    #[arg(long, short)]
    pub(crate) out: PathBuf,
    /// Percentile of past excursion peaks used as the trigger level.
    #[arg(long, default_value_t = 75.0)]
    pub(crate) percentile: f64,
    /// Fixed trigger level instead of the percentile rule.
    #[arg(long)]
    pub(crate) threshold: Option<f64>,
    /// Transform applied before detection: log or identity.
    #[arg(long, default_value = "identity")]
    pub(crate) transform: Transform,
    /// Negate the (transformed) series first.
    #[arg(long)]
    pub(crate) negate: bool,
}

#[derive(Debug, Args)]
pub(crate) struct EvaluateArgs {
    /// alerts.json as written by `backtest`.
    #[arg(long)]
    pub(crate) alerts: PathBuf,
    /// Ground-truth CSV `kind,start,end,diagnosis,note`.
    #[arg(long)]
    pub(crate) events: PathBuf,
    /// Write the per-alert labels as JSON.
    #[arg(long)]
    pub(crate) labels_out: Option<PathBuf>,
}

impl BacktestArgs {
    pub(crate) fn config(&self, seed: u64) -> BacktestConfig {
        BacktestConfig {
            constraints: self.fit.constraints(seed),
            transform: self.fit.transform,
            thresholds: Thresholds {
                critical: self.alerts.critical,
                monitoring: self.alerts.monitoring,
            },
            gap: self.gap,
            horizon: self.alerts.horizon,
            min_history: self.min_history,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let seed = cli.seed;
    pool.install(|| match cli.command {
        Command::Backtest(args) => commands::backtest(&args, seed),
        Command::Fit(args) => commands::fit(&args, seed),
        Command::Synth(args) => commands::synth(&args, seed),
        Command::Baseline(args) => commands::baseline(&args),
        Command::Evaluate(args) => commands::evaluate(&args),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
