use std::process::ExitCode;

use lppl_pm::backtest::BacktestError;
use lppl_pm::changepoint::ChangepointError;
use lppl_pm::evaluation::EvaluationError;
use lppl_pm::fitter::FitError;
use lppl_pm::model::ModelError;
use lppl_pm::series::SeriesError;
use lppl_pm::synthetic::SynthError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    NoFeasibleFit(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(1),
            CliError::Data(_) => ExitCode::from(2),
            CliError::NoFeasibleFit(_) => ExitCode::from(3),
        }
    }

    pub fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<SeriesError> for CliError {
    fn from(e: SeriesError) -> Self {
        match e {
            SeriesError::Range { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        match e {
            FitError::NoFeasibleFit | FitError::DegenerateBasis { .. } => CliError::NoFeasibleFit(e.to_string()),
            FitError::InsufficientHistory { .. } | FitError::Model(_) => CliError::Data(e.to_string()),
            FitError::WindowLength { .. } | FitError::InvalidConstraints(_) => CliError::Usage(e.to_string()),
        }
    }
}

impl From<BacktestError> for CliError {
    fn from(e: BacktestError) -> Self {
        match e {
            BacktestError::Fit(f) => f.into(),
            BacktestError::NoFeasibleFit => CliError::NoFeasibleFit(e.to_string()),
            BacktestError::InsufficientHistory { .. } => CliError::Data(e.to_string()),
            BacktestError::Config(_) | BacktestError::Detector(_) => CliError::Usage(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<ChangepointError> for CliError {
    fn from(e: ChangepointError) -> Self {
        match e {
            ChangepointError::Percentile(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvaluationError> for CliError {
    fn from(e: EvaluationError) -> Self {
        CliError::Data(e.to_string())
    }
}
