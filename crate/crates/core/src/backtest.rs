//! Walk-forward replay of the detector.
//!
//! Every candidate "now" is fitted from the data up to and including that day
//! only. Days are independent, so they run in parallel and are merged back in
//! date order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{
    classify, failure_window, group_alerts, is_ib_point, predict_root_cause, DetectorError, IbAlert, IbDecision,
    Thresholds,
};
use crate::fitter::{fit_best, FitConstraints, FitError, FitResult};
use crate::model::Transform;
use crate::series::{iso_date, Ordinal, TimeSeries};

#[derive(Debug, Error, PartialEq)]
pub enum BacktestError {
    #[error("series has {len} points, at least {min_history} needed")]
    InsufficientHistory { len: usize, min_history: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no day produced a feasible fit")]
    NoFeasibleFit,
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestConfig {
    pub constraints: FitConstraints,
    pub transform: Transform,
    pub thresholds: Thresholds,
    /// Alerts at most this many days apart are merged.
    pub gap: i64,
    pub horizon: i64,
    /// Points required before the first evaluated day (that day included).
    pub min_history: usize,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            constraints: FitConstraints::default(),
            transform: Transform::Log,
            thresholds: Thresholds::default(),
            gap: 3,
            horizon: 90,
            min_history: 101,
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<(), BacktestError> {
        self.constraints.validate()?;
        Thresholds::new(self.thresholds.critical, self.thresholds.monitoring)?;
        let l_max = self.constraints.l_range.1;
        if self.min_history < l_max + 1 {
            return Err(BacktestError::Config(format!(
                "min_history {} must be at least l_max + 1 = {}",
                self.min_history,
                l_max + 1
            )));
        }
        if self.horizon <= (l_max / 2) as i64 {
            return Err(BacktestError::Config(format!(
                "horizon {} must exceed half the longest window ({})",
                self.horizon,
                l_max / 2
            )));
        }
        if self.gap < 0 {
            return Err(BacktestError::Config("gap must be non-negative".into()));
        }
        Ok(())
    }
}

/// Outcome of one evaluated day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayFit {
    #[serde(with = "iso_date")]
    pub date: Ordinal,
    /// `None` when no window length gave a feasible fit.
    pub fit: Option<FitResult>,
    pub decision: Option<IbDecision>,
}

impl DayFit {
    pub fn is_ib(&self) -> bool {
        self.decision.is_some_and(|d| d.is_ib())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub raw_alerts: Vec<IbAlert>,
    pub grouped_alerts: Vec<IbAlert>,
    pub fits: Vec<DayFit>,
}

fn evaluate_day(series: &TimeSeries, end_index: usize, config: &BacktestConfig) -> Result<DayFit, BacktestError> {
    let date = series.points()[end_index].date;
    match fit_best(series, end_index, &config.constraints, config.transform) {
        Ok(fit) => Ok(DayFit {
            date,
            decision: Some(is_ib_point(&fit)),
            fit: Some(fit),
        }),
        Err(FitError::NoFeasibleFit) => Ok(DayFit {
            date,
            fit: None,
            decision: None,
        }),
        Err(e) => Err(e.into()),
    }
}

fn alert_for(day: &DayFit, config: &BacktestConfig) -> Result<Option<IbAlert>, BacktestError> {
    let (Some(fit), Some(IbDecision::Ib(sign))) = (&day.fit, day.decision) else {
        return Ok(None);
    };
    Ok(Some(IbAlert {
        date: day.date,
        mse: fit.mse,
        l_max: fit.params.l_max,
        class: classify(fit.mse, &config.thresholds),
        failure_window: failure_window(day.date, fit.params.l_max, config.horizon)?,
        root_cause: predict_root_cause(sign),
        group_id: 0,
        group_size: 1,
        params: Some(fit.params),
    }))
}

/// Evaluates every day from index `min_history - 1` to the end of the series.
pub fn run_backtest(series: &TimeSeries, config: &BacktestConfig) -> Result<BacktestReport, BacktestError> {
    config.validate()?;
    if series.len() < config.min_history {
        return Err(BacktestError::InsufficientHistory {
            len: series.len(),
            min_history: config.min_history,
        });
    }
    let fits: Vec<DayFit> = (config.min_history - 1..series.len())
        .into_par_iter()
        .map(|end_index| evaluate_day(series, end_index, config))
        .collect::<Result<_, _>>()?;
    if fits.iter().all(|d| d.fit.is_none()) {
        return Err(BacktestError::NoFeasibleFit);
    }

    let mut raw_alerts = Vec::new();
    for day in &fits {
        if let Some(mut alert) = alert_for(day, config)? {
            alert.group_id = raw_alerts.len();
            raw_alerts.push(alert);
        }
    }
    let grouped_alerts = group_alerts(&raw_alerts, config.gap, &config.thresholds)?;
    Ok(BacktestReport {
        raw_alerts,
        grouped_alerts,
        fits,
    })
}
