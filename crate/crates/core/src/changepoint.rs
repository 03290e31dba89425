//! Online trend-change baseline: a pair of one-sided CUSUM detectors.
//!
//! The right detector accumulates upward deviations from the running mean
//! since its last reset, the left one downward deviations. A detector fires
//! when its statistic reaches the current threshold and then starts over.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::series::{iso_date, Ordinal, TimeSeries};

#[derive(Debug, Error, PartialEq)]
pub enum ChangepointError {
    #[error("value {0} is not finite")]
    NonFinite(f64),
    #[error("{dates} dates for {values} values")]
    Length { dates: usize, values: usize },
    #[error("percentile must lie in [0, 100], got {0}")]
    Percentile(f64),
    #[error("series is empty")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Decreasing shifts.
    Left,
    /// Increasing shifts.
    Right,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Left => "left",
            Direction::Right => "right",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ThresholdPolicy {
    /// Percentile (0..=100) of the peaks of the detector's past excursions
    /// (runs of positive statistic). No detection fires before `min_history`
    /// excursions have been seen.
    Percentile { percentile: f64, min_history: usize },
    Fixed(f64),
}

impl ThresholdPolicy {
    pub fn percentile(percentile: f64) -> Self {
        ThresholdPolicy::Percentile {
            percentile,
            min_history: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(with = "iso_date")]
    pub date: Ordinal,
    pub direction: Direction,
    pub statistic: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorState {
    pub direction: Direction,
    pub statistic: f64,
    /// Mean of the samples since the last reset.
    pub baseline_estimate: f64,
    /// Samples since the last reset.
    pub samples_seen: usize,
    /// Threshold in force for the next sample, if one is defined yet.
    pub threshold: Option<f64>,
    policy: ThresholdPolicy,
    /// Peaks of finished excursions, kept sorted for percentile lookups.
    history: Vec<f64>,
    /// Largest statistic of the excursion in progress.
    peak: f64,
    // Welford accumulators over every sample, never reset.
    total: usize,
    total_mean: f64,
    total_m2: f64,
}

impl DetectorState {
    pub fn new(direction: Direction, policy: ThresholdPolicy) -> Self {
        let mut state = Self {
            direction,
            statistic: 0.0,
            baseline_estimate: 0.0,
            samples_seen: 0,
            threshold: None,
            policy,
            history: Vec::new(),
            peak: 0.0,
            total: 0,
            total_mean: 0.0,
            total_m2: 0.0,
        };
        state.threshold = state.current_threshold();
        state
    }

    /// Sample standard deviation of everything seen so far.
    pub fn sigma(&self) -> f64 {
        if self.total < 2 {
            0.0
        } else {
            (self.total_m2 / (self.total - 1) as f64).sqrt()
        }
    }

    fn current_threshold(&self) -> Option<f64> {
        match self.policy {
            ThresholdPolicy::Fixed(t) => Some(t),
            ThresholdPolicy::Percentile { percentile, min_history } => {
                (self.history.len() >= min_history.max(1)).then(|| percentile_of_sorted(&self.history, percentile))
            }
        }
    }
}

/// Linearly interpolated percentile of sorted data.
fn percentile_of_sorted(sorted: &[f64], percentile: f64) -> f64 {
    let rank = percentile / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

/// Feeds one sample to a detector.
pub fn detector_update(
    state: &mut DetectorState,
    date: Ordinal,
    x: f64,
) -> Result<Option<Detection>, ChangepointError> {
    if !x.is_finite() {
        return Err(ChangepointError::NonFinite(x));
    }
    state.total += 1;
    let d = x - state.total_mean;
    state.total_mean += d / state.total as f64;
    state.total_m2 += d * (x - state.total_mean);
    let k = 0.5 * state.sigma();

    if state.samples_seen > 0 {
        let deviation = match state.direction {
            Direction::Right => x - state.baseline_estimate,
            Direction::Left => state.baseline_estimate - x,
        };
        state.statistic = (state.statistic + deviation - k).max(0.0);
    }
    state.samples_seen += 1;
    state.baseline_estimate += (x - state.baseline_estimate) / state.samples_seen as f64;

    let fired = state.statistic > 0.0 && state.threshold.is_some_and(|t| state.statistic >= t);
    let detection = fired.then(|| Detection {
        date,
        direction: state.direction,
        statistic: state.statistic,
    });

    state.peak = state.peak.max(state.statistic);
    if fired || (state.statistic == 0.0 && state.peak > 0.0) {
        let pos = state.history.partition_point(|v| *v < state.peak);
        state.history.insert(pos, state.peak);
        state.peak = 0.0;
    }
    if fired {
        // The triggering sample opens the new segment.
        state.statistic = 0.0;
        state.baseline_estimate = x;
        state.samples_seen = 1;
    }
    state.threshold = state.current_threshold();
    Ok(detection)
}

/// Runs one detector over a whole stream.
pub fn run_detector(
    direction: Direction,
    dates: &[Ordinal],
    values: &[f64],
    policy: ThresholdPolicy,
) -> Result<Vec<Detection>, ChangepointError> {
    if dates.len() != values.len() {
        return Err(ChangepointError::Length {
            dates: dates.len(),
            values: values.len(),
        });
    }
    let mut state = DetectorState::new(direction, policy);
    let mut out = Vec::new();
    for (&date, &x) in dates.iter().zip(values) {
        out.extend(detector_update(&mut state, date, x)?);
    }
    Ok(out)
}

/// Left and right detections over arbitrary real values (negatives allowed).
pub fn run_dual_detectors_on(
    dates: &[Ordinal],
    values: &[f64],
    policy: ThresholdPolicy,
) -> Result<(Vec<Detection>, Vec<Detection>), ChangepointError> {
    if values.is_empty() {
        return Err(ChangepointError::Empty);
    }
    if let ThresholdPolicy::Percentile { percentile, .. } = policy {
        if !(0.0..=100.0).contains(&percentile) {
            return Err(ChangepointError::Percentile(percentile));
        }
    }
    let (left, right) = rayon::join(
        || run_detector(Direction::Left, dates, values, policy),
        || run_detector(Direction::Right, dates, values, policy),
    );
    Ok((left?, right?))
}

pub fn run_dual_detectors(
    series: &TimeSeries,
    threshold_percentile: f64,
) -> Result<(Vec<Detection>, Vec<Detection>), ChangepointError> {
    run_dual_detectors_on(
        &series.dates(),
        &series.values(),
        ThresholdPolicy::percentile(threshold_percentile),
    )
}

/// Left then right detections merged in date order (left first on equal dates).
pub fn merge_detections(left: &[Detection], right: &[Detection]) -> Vec<Detection> {
    let mut all: Vec<Detection> = left.iter().chain(right).cloned().collect();
    all.sort_by_key(|d| (d.date, d.direction == Direction::Right));
    all
}

pub fn write_detections<W: std::io::Write>(detections: &[Detection], writer: W) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["date", "direction", "statistic"])?;
    for d in detections {
        wtr.write_record([crate::series::from_ordinal(d.date), d.direction.as_str().to_string(), d.statistic.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}
