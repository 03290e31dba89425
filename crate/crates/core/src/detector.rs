//! Initial-breakdown (IB) decision and alert post-processing.
//!
//! A fit marks an IB point when the local maxima and the local minima of the
//! fitted curve trend in the same direction. The series is then expected to
//! reverse that direction, which in turn points at the failing component.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fitter::FitResult;
use crate::model::{curve, LpplParams};
use crate::series::{iso_date, Ordinal};

#[derive(Debug, Error, PartialEq)]
pub enum DetectorError {
    #[error("need more than two extrema for a trend, got {0}")]
    InsufficientExtrema(usize),
    #[error("horizon {horizon} does not exceed half the window ({half})")]
    InvalidWindow { horizon: i64, half: i64 },
    #[error("window length must be at least 2, got {0}")]
    WindowTooShort(usize),
    #[error("alerts are not in chronological order at position {0}")]
    Order(usize),
    #[error("thresholds must satisfy 0 <= critical < monitoring, got ({0}, {1})")]
    Thresholds(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extremum {
    /// Chronological sample index within the window (0 = oldest).
    pub index: usize,
    pub value: f64,
}

/// Strict interior local maxima and minima, in chronological order.
///
/// Plateaus are not extrema and the two endpoints are never reported.
pub fn find_extrema(samples: &[f64]) -> (Vec<Extremum>, Vec<Extremum>) {
    let mut maxima = Vec::new();
    let mut minima = Vec::new();
    for (i, w) in samples.windows(3).enumerate() {
        let (prev, v, next) = (w[0], w[1], w[2]);
        let e = Extremum { index: i + 1, value: v };
        if v > prev && v > next {
            maxima.push(e);
        } else if v < prev && v < next {
            minima.push(e);
        }
    }
    (maxima, minima)
}

/// OLS slope (value per day) over all but the oldest extremum.
pub fn trend_slope(extrema: &[Extremum]) -> Result<f64, DetectorError> {
    if extrema.len() <= 2 {
        return Err(DetectorError::InsufficientExtrema(extrema.len()));
    }
    let mut pts = extrema.to_vec();
    pts.sort_by_key(|e| e.index);
    let recent = &pts[1..];
    let n = recent.len() as f64;
    let mean_x = recent.iter().map(|e| e.index as f64).sum::<f64>() / n;
    let mean_y = recent.iter().map(|e| e.value).sum::<f64>() / n;
    let (sxy, sxx) = recent.iter().fold((0.0, 0.0), |(sxy, sxx), e| {
        let dx = e.index as f64 - mean_x;
        (sxy + dx * (e.value - mean_y), sxx + dx * dx)
    });
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtremaTrends {
    pub n_max: usize,
    pub n_min: usize,
    /// Defined only when `n_max > 2`.
    pub max_slope: Option<f64>,
    /// Defined only when `n_min > 2`.
    pub min_slope: Option<f64>,
}

impl ExtremaTrends {
    pub fn from_samples(samples: &[f64]) -> Self {
        let (maxima, minima) = find_extrema(samples);
        Self {
            n_max: maxima.len(),
            n_min: minima.len(),
            max_slope: trend_slope(&maxima).ok(),
            min_slope: trend_slope(&minima).ok(),
        }
    }

    pub fn from_params(params: &LpplParams) -> Self {
        Self::from_samples(&curve(params))
    }
}

/// Direction of a trend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendSign {
    Rising,
    Falling,
}

impl TrendSign {
    pub fn opposite(self) -> Self {
        match self {
            TrendSign::Rising => TrendSign::Falling,
            TrendSign::Falling => TrendSign::Rising,
        }
    }

    fn of(slope: f64) -> Option<Self> {
        if slope > 0.0 {
            Some(TrendSign::Rising)
        } else if slope < 0.0 {
            Some(TrendSign::Falling)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NotIbReason {
    InsufficientMaxima,
    InsufficientMinima,
    OppositeTrends,
    FlatTrend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IbDecision {
    /// Both extrema trends share this direction; the series should reverse it.
    Ib(TrendSign),
    NotIb(NotIbReason),
}

impl IbDecision {
    pub fn is_ib(&self) -> bool {
        matches!(self, IbDecision::Ib(_))
    }
}

pub fn decide(trends: &ExtremaTrends) -> IbDecision {
    if trends.n_max <= 2 {
        return IbDecision::NotIb(NotIbReason::InsufficientMaxima);
    }
    if trends.n_min <= 2 {
        return IbDecision::NotIb(NotIbReason::InsufficientMinima);
    }
    let (Some(max_slope), Some(min_slope)) = (trends.max_slope, trends.min_slope) else {
        return IbDecision::NotIb(NotIbReason::FlatTrend);
    };
    match (TrendSign::of(max_slope), TrendSign::of(min_slope)) {
        (Some(a), Some(b)) if a == b => IbDecision::Ib(a),
        (Some(_), Some(_)) => IbDecision::NotIb(NotIbReason::OppositeTrends),
        _ => IbDecision::NotIb(NotIbReason::FlatTrend),
    }
}

pub fn is_ib_point(fit: &FitResult) -> IbDecision {
    decide(&ExtremaTrends::from_params(&fit.params))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventClass {
    Critical,
    Monitoring,
    Irrelevant,
}

/// mse cut-offs between the alert classes.
///
/// The defaults were tuned on log-scale valve-opening data and do not carry
/// over to other signals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub critical: f64,
    pub monitoring: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            critical: 6e-5,
            monitoring: 10e-5,
        }
    }
}

impl Thresholds {
    pub fn new(critical: f64, monitoring: f64) -> Result<Self, DetectorError> {
        if !(critical >= 0.0 && critical < monitoring) {
            return Err(DetectorError::Thresholds(critical, monitoring));
        }
        Ok(Self { critical, monitoring })
    }
}

pub fn classify(mse: f64, thresholds: &Thresholds) -> EventClass {
    if mse < thresholds.critical {
        EventClass::Critical
    } else if mse < thresholds.monitoring {
        EventClass::Monitoring
    } else {
        EventClass::Irrelevant
    }
}

/// Interval of days in which the predicted failure should materialise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureWindow {
    #[serde(with = "iso_date")]
    pub start: Ordinal,
    #[serde(with = "iso_date")]
    pub end: Ordinal,
}

impl FailureWindow {
    pub fn contains(&self, day: Ordinal) -> bool {
        (self.start..=self.end).contains(&day)
    }

    /// Whether the closed interval `[from, to]` shares at least one day.
    pub fn overlaps(&self, from: Ordinal, to: Ordinal) -> bool {
        from <= self.end && to >= self.start
    }
}

pub fn failure_window(n: Ordinal, l_max: usize, horizon: i64) -> Result<FailureWindow, DetectorError> {
    if l_max < 2 {
        return Err(DetectorError::WindowTooShort(l_max));
    }
    let half = (l_max / 2) as i64;
    if horizon <= half {
        return Err(DetectorError::InvalidWindow { horizon, half });
    }
    Ok(FailureWindow {
        start: n + half,
        end: n + horizon,
    })
}

/// Component group implicated by the predicted post-IB trend of the
/// suction-valve opening angle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RootCause {
    /// Predicted falling angle: suction valve or piston-rod sealing.
    SuctionValveOrSealing,
    /// Predicted rising angle: discharge-valve leak.
    DischargeValve,
}

/// `common_sign` is the pre-IB trend; the prediction uses its reversal.
pub fn predict_root_cause(common_sign: TrendSign) -> RootCause {
    match common_sign.opposite() {
        TrendSign::Falling => RootCause::SuctionValveOrSealing,
        TrendSign::Rising => RootCause::DischargeValve,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IbAlert {
    #[serde(with = "iso_date")]
    pub date: Ordinal,
    pub mse: f64,
    pub l_max: usize,
    pub class: EventClass,
    pub failure_window: FailureWindow,
    pub root_cause: RootCause,
    pub group_id: usize,
    #[serde(default = "one")]
    pub group_size: usize,
    /// Fitted parameters behind a raw alert.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<LpplParams>,
}

fn one() -> usize {
    1
}

/// Merges runs of alerts no more than `gap` days apart.
///
/// Each group is represented by its first alert, carrying the mean mse of the
/// group and a class re-derived from that mean.
pub fn group_alerts(alerts: &[IbAlert], gap: i64, thresholds: &Thresholds) -> Result<Vec<IbAlert>, DetectorError> {
    if let Some(pos) = alerts.windows(2).position(|w| w[1].date < w[0].date) {
        return Err(DetectorError::Order(pos + 1));
    }
    let mut groups: Vec<(IbAlert, f64, usize)> = Vec::new();
    let mut last_date = None;
    for alert in alerts {
        match (groups.last_mut(), last_date) {
            (Some((_, sum, count)), Some(prev)) if alert.date - prev <= gap => {
                *sum += alert.mse * alert.group_size as f64;
                *count += alert.group_size;
            }
            _ => groups.push((alert.clone(), alert.mse * alert.group_size as f64, alert.group_size)),
        }
        last_date = Some(alert.date);
    }
    Ok(groups
        .into_iter()
        .enumerate()
        .map(|(id, (first, sum, count))| {
            let mse = if count == first.group_size { first.mse } else { sum / count as f64 };
            IbAlert {
                mse,
                class: classify(mse, thresholds),
                group_id: id,
                group_size: count,
                ..first
            }
        })
        .collect())
}
