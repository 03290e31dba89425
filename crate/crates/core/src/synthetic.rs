//! Hazard-rate solutions, the degradation path they induce, and seeded LPPL
//! series with a known initial-breakdown day.
//!
//! The hazard obeys `dh/dt = G h^δ`. For `δ > 1` it diverges at the critical
//! time `tc`, and the integrated degradation `P(t) = -∫ h du` is a pure power
//! law in `tc - t`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{LpplParams, Transform};
use crate::series::{iso_date, Ordinal, SeriesError, TimeSeries};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("t={t} is outside the domain of the hazard solution")]
    Domain { t: f64 },
    #[error("delta=2 makes the degradation exponent singular")]
    SingularExponent,
    #[error("degradation path needs delta > 1, got {0}")]
    NotCritical(f64),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("generated value {0} is not positive")]
    NonPositive(f64),
}

impl From<SeriesError> for SynthError {
    fn from(e: SeriesError) -> Self {
        SynthError::InvalidParams(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HazardParams {
    pub delta: f64,
    pub g: f64,
    /// `h(t0)`; only the exponential branch depends on it.
    pub h0: f64,
    pub t0: f64,
    pub tc: f64,
}

impl HazardParams {
    fn validate(&self) -> Result<(), SynthError> {
        if !(self.g >= 0.0 && self.g.is_finite()) {
            return Err(SynthError::InvalidParams(format!("G must be non-negative, got {}", self.g)));
        }
        if !(self.h0 > 0.0) {
            return Err(SynthError::InvalidParams(format!("h0 must be positive, got {}", self.h0)));
        }
        if !self.delta.is_finite() {
            return Err(SynthError::InvalidParams(format!("delta must be finite, got {}", self.delta)));
        }
        Ok(())
    }

    /// `η = 1 / (1 - δ)`.
    pub fn eta(&self) -> f64 {
        1.0 / (1.0 - self.delta)
    }

    /// Coefficient `k` of the critical branch written as `h(t) = k (tc - t)^η`.
    pub fn critical_prefactor(&self) -> f64 {
        ((self.delta - 1.0) * self.g).powf(self.eta())
    }
}

/// Closed-form hazard rate at time `t` for all three regimes of `δ`.
pub fn hazard(hp: &HazardParams, t: f64) -> Result<f64, SynthError> {
    hp.validate()?;
    let d = hp.delta;
    if d == 1.0 {
        Ok(hp.h0 * (hp.g * (t - hp.t0)).exp())
    } else if d < 1.0 {
        if t < hp.t0 {
            return Err(SynthError::Domain { t });
        }
        Ok(((1.0 - d) * (t - hp.t0) * hp.g).powf(hp.eta()))
    } else {
        if !(t < hp.tc) {
            return Err(SynthError::Domain { t });
        }
        Ok(((d - 1.0) * (hp.tc - t) * hp.g).powf(hp.eta()))
    }
}

/// `P(t) = -∫_{t0}^{t} h(u) du` for the critical branch, in closed form.
///
/// The integrand is the `δ > 1` hazard, so the coefficient in front of
/// `(tc - t)^(η+1)` is [`HazardParams::critical_prefactor`] over `η + 1`.
pub fn degradation_path(hp: &HazardParams, times: &[f64]) -> Result<Vec<f64>, SynthError> {
    hp.validate()?;
    if hp.delta == 2.0 {
        return Err(SynthError::SingularExponent);
    }
    if !(hp.delta > 1.0) {
        return Err(SynthError::NotCritical(hp.delta));
    }
    if !(hp.t0 < hp.tc) {
        return Err(SynthError::Domain { t: hp.t0 });
    }
    let e1 = hp.eta() + 1.0;
    let coef = hp.critical_prefactor() / e1;
    let offset = coef * (hp.tc - hp.t0).powf(e1);
    times
        .iter()
        .map(|&t| {
            if t < hp.tc {
                Ok(coef * (hp.tc - t).powf(e1) - offset)
            } else {
                Err(SynthError::Domain { t })
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub params: LpplParams,
    /// Gaussian noise added to the (transformed) LPPL segment.
    pub noise_sigma: f64,
    /// Days in the LPPL segment, evaluated at `x = length, ..., 1`.
    pub length: usize,
    pub seed: u64,
    /// Days of flat noise before the segment.
    pub prefix: usize,
    /// Noise of the prefix; defaults to `noise_sigma`.
    pub prefix_sigma: Option<f64>,
    #[serde(with = "iso_date")]
    pub start: Ordinal,
    pub transform: Transform,
}

impl SynthSpec {
    pub fn new(params: LpplParams, noise_sigma: f64, seed: u64) -> Self {
        Self {
            params,
            noise_sigma,
            length: params.l_max,
            seed,
            prefix: 0,
            prefix_sigma: None,
            start: 737_425, // 2020-01-01
            transform: Transform::Log,
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        let sigma_ok = |s: f64| s >= 0.0 && s.is_finite();
        if !sigma_ok(self.noise_sigma) || !self.prefix_sigma.is_none_or(sigma_ok) {
            return Err(SynthError::InvalidParams("noise sigma must be finite and non-negative".into()));
        }
        if self.params.l_max == 0 || self.length < self.params.l_max {
            return Err(SynthError::InvalidParams(format!(
                "segment length {} shorter than l_max {}",
                self.length, self.params.l_max
            )));
        }
        Ok(())
    }
}

/// Sidecar describing what was injected into a synthetic series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    #[serde(with = "iso_date")]
    pub ib_day: Ordinal,
    pub ib_index: usize,
    pub params: LpplParams,
    pub seed: u64,
}

/// Series of `prefix + length` days ending on the injected IB day.
///
/// The prefix hovers at the segment's initial level. Noise enters in the
/// transformed domain, so with the log transform the fitted quantity is the
/// curve plus Gaussian noise.
pub fn gen_lppl_series(spec: &SynthSpec) -> Result<(TimeSeries, GroundTruth), SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = |s: f64| Normal::new(0.0, s).map_err(|e| SynthError::InvalidParams(e.to_string()));
    let prefix_noise = normal(spec.prefix_sigma.unwrap_or(spec.noise_sigma))?;
    let noise = normal(spec.noise_sigma)?;

    let level = spec.params.value_at(spec.length as f64);
    let mut transformed: Vec<f64> = (0..spec.prefix).map(|_| level + prefix_noise.sample(&mut rng)).collect();
    transformed.extend((1..=spec.length).rev().map(|x| spec.params.value_at(x as f64) + noise.sample(&mut rng)));
    let values = transformed
        .into_iter()
        .map(|v| {
            let y = spec.transform.invert(v);
            if y > 0.0 && y.is_finite() {
                Ok(y)
            } else {
                Err(SynthError::NonPositive(y))
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let series = TimeSeries::from_values(spec.start, &values)?;
    let ib_index = series.len() - 1;
    Ok((
        series,
        GroundTruth {
            ib_day: spec.start + ib_index as i64,
            ib_index,
            params: spec.params,
            seed: spec.seed,
        },
    ))
}
