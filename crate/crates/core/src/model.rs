//! First-order log-periodic power law (LPPL) in its linearised form
//!
//! ```text
//! f(x) = A + x^m [ B + C1 cos(ω ln x) + C2 sin(ω ln x) ]
//! ```
//!
//! where `x` is the distance in days to the critical time. The critical time
//! is always "now", so a window of `l_max` days is evaluated on the integer
//! grid `x = l_max, l_max - 1, ..., 1` (oldest sample first).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::series::TimeSeries;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("LPPL argument must be positive, got {0}")]
    Domain(f64),
    #[error("window has {actual} points but l_max is {expected}")]
    Shape { expected: usize, actual: usize },
    #[error("log transform needs positive values, got {0}")]
    NonPositive(f64),
}

/// Parameters of the linearised LPPL.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LpplParams {
    pub l_max: usize,
    pub a: f64,
    pub b: f64,
    pub m: f64,
    pub c1: f64,
    pub c2: f64,
    pub omega: f64,
}

impl LpplParams {
    /// Builds parameters from the phase form `C cos(ω ln x + Φ)`.
    pub fn from_phase(l_max: usize, a: f64, b: f64, m: f64, c: f64, phi: f64, omega: f64) -> Self {
        Self {
            l_max,
            a,
            b,
            m,
            c1: c * phi.cos(),
            c2: -c * phi.sin(),
            omega,
        }
    }

    /// `(C, Φ)` of the phase form, with `Φ` in `(-π, π]`.
    pub fn amplitude_phase(&self) -> (f64, f64) {
        (self.c1.hypot(self.c2), (-self.c2).atan2(self.c1))
    }

    /// Unchecked evaluation; `x` must be positive.
    #[inline]
    pub fn value_at(&self, x: f64) -> f64 {
        let lx = x.ln();
        let (s, c) = (self.omega * lx).sin_cos();
        self.a + (self.m * lx).exp() * (self.b + self.c1 * c + self.c2 * s)
    }

    /// Same parameters with the level and all amplitudes negated.
    pub fn negated(&self) -> Self {
        Self {
            a: -self.a,
            b: -self.b,
            c1: -self.c1,
            c2: -self.c2,
            ..*self
        }
    }
}

/// Observation transform applied before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    /// Natural logarithm; the fitted quantity is `ln p(t)`.
    #[default]
    Log,
    Identity,
}

impl Transform {
    pub fn apply(self, value: f64) -> Result<f64, ModelError> {
        match self {
            Transform::Log if value > 0.0 => Ok(value.ln()),
            Transform::Log => Err(ModelError::NonPositive(value)),
            Transform::Identity => Ok(value),
        }
    }

    pub fn invert(self, value: f64) -> f64 {
        match self {
            Transform::Log => value.exp(),
            Transform::Identity => value,
        }
    }

    /// Transformed values of a window, oldest first.
    pub fn observations(self, win: &TimeSeries) -> Result<Vec<f64>, ModelError> {
        win.points().iter().map(|p| self.apply(p.value)).collect()
    }
}

impl std::str::FromStr for Transform {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "log" => Ok(Self::Log),
            "identity" => Ok(Self::Identity),
            other => Err(format!("unknown transform {other:?} (expected log or identity)")),
        }
    }
}

pub fn eval_lppl(params: &LpplParams, x: f64) -> Result<f64, ModelError> {
    if !(x > 0.0) {
        return Err(ModelError::Domain(x));
    }
    Ok(params.value_at(x))
}

/// The fitted curve on the window grid, oldest sample (`x = l_max`) first.
pub fn curve(params: &LpplParams) -> Vec<f64> {
    (1..=params.l_max).rev().map(|x| params.value_at(x as f64)).collect()
}

/// Mean squared residual of already-transformed observations (oldest first).
pub fn mse_of_observations(params: &LpplParams, obs: &[f64]) -> Result<f64, ModelError> {
    if obs.len() != params.l_max {
        return Err(ModelError::Shape {
            expected: params.l_max,
            actual: obs.len(),
        });
    }
    if obs.is_empty() {
        return Ok(0.0);
    }
    let n = obs.len();
    let sse: f64 = obs
        .iter()
        .enumerate()
        .map(|(i, y)| {
            let r = y - params.value_at((n - i) as f64);
            r * r
        })
        .sum();
    Ok(sse / n as f64)
}

pub fn fit_mse(params: &LpplParams, win: &TimeSeries, transform: Transform) -> Result<f64, ModelError> {
    if win.len() != params.l_max {
        return Err(ModelError::Shape {
            expected: params.l_max,
            actual: win.len(),
        });
    }
    mse_of_observations(params, &transform.observations(win)?)
}
