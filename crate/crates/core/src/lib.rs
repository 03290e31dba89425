pub mod backtest;
pub mod changepoint;
pub mod detector;
pub mod evaluation;
pub mod fitter;
pub mod model;
pub mod series;
pub mod synthetic;
