//! Directional tail dependence between return series.
//!
//! The crate standardises margins to a balanced Pareto(2) scale, estimates
//! extremal dependence (EDM) and directional tail dependence (DTD) between
//! pairs, tests a whole market for dependence between extreme moves and
//! later returns, and evaluates the resulting signals out of sample.

pub mod angular;
pub mod backtest;
pub mod error;
pub mod inference;
pub mod margins;
pub mod par;
pub mod quantile;
pub mod seed;
pub mod simulate;
pub mod synthetic;
pub mod timeseries;

pub use error::{Error, Result};
